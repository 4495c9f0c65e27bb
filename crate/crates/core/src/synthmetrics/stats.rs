//! Gaussian fits of feature distributions and the Fréchet distance between
//! them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{mean_and_covariance, psd_sqrt, symmetric_eigen};

use super::spectral::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Stats from explicit moments; the covariance is projected onto the
    /// PSD cone.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Shape(format!(
                "mean of length {d} with a {}x{} covariance",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(Self {
            mean,
            covariance: psd_project(&covariance)?,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = symmetric_eigen(m)?;
    if e.values.iter().all(|&v| v >= 0.0) {
        return Ok((m + m.transpose()) * 0.5);
    }
    let clipped = DMatrix::from_diagonal(&DVector::from_iterator(
        e.values.len(),
        e.values.iter().map(|&v| v.max(0.0)),
    ));
    let p = &e.vectors * clipped * e.vectors.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

/// Sample mean and unbiased covariance of arbitrary rows; needs more rows
/// than dimensions.
pub fn gaussian_stats_rows(rows: &[Vec<f64>]) -> Result<GaussianStats> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.len() <= d || d == 0 {
        return Err(Error::Degenerate(format!(
            "{} samples of dimension {d}; need more samples than dimensions",
            rows.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature rows".into()));
    }
    let (mean, cov) = mean_and_covariance(rows, 1)?;
    GaussianStats::new(mean, cov, rows.len())
}

pub fn gaussian_stats(features: &[FeatureVector]) -> Result<GaussianStats> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    if rows.is_empty() {
        return Err(Error::Degenerate("no feature vectors".into()));
    }
    gaussian_stats_rows(&rows)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "Fréchet distance between dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let ra = psd_sqrt(&a.covariance)?;
    let inner = &ra * &b.covariance * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner)?;
    let trace = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace).max(0.0))
}
