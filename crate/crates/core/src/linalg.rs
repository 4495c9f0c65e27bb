//! Small dense symmetric linear algebra in f64.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending
/// order. Column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<Eigen> {
    if !m.is_square() {
        return Err(Error::Shape(format!("eigen-decomposition of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = m.nrows();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Eigen {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    })
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Principal square root of a positive semi-definite matrix; negative
/// eigenvalues from round-off are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_square() {
        let asym = (m - m.transpose()).abs().max();
        if asym > SYMMETRY_TOLERANCE * m.abs().max().max(1.0) {
            return Err(Error::Invalid(format!("matrix is not symmetric (max |m - mᵀ| = {asym:e})")));
        }
    }
    let e = symmetric_eigen(m)?;
    let roots = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        e.values.len(),
        e.values.iter().map(|&v| v.max(0.0).sqrt()),
    ));
    Ok(&e.vectors * roots * e.vectors.transpose())
}

/// Row-major `n x d` data to its mean and (population) covariance.
pub fn mean_and_covariance(rows: &[Vec<f64>], ddof: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n <= ddof {
        return Err(Error::Degenerate(format!("{n} rows cannot give a covariance")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged rows".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let ci = r[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n - ddof) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}
