//! Geometry of steering vectors and activations: cosine similarity across
//! layers, joint PCA of two caches and a 2-D kernel density estimate.

use crate::error::{Error, Result};
use crate::linalg::{mean_and_covariance, symmetric_eigen};
use crate::scalar::Scalar;

use super::{ActivationCache, SteeringVectorSet};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `cos(Δ[i], Δ[j])` for all layer pairs (0-based indices into the matrix).
pub fn cosine_similarity_matrix<T: Scalar>(set: &SteeringVectorSet<T>) -> Result<Vec<Vec<f64>>> {
    let vs: Vec<Vec<f64>> = set
        .delta
        .iter()
        .map(|v| v.iter().map(|x| x.to_f64c()).collect())
        .collect();
    let norms: Vec<f64> = vs.iter().map(|v| norm(v)).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroVector(i + 1));
    }
    let l = vs.len();
    let mut m = vec![vec![0.0; l]; l];
    for i in 0..l {
        m[i][i] = 1.0;
        for j in i + 1..l {
            let d: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            let c = (d / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// Points of both caches projected onto the top principal components of
/// their pooled covariance.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub layer: usize,
    pub mean: Vec<f64>,
    /// `components[c]` is a unit vector of length d_model.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance (n − 1 denominator), descending.
    pub eigenvalues: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

/// Joint PCA of two caches at one layer. `k` may not exceed the largest
/// rank the data could have, `min(n − 1, d_model)`.
pub fn pca_project<T: Scalar>(
    a: &ActivationCache<T>,
    b: &ActivationCache<T>,
    layer: usize,
    k: usize,
) -> Result<PcaProjection> {
    if layer == 0 || layer > a.num_layers || layer > b.num_layers {
        return Err(Error::Invalid(format!("layer {layer} outside the caches")));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for cache in [a, b] {
        for v in cache.layer(layer) {
            rows.push(v.iter().map(|x| x.to_f64c()).collect::<Vec<f64>>());
            labels.push(cache.set_name.clone());
        }
    }
    pca_rows(&rows, labels, layer, k)
}

/// PCA of arbitrary row vectors.
pub fn pca_rows(rows: &[Vec<f64>], labels: Vec<String>, layer: usize, k: usize) -> Result<PcaProjection> {
    if rows.len() < 3 {
        return Err(Error::Invalid(format!("PCA needs at least 3 points, got {}", rows.len())));
    }
    let d = rows[0].len();
    let max_rank = (rows.len() - 1).min(d);
    if k == 0 || k > max_rank {
        return Err(Error::Invalid(format!("k = {k} exceeds the attainable rank {max_rank}")));
    }
    let (mean, cov) = mean_and_covariance(rows, 1)?;
    let eig = symmetric_eigen(&cov)?;
    let components: Vec<Vec<f64>> = (0..k).map(|c| eig.vectors.column(c).iter().copied().collect()).collect();
    let points = rows
        .iter()
        .map(|r| {
            components
                .iter()
                .map(|c| c.iter().zip(r).zip(&mean).map(|((ci, x), m)| ci * (x - m)).sum())
                .collect()
        })
        .collect();
    Ok(PcaProjection {
        layer,
        mean,
        components,
        eigenvalues: eig.values,
        points,
        labels,
    })
}

/// Density on a regular grid of cell centres, `values[iy][ix]`.
#[derive(Debug, Clone)]
pub struct KdeGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub bandwidth: [f64; 2],
}

impl KdeGrid {
    pub fn cell_area(&self) -> f64 {
        let dx = if self.xs.len() > 1 { self.xs[1] - self.xs[0] } else { 0.0 };
        let dy = if self.ys.len() > 1 { self.ys[1] - self.ys[0] } else { 0.0 };
        dx * dy
    }

    /// Riemann-sum integral over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().flatten().sum::<f64>() * self.cell_area()
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for (iy, row) in self.values.iter().enumerate() {
            for (ix, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = (ix, iy);
                }
            }
        }
        best
    }
}

/// Scott's-rule bandwidths `σ · n^(−1/6)` per axis.
pub fn scott_bandwidth(points: &[[f64; 2]]) -> Result<[f64; 2]> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!("KDE needs at least 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mut h = [0.0; 2];
    for (axis, hv) in h.iter_mut().enumerate() {
        let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12) {
            return Err(Error::Degenerate(format!("zero variance on KDE axis {axis}")));
        }
        *hv = sd * n.powf(-1.0 / 6.0);
    }
    Ok(h)
}

/// Bounds covering the data plus `pad` bandwidths on each side.
pub fn kde_bounds(points: &[[f64; 2]], pad: f64) -> Result<[[f64; 2]; 2]> {
    let h = scott_bandwidth(points)?;
    let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for p in points {
        for axis in 0..2 {
            b[axis][0] = b[axis][0].min(p[axis]);
            b[axis][1] = b[axis][1].max(p[axis]);
        }
    }
    for axis in 0..2 {
        b[axis][0] -= pad * h[axis];
        b[axis][1] += pad * h[axis];
    }
    Ok(b)
}

/// Gaussian product-kernel density with Scott's-rule bandwidths, evaluated
/// at the centres of a `grid_size x grid_size` grid over `bounds`
/// (`[[x_lo, x_hi], [y_lo, y_hi]]`).
pub fn kde_2d(points: &[[f64; 2]], bounds: [[f64; 2]; 2], grid_size: usize) -> Result<KdeGrid> {
    let h = scott_bandwidth(points)?;
    if grid_size == 0 || !(bounds[0][1] > bounds[0][0]) || !(bounds[1][1] > bounds[1][0]) {
        return Err(Error::Invalid("KDE grid must be non-empty with increasing bounds".into()));
    }
    let centres = |[lo, hi]: [f64; 2]| -> Vec<f64> {
        let step = (hi - lo) / grid_size as f64;
        (0..grid_size).map(|i| lo + (i as f64 + 0.5) * step).collect()
    };
    let xs = centres(bounds[0]);
    let ys = centres(bounds[1]);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h[0] * h[1] * points.len() as f64);
    let values = ys
        .iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let s: f64 = points
                        .iter()
                        .map(|p| {
                            let u = (x - p[0]) / h[0];
                            let v = (y - p[1]) / h[1];
                            (-0.5 * (u * u + v * v)).exp()
                        })
                        .sum();
                    s * norm
                })
                .collect()
        })
        .collect();
    Ok(KdeGrid {
        xs,
        ys,
        values,
        bandwidth: h,
    })
}

/// The first two coordinates of each projected point, grouped by label in
/// order of first appearance.
pub fn split_points(p: &PcaProjection) -> Vec<(String, Vec<[f64; 2]>)> {
    let mut out: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    for (pt, label) in p.points.iter().zip(&p.labels) {
        let xy = [pt[0], pt.get(1).copied().unwrap_or(0.0)];
        match out.iter_mut().find(|(l, _)| l == label) {
            Some((_, v)) => v.push(xy),
            None => out.push((label.clone(), vec![xy])),
        }
    }
    out
}
