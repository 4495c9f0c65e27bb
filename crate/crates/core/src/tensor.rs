//! Dense row-major tensors and the forward kernels the model needs.
//!
//! Kernels are deliberately naive and single-threaded. Every reduction runs
//! sequentially in index order so results are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Checked constructor: the shape must cover the data and every value
    /// must be finite.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_raw(shape, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(t)
    }

    /// Shape-checked constructor that accepts non-finite values.
    pub fn from_raw(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut RngState) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.normal() * std))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all axes but the last.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.len() / self.cols().max(1)
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64c())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    /// Adds `other` in place.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "transpose needs a matrix, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        Ok(Self::from_fn(&[n, m], |idx| {
            let (j, i) = (idx / m, idx % m);
            self.data[i * n + j]
        }))
    }
}

fn matrix_dims<T>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::Shape(format!("{what} must be a matrix, got {s:?}"))),
    }
}

/// `a[m,k] · b[k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a, "lhs")?;
    let (k2, n) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions {k} and {k2} differ"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm_acc(&a.data, &b.data, &mut out.data, m, k, n);
    Ok(out)
}

/// `c[m,n] += a[m,k] · b[k,n]`.
pub fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        T::gemm(m, k, n, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, c.as_mut_ptr(), n as isize, 1);
    }
}

/// `c[k,n] += aᵀ · g` where `a` is `[m,k]` and `g` is `[m,n]`.
pub fn gemm_tn_acc<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && g.len() == m * n && c.len() == k * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        T::gemm(k, m, n, a.as_ptr(), 1, k as isize, g.as_ptr(), n as isize, 1, c.as_mut_ptr(), n as isize, 1);
    }
}

/// `c[m,k] += g · bᵀ` where `g` is `[m,n]` and `b` is `[k,n]`.
pub fn gemm_nt_acc<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    assert!(g.len() == m * n && b.len() == k * n && c.len() == m * k);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above; `c` is a unique borrow.
    unsafe {
        T::gemm(m, n, k, g.as_ptr(), n as isize, 1, b.as_ptr(), 1, n as isize, c.as_mut_ptr(), k as isize, 1);
    }
}

/// Read-only strided view of a matrix inside a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

/// Mutable strided view of a matrix inside a slice.
pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

fn in_bounds(len: usize, offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || offset + (rows - 1) * rs + (cols - 1) * cs < len
}

/// `c += a · b` for strided `a[m,k]`, `b[k,n]`, `c[m,n]`.
pub fn gemm_strided<T: Scalar>(m: usize, k: usize, n: usize, a: MatRef<T>, b: MatRef<T>, c: MatMut<T>) {
    assert!(in_bounds(a.data.len(), a.offset, m, k, a.rs, a.cs));
    assert!(in_bounds(b.data.len(), b.offset, k, n, b.rs, b.cs));
    assert!(in_bounds(c.data.len(), c.offset, m, n, c.rs, c.cs));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: every reachable index was bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// One causal attention head.
///
/// `q` holds `nq` query rows at absolute positions `start..start + nq`;
/// `k` and `v` hold `nk` rows from position 0. On return `probs[r*nk + j]`
/// is the attention weight of query `r` on key `j` (zero for `j` past the
/// query) and `out` has `probs · v` added to it.
#[allow(clippy::too_many_arguments)]
pub fn attention_head<T: Scalar>(
    q: MatRef<T>,
    k: MatRef<T>,
    v: MatRef<T>,
    nq: usize,
    nk: usize,
    dh: usize,
    start: usize,
    probs: &mut [T],
    out: MatMut<T>,
) {
    assert!(start + nq <= nk && probs.len() == nq * nk);
    probs.fill(T::zero());
    let kt = MatRef {
        rs: k.cs,
        cs: k.rs,
        ..k
    };
    gemm_strided(nq, dh, nk, q, kt, MatMut { data: &mut *probs, offset: 0, rs: nk, cs: 1 });
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for (r, row) in probs.chunks_exact_mut(nk).enumerate() {
        let valid = start + r + 1;
        for s in row[..valid].iter_mut() {
            *s *= scale;
        }
        softmax_in_place(&mut row[..valid]);
        row[valid..].fill(T::zero());
    }
    gemm_strided(nq, nk, dh, MatRef { data: &*probs, offset: 0, rs: nk, cs: 1 }, v, out);
}

/// `c[n] += a[k] · b[k,n]` for a single row, without packing. Used by
/// incremental decoding, where the row-at-a-time cost dominates.
pub fn gemv_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T]) {
    let n = c.len();
    assert!(n > 0 && b.len() == a.len() * n);
    for (&x, br) in a.iter().zip(b.chunks_exact(n)) {
        for (cv, &bv) in c.iter_mut().zip(br) {
            *cv += x * bv;
        }
    }
}

/// [`attention_head`] for one query row that sees every cached key. `q`,
/// `k`, `v` and `out` must have unit column stride and `probs` one entry
/// per key.
pub fn attention_single_query<T: Scalar>(q: MatRef<T>, k: MatRef<T>, v: MatRef<T>, dh: usize, probs: &mut [T], out: MatMut<T>) {
    assert!(q.cs == 1 && k.cs == 1 && v.cs == 1 && out.cs == 1);
    let qr = &q.data[q.offset..q.offset + dh];
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for (s, p) in probs.iter_mut().enumerate() {
        let kr = &k.data[k.offset + s * k.rs..k.offset + s * k.rs + dh];
        *p = dot(qr, kr) * scale;
    }
    softmax_in_place(probs);
    let o = &mut out.data[out.offset..out.offset + dh];
    for (s, &p) in probs.iter().enumerate() {
        let vr = &v.data[v.offset + s * v.rs..v.offset + s * v.rs + dh];
        for (ov, &x) in o.iter_mut().zip(vr) {
            *ov += p * x;
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// In-place max-subtracted softmax of one contiguous slice.
pub fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    let mut max = T::neg_infinity();
    for &v in x.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let rank = x.shape.len();
    if axis >= rank {
        return Err(Error::Shape(format!("axis {axis} out of range for rank {rank}")));
    }
    let n = x.shape[axis];
    if n == 0 {
        return Err(Error::Shape("softmax over an empty axis".into()));
    }
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut out = x.clone();
    let mut lane = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (j, l) in lane.iter_mut().enumerate() {
                *l = x.data[base + j * inner];
            }
            softmax_in_place(&mut lane);
            for (j, &l) in lane.iter().enumerate() {
                out.data[base + j * inner] = l;
            }
        }
    }
    Ok(out)
}

/// Per-row statistics kept by layer norm for the backward pass.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer norm over the last axis, returning the row statistics as well.
pub fn layer_norm_with_stats<T: Scalar>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape(format!(
            "layer norm over {d} features with gain {} and bias {}",
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.rows();
    let mut out = Tensor::zeros(&x.shape);
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for r in 0..rows {
        let (mean, rstd) = layer_norm_row(x.row(r), gain, bias, eps, out.row_mut(r));
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((out, stats))
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &[T], bias: &[T], eps: T) -> Result<Tensor<T>> {
    layer_norm_with_stats(x, gain, bias, eps).map(|(y, _)| y)
}

/// Normalizes one row into `out`; returns (mean, 1/std).
pub fn layer_norm_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) -> (T, T) {
    let d = T::lit(x.len() as f64);
    let mut mean = T::zero();
    for &v in x {
        mean += v;
    }
    mean /= d;
    let mut var = T::zero();
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var /= d;
    let rstd = T::one() / (var + eps).sqrt();
    for (((o, &v), &g), &b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = (v - mean) * rstd * g + b;
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    // 0.5·x·(1 + tanh(u)) written as x·σ(2u).
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    x / (T::one() + (-(u + u)).exp())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let u = c * (x + a * x * x * x);
    let s = T::one() / (T::one() + (-(u + u)).exp());
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    s + x * s * (T::one() - s) * (du + du)
}

/// Mean cross-entropy of `logits[t,V]` against `targets` over the unmasked
/// rows (`mask[i] == true` keeps row `i`). Returns the loss and the softmax
/// probabilities of every row.
pub fn cross_entropy_with_probs<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    mask: Option<&[bool]>,
) -> Result<(T, Tensor<T>, usize)> {
    let (t, v) = matrix_dims(logits, "logits")?;
    if targets.len() != t {
        return Err(Error::Shape(format!("{} targets for {t} rows", targets.len())));
    }
    if let Some(m) = mask {
        if m.len() != t {
            return Err(Error::Shape(format!("{} mask entries for {t} rows", m.len())));
        }
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
        return Err(Error::UnknownToken {
            id: bad,
            vocab_size: v,
        });
    }
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let count = (0..t).filter(|&i| keep(i)).count();
    if count == 0 {
        return Err(Error::Invalid("cross-entropy with every position masked".into()));
    }
    let mut probs = logits.clone();
    // Accumulate the loss in f64 so the mean does not depend on row count.
    let mut total = 0.0f64;
    for i in 0..t {
        let row = probs.row_mut(i);
        let mut max = T::neg_infinity();
        for &x in row.iter() {
            if x > max {
                max = x;
            }
        }
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        if keep(i) {
            let logit = logits.row(i)[targets[i]];
            total += (max + sum.ln() - logit).to_f64c();
        }
        let inv = T::one() / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    Ok((T::lit(total / count as f64), probs, count))
}

pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize], mask: Option<&[bool]>) -> Result<T> {
    cross_entropy_with_probs(logits, targets, mask).map(|(l, _, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_shape_and_nan() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::<f32>::new(&[1], vec![f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::<f32>::from_raw(&[1], vec![f32::INFINITY]).is_ok());
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        assert_eq!(matmul(&Tensor::eye(3), &a).unwrap(), a);
    }

    #[test]
    fn single_row_kernels_agree_with_gemm() {
        let mut rng = crate::rng::RngState::new(5);
        let (k, n, dh, nk) = (6, 5, 4, 7);
        let a: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let (mut c1, mut c2) = (vec![0.5; n], vec![0.5; n]);
        gemm_acc(&a, &b, &mut c1, 1, k, n);
        gemv_acc(&a, &b, &mut c2);
        for (x, y) in c1.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }

        let q: Vec<f64> = (0..dh).map(|_| rng.normal()).collect();
        let kv: Vec<f64> = (0..nk * dh).map(|_| rng.normal()).collect();
        let vv: Vec<f64> = (0..nk * dh).map(|_| rng.normal()).collect();
        let (mut o1, mut o2) = (vec![0.0; dh], vec![0.0; dh]);
        let (mut p1, mut p2) = (vec![0.0; nk], vec![0.0; nk]);
        attention_head(
            MatRef { data: &q, offset: 0, rs: dh, cs: 1 },
            MatRef { data: &kv, offset: 0, rs: dh, cs: 1 },
            MatRef { data: &vv, offset: 0, rs: dh, cs: 1 },
            1,
            nk,
            dh,
            nk - 1,
            &mut p1,
            MatMut { data: &mut o1, offset: 0, rs: dh, cs: 1 },
        );
        attention_single_query(
            MatRef { data: &q, offset: 0, rs: dh, cs: 1 },
            MatRef { data: &kv, offset: 0, rs: dh, cs: 1 },
            MatRef { data: &vv, offset: 0, rs: dh, cs: 1 },
            dh,
            &mut p2,
            MatMut { data: &mut o2, offset: 0, rs: dh, cs: 1 },
        );
        for (x, y) in o1.iter().zip(&o2).chain(p1.iter().zip(&p2)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_matmul() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[0., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(11);
        let a = Tensor::<f32>::randn(&[8, 8], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[8, 8], 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0f64;
                for p in 0..8 {
                    s += a.data()[i * 8 + p] as f64 * b.data()[p * 8 + j] as f64;
                }
                assert!((c.data()[i * 8 + j] as f64 - s).abs() < 1e-5, "({i},{j})");
            }
        }
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let mut rng = RngState::new(5);
        let a = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let g = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let mut c = vec![0.0; 15];
        gemm_tn_acc(a.data(), g.data(), &mut c, 4, 3, 5);
        let expect = matmul(&a.transpose().unwrap(), &g).unwrap();
        for (x, y) in c.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let b = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        let mut c2 = vec![0.0; 12];
        gemm_nt_acc(g.data(), b.data(), &mut c2, 4, 5, 3);
        let expect2 = matmul(&g, &b.transpose().unwrap()).unwrap();
        for (x, y) in c2.iter().zip(expect2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_and_overflow() {
        let s = softmax(&Tensor::<f32>::zeros(&[3]), 0).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let s = softmax(&Tensor::<f32>::new(&[2], vec![1000.0, 0.0]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_matches_f64_oracle() {
        let x = [0.3f32, -1.2, 2.5, 0.0, 0.7];
        let s = softmax(&Tensor::new(&[5], x.to_vec()).unwrap(), 0).unwrap();
        let z: f64 = x.iter().map(|&v| (v as f64).exp()).sum();
        for (i, &v) in x.iter().enumerate() {
            assert!((s.data()[i] as f64 - (v as f64).exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_non_last_axis() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let s = softmax(&x, 0).unwrap();
        for j in 0..3 {
            let col = s.data()[j] + s.data()[3 + j];
            assert!((col - 1.0).abs() < 1e-12);
            assert!(s.data()[3 + j] > s.data()[j]);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = [1.0f64; 4];
        let zeros = [0.0f64; 4];
        let y = layer_norm(&t(&[1, 4], &[5., 5., 5., 5.]), &ones, &zeros, LN_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = layer_norm(&t(&[1, 2], &[1., -1.]), &ones[..2], &zeros[..2], LN_EPS).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4);
        assert!((y.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let x = [0.5f64, -2.0, 3.25, 1.0, 0.0];
        let g = [1.5, 0.5, 1.0, -1.0, 2.0];
        let b = [0.1, 0.2, 0.3, 0.4, 0.5];
        let y = layer_norm(&t(&[1, 5], &x), &g, &b, LN_EPS).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        for i in 0..5 {
            let e = (x[i] - mean) / (var + LN_EPS).sqrt() * g[i] + b[i];
            assert!((y.data()[i] - e).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let logits = t(&[1, 4], &[0.0; 4]);
        let l = cross_entropy(&logits, &[2], None).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let logits = t(&[1, 3], &[50.0, 0.0, 0.0]);
        assert!(cross_entropy(&logits, &[0], None).unwrap() < 1e-12);
        assert!(cross_entropy(&logits, &[0], Some(&[false])).is_err());
        assert!(matches!(
            cross_entropy(&logits, &[3], None),
            Err(Error::UnknownToken { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_composed_oracle() {
        let logits = t(&[3, 4], &[0.1, 0.5, -0.3, 2.0, 1.0, 1.0, 0.0, -1.0, 3.0, 0.2, 0.1, 0.0]);
        let targets = [3, 0, 2];
        let mask = [true, false, true];
        let l = cross_entropy(&logits, &targets, Some(&mask)).unwrap();
        let mut total = 0.0;
        for i in [0usize, 2] {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total -= (row[targets[i]].exp() / z).ln();
        }
        assert!((l - total / 2.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.2] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
