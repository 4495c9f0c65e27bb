//! Tape-based reverse-mode differentiation over the handful of coarse ops
//! the transformer is built from.
//!
//! A [`Tape`] records each op's output and whatever the backward rule needs
//! (softmax probabilities, layer-norm statistics). [`Tape::backward`] walks
//! the tape in reverse and accumulates parameter gradients into a
//! [`ParamStore`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    self, cross_entropy_with_probs, gelu, gelu_grad, gemm_nt_acc, gemm_strided, gemm_tn_acc, MatMut, MatRef, NormStats,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Global L2 norm of all gradients, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for p in &self.params {
            for &g in p.grad.data() {
                let g = g.to_f64c();
                s += g * g;
            }
        }
        s.sqrt()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }
}

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: NormStats<T>,
    },
    Gelu(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        if bv.len() != xv.cols() {
            return Err(Error::Shape(format!(
                "row bias of {} for {} columns",
                bv.len(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let bias = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    /// `x·w + b` for `x[m,k]`, `w[k,n]`, `b[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (out, stats) = tensor::layer_norm_with_stats(
            self.value(x),
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        )?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Row lookup `table[ids[i]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::UnknownToken { id, vocab_size: v });
            }
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Multi-head causal self-attention over packed `qkv[batch*seq, 3d]`
    /// (query, key, value blocks side by side); returns `[batch*seq, d]`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let qv = self.value(qkv);
        if qv.rows() != batch * seq || qv.cols() % (3 * heads) != 0 {
            return Err(Error::Shape(format!(
                "attention input {:?} for batch {batch}, seq {seq}, heads {heads}",
                qv.shape()
            )));
        }
        let d = qv.cols() / 3;
        let dh = d / heads;
        let stride = 3 * d;
        let mut out = Tensor::zeros(&[batch * seq, d]);
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let data = qv.data();
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * stride + h * dh;
                let view = |offset| MatRef {
                    data,
                    offset,
                    rs: stride,
                    cs: 1,
                };
                let pb = (b * heads + h) * seq * seq;
                tensor::attention_head(
                    view(base),
                    view(base + d),
                    view(base + 2 * d),
                    seq,
                    seq,
                    dh,
                    0,
                    &mut probs[pb..pb + seq * seq],
                    MatMut {
                        data: out.data_mut(),
                        offset: b * seq * d + h * dh,
                        rs: d,
                        cs: 1,
                    },
                );
            }
        }
        Ok(self.push(
            out,
            Op::CausalAttention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
        ))
    }

    /// Mean masked cross-entropy; the result is a one-element tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (loss, probs, count) = cross_entropy_with_probs(self.value(logits), targets, Some(mask))?;
        Ok(self.push(
            Tensor::full(&[1], loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&[1], T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    let ga = slot(&mut grads, *a, av.shape());
                    gemm_nt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                    let gb = slot(&mut grads, *b, bv.shape());
                    gemm_tn_acc(av.data(), g.data(), gb.data_mut(), m, k, n);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    slot(&mut grads, *b, g.shape()).add_assign(&g);
                }
                Op::AddRow(x, b) => {
                    slot(&mut grads, *x, g.shape()).add_assign(&g);
                    let bshape = self.value(*b).shape().to_vec();
                    let gb = slot(&mut grads, *b, &bshape);
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    stats,
                } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).data().to_vec();
                    let d = xv.cols();
                    let inv_d = T::one() / T::lit(d as f64);
                    let mut dgain = vec![T::zero(); d];
                    let mut dbias = vec![T::zero(); d];
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut xhat = vec![T::zero(); d];
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..xv.rows() {
                        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
                        let grow = g.row(r);
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for j in 0..d {
                            xhat[j] = (xv.row(r)[j] - mean) * rstd;
                            dxhat[j] = grow[j] * gv[j];
                            dgain[j] += grow[j] * xhat[j];
                            dbias[j] += grow[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat[j];
                        }
                        let mean_dxhat = sum_dxhat * inv_d;
                        let mean_dxhat_xhat = sum_dxhat_xhat * inv_d;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                    slot(&mut grads, *x, xv.shape()).add_assign(&dx);
                    accumulate_vec(slot(&mut grads, *gain, &[d]), &dgain);
                    accumulate_vec(slot(&mut grads, *bias, &[d]), &dbias);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = slot(&mut grads, *x, xv.shape());
                    for ((o, &xi), &gi) in gx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        *o += gi * gelu_grad(xi);
                    }
                }
                Op::Embed { table, ids } => {
                    let shape = self.value(*table).shape().to_vec();
                    let gt = slot(&mut grads, *table, &shape);
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::CausalAttention {
                    qkv,
                    batch,
                    seq,
                    heads,
                    probs,
                } => {
                    let qv = self.value(*qkv);
                    let gq = attention_backward(qv, &g, probs, *batch, *seq, *heads);
                    slot(&mut grads, *qkv, qv.shape()).add_assign(&gq);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let scale = g.data()[0] / T::lit(*count as f64);
                    let shape = probs.shape().to_vec();
                    let gl = slot(&mut grads, *logits, &shape);
                    for (i, &y) in targets.iter().enumerate() {
                        if !mask[i] {
                            continue;
                        }
                        let prow = probs.row(i);
                        let grow = gl.row_mut(i);
                        for (o, &p) in grow.iter_mut().zip(prow) {
                            *o += p * scale;
                        }
                        grow[y] -= scale;
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate_vec<T: Scalar>(t: &mut Tensor<T>, v: &[T]) {
    for (o, &x) in t.data_mut().iter_mut().zip(v) {
        *o += x;
    }
}

fn attention_backward<T: Scalar>(
    qkv: &Tensor<T>,
    g: &Tensor<T>,
    probs: &[T],
    batch: usize,
    seq: usize,
    heads: usize,
) -> Tensor<T> {
    let d = qkv.cols() / 3;
    let dh = d / heads;
    let stride = 3 * d;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let data = qkv.data();
    let gd = g.data();
    let mut out = Tensor::zeros(qkv.shape());
    let mut dp = vec![T::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let base = b * seq * stride + h * dh;
            let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
            let go = MatRef {
                data: gd,
                offset: b * seq * d + h * dh,
                rs: d,
                cs: 1,
            };
            let rows = |offset| MatRef {
                data,
                offset,
                rs: stride,
                cs: 1,
            };
            let cols = |offset| MatRef {
                data,
                offset,
                rs: 1,
                cs: stride,
            };
            // dP = dO · Vᵀ
            dp.fill(T::zero());
            gemm_strided(seq, dh, seq, go, cols(base + 2 * d), MatMut { data: &mut dp, offset: 0, rs: seq, cs: 1 });
            // dV += Pᵀ · dO
            let pt = MatRef {
                data: p,
                offset: 0,
                rs: 1,
                cs: seq,
            };
            gemm_strided(seq, seq, dh, pt, go, MatMut { data: out.data_mut(), offset: base + 2 * d, rs: stride, cs: 1 });
            // dS = P ∘ (dP − rowsum(P ∘ dP)), scaled; overwrite dP with it.
            for (prow, drow) in p.chunks_exact(seq).zip(dp.chunks_exact_mut(seq)) {
                let inner: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (dv, &pv) in drow.iter_mut().zip(prow) {
                    *dv = pv * (*dv - inner) * scale;
                }
            }
            let ds = MatRef {
                data: &dp,
                offset: 0,
                rs: seq,
                cs: 1,
            };
            let dst = MatRef { rs: 1, cs: seq, ..ds };
            gemm_strided(seq, seq, dh, ds, rows(base + d), MatMut { data: out.data_mut(), offset: base, rs: stride, cs: 1 });
            gemm_strided(seq, seq, dh, dst, rows(base), MatMut { data: out.data_mut(), offset: base + d, rs: stride, cs: 1 });
        }
    }
    out
}
