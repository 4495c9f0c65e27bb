//! Incremental inference with a key/value cache.
//!
//! The arithmetic mirrors the training graph operation for operation, so a
//! prefill here reproduces the tape's logits bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{attention_head, attention_single_query, gemm_acc, gemv_acc, gelu, layer_norm_row, MatMut, MatRef, Tensor, LN_EPS};

use super::hooks::{Branch, HookSet, PositionKind, Site};
use super::{Captures, Model};

/// Per-layer keys and values, `len` rows of `d_model` each.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(num_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); num_layers],
            values: vec![Vec::new(); num_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One decoding stream: a branch, its cache and where the SEP marker fell.
pub struct DecodeState<'m, T: Scalar> {
    model: &'m Model<T>,
    branch: Branch,
    cache: KvCache<T>,
    sep_seen: bool,
}

fn linear_rows<T: Scalar>(x: &[T], w: &Tensor<T>, b: &Tensor<T>, rows: usize, incremental: bool) -> Vec<T> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![T::zero(); rows * n];
    if incremental {
        gemv_acc(x, w.data(), &mut out);
    } else {
        gemm_acc(x, w.data(), &mut out, rows, k, n);
    }
    for r in 0..rows {
        for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    out
}

fn norm_rows<T: Scalar>(x: &[T], gain: &Tensor<T>, bias: &Tensor<T>, d: usize) -> Vec<T> {
    let eps = T::lit(LN_EPS);
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        layer_norm_row(xr, gain.data(), bias.data(), eps, or);
    }
    out
}

impl<'m, T: Scalar> DecodeState<'m, T> {
    pub fn new(model: &'m Model<T>, branch: Branch) -> Self {
        Self {
            model,
            branch,
            cache: KvCache::new(model.config.num_layers),
            sep_seen: false,
        }
    }

    pub fn position(&self) -> usize {
        self.cache.len
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// Feeds `tokens` after the cached prefix. Returns logits for every new
    /// position when `all_logits` is set, otherwise only for the last one.
    /// Captured rows are appended to `captures`.
    pub fn step(
        &mut self,
        tokens: &[usize],
        hooks: &HookSet<T>,
        mut captures: Option<&mut Captures<T>>,
        all_logits: bool,
    ) -> Result<Tensor<T>> {
        let m = self.model;
        let c = &m.config;
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Invalid("decode step with no tokens".into()));
        }
        let start = self.cache.len;
        if start + n > c.max_seq {
            return Err(Error::Overlength {
                len: start + n,
                max: c.max_seq,
            });
        }
        m.check_tokens(tokens)?;
        hooks.validate(c.num_layers)?;
        let d = c.d_model;
        let sep = m.vocab.sep();
        let sites: Vec<Site> = tokens
            .iter()
            .map(|&t| {
                let position = if self.sep_seen {
                    PositionKind::Music
                } else if t == sep {
                    self.sep_seen = true;
                    PositionKind::Sep
                } else {
                    PositionKind::Prompt
                };
                Site {
                    branch: self.branch,
                    position,
                }
            })
            .collect();

        let p = &m.params;
        let lay = m.layout();
        let tok = p.value(lay.tok_emb);
        let pos = p.value(lay.pos_emb);
        let mut x = vec![T::zero(); n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            for ((o, &a), &b) in row.iter_mut().zip(tok.row(t)).zip(pos.row(start + i)) {
                *o = a + b;
            }
        }

        // One new token after a cached prefix takes the unpacked kernels; a
        // prefill stays on the GEMM path so it matches the training graph.
        let incremental = n == 1 && start > 0;
        let heads = c.num_heads;
        let dh = c.head_dim();
        for (li, blk) in lay.blocks.iter().enumerate() {
            let layer = li + 1;
            let h = norm_rows(&x, p.value(blk.ln1_gain), p.value(blk.ln1_bias), d);
            let qkv = linear_rows(&h, p.value(blk.qkv_w), p.value(blk.qkv_b), n, incremental);
            let keys = &mut self.cache.keys[li];
            let values = &mut self.cache.values[li];
            for r in 0..n {
                keys.extend_from_slice(&qkv[r * 3 * d + d..r * 3 * d + 2 * d]);
                values.extend_from_slice(&qkv[r * 3 * d + 2 * d..(r + 1) * 3 * d]);
            }
            let total = start + n;
            let mut att = vec![T::zero(); n * d];
            let mut probs = vec![T::zero(); n * total];
            for hh in 0..heads {
                let off = hh * dh;
                if incremental {
                    attention_single_query(
                        MatRef { data: &qkv, offset: off, rs: 3 * d, cs: 1 },
                        MatRef { data: keys, offset: off, rs: d, cs: 1 },
                        MatRef { data: values, offset: off, rs: d, cs: 1 },
                        dh,
                        &mut probs,
                        MatMut { data: &mut att, offset: off, rs: d, cs: 1 },
                    );
                    continue;
                }
                attention_head(
                    MatRef { data: &qkv, offset: off, rs: 3 * d, cs: 1 },
                    MatRef { data: keys, offset: off, rs: d, cs: 1 },
                    MatRef { data: values, offset: off, rs: d, cs: 1 },
                    n,
                    total,
                    dh,
                    start,
                    &mut probs,
                    MatMut { data: &mut att, offset: off, rs: d, cs: 1 },
                );
            }
            let o = linear_rows(&att, p.value(blk.out_w), p.value(blk.out_b), n, incremental);
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv += *ov;
            }
            let h2 = norm_rows(&x, p.value(blk.ln2_gain), p.value(blk.ln2_bias), d);
            let mut f = linear_rows(&h2, p.value(blk.fc_w), p.value(blk.fc_b), n, incremental);
            for v in f.iter_mut() {
                *v = gelu(*v);
            }
            let mo = linear_rows(&f, p.value(blk.proj_w), p.value(blk.proj_b), n, incremental);
            for (xv, ov) in x.iter_mut().zip(&mo) {
                *xv += *ov;
            }

            if let Some(inj) = &hooks.inject {
                for (r, site) in sites.iter().enumerate() {
                    if let Some(v) = inj.vector(layer, *site) {
                        if v.len() != d {
                            return Err(Error::Shape(format!(
                                "injected vector of length {} at layer {layer}, d_model is {d}",
                                v.len()
                            )));
                        }
                        for (xv, &a) in x[r * d..(r + 1) * d].iter_mut().zip(v) {
                            *xv += a;
                        }
                    }
                }
            }
            if hooks.capture.contains(&layer) {
                if let Some(caps) = captures.as_deref_mut() {
                    append_rows(caps, layer, &x, d)?;
                }
            }
        }
        self.cache.len += n;

        let (rows, first) = if all_logits { (n, 0) } else { (1, n - 1) };
        let xs = &x[first * d..];
        let h = norm_rows(xs, p.value(lay.lnf_gain), p.value(lay.lnf_bias), d);
        let logits = linear_rows(&h, p.value(lay.head_w), p.value(lay.head_b), rows, incremental);
        Tensor::from_raw(&[rows, c.vocab_size], logits)
    }
}

fn append_rows<T: Scalar>(caps: &mut Captures<T>, layer: usize, rows: &[T], d: usize) -> Result<()> {
    let prev = caps.remove(&layer);
    let mut data = prev.map(Tensor::into_data).unwrap_or_default();
    data.extend_from_slice(rows);
    let t = data.len() / d;
    caps.insert(layer, Tensor::from_raw(&[t, d], data)?);
    Ok(())
}
