//! Decoder-only transformer over music tokens.
//!
//! Pre-norm blocks with learned positional embeddings and GELU MLPs. The
//! same weights run three ways: on the autodiff tape for training
//! ([`Model::loss_graph`]), through the KV-cached decoder for inference
//! ([`DecodeState`]), and as a single prefill pass ([`Model::forward_full`]).

mod checkpoint;
mod config;
mod decode;
mod generate;
pub mod hooks;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, checkpoint_hash, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use config::{GenerationConfig, ModelConfig};
pub use decode::{DecodeState, KvCache};
pub use generate::{cfg_combine, complete_events, generate, null_prompt, GrammarState};
pub use hooks::{Branch, Branches, HookSet, Injector, LayerInjector, PositionKind, Site};
pub use train::{evaluate, split_corpus, train, unigram_entropy, Batch, BatchSampler, TrainConfig, TrainEvent};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::corpus::TokenVocab;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, LN_EPS};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIds {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<BlockIds>,
    pub lnf_gain: ParamId,
    pub lnf_bias: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Declared parameter order: name and shape of every tensor.
pub fn parameter_manifest(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (c.d_model, c.ffn_dim, c.vocab_size);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("pos_emb".to_string(), vec![c.max_seq, d]),
    ];
    for l in 1..=c.num_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("ln1.gain"), vec![d]),
            (p("ln1.bias"), vec![d]),
            (p("attn.qkv.weight"), vec![d, 3 * d]),
            (p("attn.qkv.bias"), vec![3 * d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("ln2.gain"), vec![d]),
            (p("ln2.bias"), vec![d]),
            (p("mlp.fc.weight"), vec![d, f]),
            (p("mlp.fc.bias"), vec![f]),
            (p("mlp.proj.weight"), vec![f, d]),
            (p("mlp.proj.bias"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.gain".to_string(), vec![d]),
        ("ln_f.bias".to_string(), vec![d]),
        ("head.weight".to_string(), vec![d, v]),
        ("head.bias".to_string(), vec![v]),
    ]);
    out
}

impl Layout {
    fn resolve<T: Scalar>(c: &ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let manifest = parameter_manifest(c);
        if manifest.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                manifest.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in manifest.iter().zip(params.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match declared {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| params.find(n).expect("manifest checked");
        let blocks = (1..=c.num_layers)
            .map(|l| {
                let b = |s: &str| id(&format!("blocks.{l}.{s}"));
                BlockIds {
                    ln1_gain: b("ln1.gain"),
                    ln1_bias: b("ln1.bias"),
                    qkv_w: b("attn.qkv.weight"),
                    qkv_b: b("attn.qkv.bias"),
                    out_w: b("attn.out.weight"),
                    out_b: b("attn.out.bias"),
                    ln2_gain: b("ln2.gain"),
                    ln2_bias: b("ln2.bias"),
                    fc_w: b("mlp.fc.weight"),
                    fc_b: b("mlp.fc.bias"),
                    proj_w: b("mlp.proj.weight"),
                    proj_b: b("mlp.proj.bias"),
                }
            })
            .collect();
        Ok(Self {
            tok_emb: id("tok_emb"),
            pos_emb: id("pos_emb"),
            blocks,
            lnf_gain: id("ln_f.gain"),
            lnf_bias: id("ln_f.bias"),
            head_w: id("head.weight"),
            head_b: id("head.bias"),
        })
    }
}

/// Provenance recorded by training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub final_loss: f64,
    pub val_loss: f64,
    pub unigram_entropy: f64,
    pub corpus_hash: String,
    pub seed: u64,
    /// (step, training loss) samples.
    pub curve: Vec<(usize, f64)>,
}

/// Captured residual-stream rows keyed by layer (1-based), each `[t, d_model]`.
pub type Captures<T> = BTreeMap<usize, Tensor<T>>;

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub vocab: TokenVocab,
    pub params: ParamStore<T>,
    pub meta: TrainingMeta,
    layout: Layout,
}

impl<T: Scalar> Model<T> {
    /// Fresh weights: N(0, 0.02) matrices and embeddings, residual output
    /// projections scaled by 1/sqrt(2L), zero biases, unit gains.
    pub fn init(config: ModelConfig, vocab: TokenVocab, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Invalid(format!(
                "config vocab_size {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let resid_std = INIT_STD / (2.0 * config.num_layers as f64).sqrt();
        let mut params = ParamStore::new();
        for (name, shape) in parameter_manifest(&config) {
            let value = if name.ends_with(".gain") {
                Tensor::full(&shape, T::one())
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name.ends_with("out.weight") || name.ends_with("proj.weight") {
                Tensor::randn(&shape, resid_std, rng)
            } else {
                Tensor::randn(&shape, INIT_STD, rng)
            };
            params.add(name, value);
        }
        Self::from_parts(config, vocab, params, TrainingMeta::default())
    }

    pub fn from_parts(config: ModelConfig, vocab: TokenVocab, params: ParamStore<T>, meta: TrainingMeta) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self {
            config,
            vocab,
            params,
            meta,
            layout,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            meta: self.meta.clone(),
            layout: self.layout.clone(),
        }
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::UnknownToken {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits for every position plus the requested captures, from one
    /// prefill pass on the conditional branch.
    pub fn forward_full(&self, tokens: &[usize], hooks: &HookSet<T>) -> Result<(Tensor<T>, Captures<T>)> {
        self.forward_full_branch(tokens, hooks, Branch::Cond)
    }

    pub fn forward_full_branch(
        &self,
        tokens: &[usize],
        hooks: &HookSet<T>,
        branch: Branch,
    ) -> Result<(Tensor<T>, Captures<T>)> {
        let mut state = DecodeState::new(self, branch);
        let mut captures = Captures::new();
        let logits = state.step(tokens, hooks, Some(&mut captures), true)?;
        Ok((logits, captures))
    }

    /// Training graph: mean masked next-token cross-entropy of `batch`
    /// under `params` (which must share this model's layout).
    pub fn loss_graph(&self, params: &ParamStore<T>, batch: &Batch) -> Result<(Tape<T>, Var)> {
        let mut tape = Tape::new();
        let logits = self.logits_graph(&mut tape, params, batch)?;
        let loss = tape.cross_entropy(logits, &batch.targets, &batch.mask)?;
        Ok((tape, loss))
    }

    /// Logits of `batch` recorded on `tape`.
    pub fn logits_graph(&self, tape: &mut Tape<T>, params: &ParamStore<T>, batch: &Batch) -> Result<Var> {
        let c = &self.config;
        let (b, t) = (batch.batch, batch.seq);
        if t > c.max_seq {
            return Err(Error::Overlength { len: t, max: c.max_seq });
        }
        self.check_tokens(&batch.inputs)?;
        let eps = T::lit(LN_EPS);
        let lay = &self.layout;
        let tok = tape.param(params, lay.tok_emb);
        let pos = tape.param(params, lay.pos_emb);
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let te = tape.embed(tok, &batch.inputs)?;
        let pe = tape.embed(pos, &pos_ids)?;
        let mut x = tape.add(te, pe)?;
        for blk in &lay.blocks {
            let g1 = tape.param(params, blk.ln1_gain);
            let b1 = tape.param(params, blk.ln1_bias);
            let h = tape.layer_norm(x, g1, b1, eps)?;
            let wqkv = tape.param(params, blk.qkv_w);
            let bqkv = tape.param(params, blk.qkv_b);
            let qkv = tape.linear(h, wqkv, bqkv)?;
            let a = tape.causal_attention(qkv, b, t, c.num_heads)?;
            let wo = tape.param(params, blk.out_w);
            let bo = tape.param(params, blk.out_b);
            let o = tape.linear(a, wo, bo)?;
            x = tape.add(x, o)?;
            let g2 = tape.param(params, blk.ln2_gain);
            let b2 = tape.param(params, blk.ln2_bias);
            let h2 = tape.layer_norm(x, g2, b2, eps)?;
            let w1 = tape.param(params, blk.fc_w);
            let bf = tape.param(params, blk.fc_b);
            let f = tape.linear(h2, w1, bf)?;
            let f = tape.gelu(f);
            let w2 = tape.param(params, blk.proj_w);
            let bp = tape.param(params, blk.proj_b);
            let m = tape.linear(f, w2, bp)?;
            x = tape.add(x, m)?;
        }
        let gf = tape.param(params, lay.lnf_gain);
        let bf = tape.param(params, lay.lnf_bias);
        let h = tape.layer_norm(x, gf, bf, eps)?;
        let wh = tape.param(params, lay.head_w);
        let bh = tape.param(params, lay.head_b);
        tape.linear(h, wh, bh)
    }
}
