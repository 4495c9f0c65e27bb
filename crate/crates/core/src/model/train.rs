//! Next-token training on a corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::grammar::SEP_INDEX;
use crate::corpus::{Clip, Corpus, TokenVocab};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{derive_seed, RngState};
use crate::scalar::Scalar;

use super::generate::null_prompt;
use super::Model;

/// Right-padded batch of shifted sequences. `mask[i]` keeps the target at
/// flat position `i` in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    /// Builds a batch from full token sequences (prompt then events). Only
    /// targets after the SEP position are scored.
    pub fn from_sequences(seqs: &[Vec<usize>], pad: usize) -> Result<Self> {
        let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || longest < 2 {
            return Err(Error::Invalid("batch needs sequences of at least two tokens".into()));
        }
        let t = longest - 1;
        let mut inputs = Vec::with_capacity(seqs.len() * t);
        let mut targets = Vec::with_capacity(seqs.len() * t);
        let mut mask = Vec::with_capacity(seqs.len() * t);
        for s in seqs {
            for i in 0..t {
                let live = i + 1 < s.len();
                inputs.push(if i < s.len() { s[i] } else { pad });
                targets.push(if live { s[i + 1] } else { pad });
                mask.push(live && i >= SEP_INDEX);
            }
        }
        Ok(Self {
            batch: seqs.len(),
            seq: t,
            inputs,
            targets,
            mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr` after cosine decay.
    pub min_lr_ratio: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Every n-th clip is held out for validation.
    pub val_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            lr: 2e-3,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            grad_clip: 1.0,
            seed: 0,
            val_every: 20,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}

/// Progress report passed to the training callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Step { step: usize, loss: f64, lr: f64, grad_norm: f64 },
    Validation { step: usize, loss: f64 },
}

/// Entropy in nats of the marginal distribution of scored target tokens.
pub fn unigram_entropy(clips: &[Clip]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for c in clips {
        for &t in &c.events {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
    }
    counts
        .values()
        .map(|&n| {
            let p = n as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn check_corpus(corpus: &Corpus, vocab: &TokenVocab) -> Result<()> {
    if corpus.header.grammar_version != vocab.grammar_version() {
        return Err(Error::Invalid(format!(
            "corpus grammar version {} does not match vocabulary version {}",
            corpus.header.grammar_version,
            vocab.grammar_version()
        )));
    }
    for (i, c) in corpus.clips.iter().enumerate() {
        if let Some(&id) = c.prompt_tokens.iter().chain(&c.events).find(|&&t| t >= vocab.len()) {
            return Err(Error::Invalid(format!("clip {i} has token {id} outside the vocabulary")));
        }
    }
    Ok(())
}

/// Mean loss over `clips` in fixed batches with prompts intact.
pub fn evaluate<T: Scalar>(model: &Model<T>, clips: &[&Clip], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in clips.chunks(batch_size.max(1)) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(|c| c.sequence()).collect();
        let batch = Batch::from_sequences(&seqs, model.vocab.end())?;
        let (tape, loss) = model.loss_graph(&model.params, &batch)?;
        let n = batch.mask.iter().filter(|&&m| m).count();
        total += tape.value(loss).data()[0].to_f64c() * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Draws shuffled training batches, replacing each prompt by the null
/// prompt with probability `dropout`.
pub struct BatchSampler<'c> {
    clips: Vec<&'c Clip>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    dropout: f64,
    null: Vec<usize>,
    pad: usize,
    rng: RngState,
}

impl<'c> BatchSampler<'c> {
    pub fn new(vocab: &TokenVocab, clips: Vec<&'c Clip>, batch_size: usize, dropout: f64, seed: u64) -> Self {
        let n = clips.len();
        Self {
            clips,
            order: (0..n).collect(),
            cursor: n,
            batch_size,
            dropout,
            null: null_prompt(vocab),
            pad: vocab.end(),
            rng: RngState::new(seed),
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if self.clips.is_empty() {
            return Err(Error::Invalid("no clips to batch".into()));
        }
        let mut seqs = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            let mut s = self.clips[self.order[self.cursor]].sequence();
            self.cursor += 1;
            if self.dropout > 0.0 && self.rng.bernoulli(self.dropout) {
                s[..self.null.len()].copy_from_slice(&self.null);
            }
            seqs.push(s);
        }
        Batch::from_sequences(&seqs, self.pad)
    }
}

/// Splits the corpus into (train, validation); every `val_every`-th clip is
/// held out when the corpus has more than one clip.
pub fn split_corpus(corpus: &Corpus, val_every: usize) -> (Vec<&Clip>, Vec<&Clip>) {
    let hold = |i: usize| val_every > 0 && i % val_every == 0 && corpus.clips.len() > 1;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, c) in corpus.clips.iter().enumerate() {
        if hold(i) {
            val.push(c);
        } else {
            train.push(c);
        }
    }
    (train, val)
}

/// Trains `model` in place on the corpus and records the run in its
/// metadata.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent),
) -> Result<()> {
    check_corpus(corpus, &model.vocab)?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch_size must be >= 1".into()));
    }
    let (train_set, val_set) = split_corpus(corpus, cfg.val_every);
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    let adam = AdamConfig::default();
    let mut state = AdamState::new(&model.params);
    let mut sampler = BatchSampler::new(
        &model.vocab,
        train_set,
        cfg.batch_size,
        model.config.prompt_dropout,
        derive_seed(&[cfg.seed, 0x7A]),
    );
    let mut last_loss = f64::NAN;
    let mut curve = Vec::new();

    for step in 0..cfg.steps {
        let batch = sampler.next_batch()?;
        let (tape, loss) = model.loss_graph(&model.params, &batch)?;
        let loss_value = tape.value(loss).data()[0].to_f64c();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        let params = &mut model.params;
        params.zero_grad();
        tape.backward(loss, params)?;
        drop(tape);
        let grad_norm = params.grad_norm();
        if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
            params.scale_grads(T::lit(cfg.grad_clip / grad_norm));
        }
        let lr = cfg.lr_at(step);
        adam_step(params, &mut state, &adam, lr);
        last_loss = loss_value;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            curve.push((step, loss_value));
            on_event(TrainEvent::Step {
                step,
                loss: loss_value,
                lr,
                grad_norm,
            });
        }
    }

    let val_loss = if val_set.is_empty() {
        f64::NAN
    } else {
        let v = evaluate(model, &val_set, cfg.batch_size)?;
        on_event(TrainEvent::Validation { step: cfg.steps, loss: v });
        v
    };
    model.meta.steps += cfg.steps;
    model.meta.final_loss = last_loss;
    model.meta.val_loss = val_loss;
    model.meta.unigram_entropy = unigram_entropy(&corpus.clips);
    model.meta.corpus_hash = corpus.hash()?;
    model.meta.seed = cfg.seed;
    model.meta.curve = curve;
    Ok(())
}
