//! Classifier-free-guided sampling of event triples.

use crate::corpus::clip::NoteEvent;
use crate::corpus::grammar::PROMPT_LEN;
use crate::corpus::{TokenKind, TokenVocab};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;

use super::config::GenerationConfig;
use super::decode::DecodeState;
use super::hooks::{Branch, HookSet};
use super::Model;

/// `uncond + γ (cond − uncond)`. γ = 1 and γ = 0 return the respective
/// input unchanged.
pub fn cfg_combine<T: Scalar>(cond: &[T], uncond: &[T], gamma: f64) -> Result<Vec<T>> {
    if cond.len() != uncond.len() {
        return Err(Error::Shape(format!(
            "cfg_combine of {} and {} logits",
            cond.len(),
            uncond.len()
        )));
    }
    if gamma == 1.0 {
        return Ok(cond.to_vec());
    }
    if gamma == 0.0 {
        return Ok(uncond.to_vec());
    }
    let g = T::lit(gamma);
    Ok(cond.iter().zip(uncond).map(|(&c, &u)| u + g * (c - u)).collect())
}

/// The unconditional prompt: NULL in every word slot, then SEP.
pub fn null_prompt(vocab: &TokenVocab) -> Vec<usize> {
    let mut p = vec![vocab.null(); PROMPT_LEN - 1];
    p.push(vocab.sep());
    p
}

/// Which token class may come next in the event stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarState {
    /// Position inside the current triple (0 = expecting PITCH or END).
    phase: u8,
    events: usize,
    done: bool,
}

impl GrammarState {
    pub fn new() -> Self {
        Self {
            phase: 0,
            events: 0,
            done: false,
        }
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn allows(&self, vocab: &TokenVocab, id: usize, min_events: usize) -> bool {
        if self.done {
            return false;
        }
        let Ok(kind) = vocab.kind(id) else {
            return false;
        };
        match (self.phase, kind) {
            (0, TokenKind::Pitch(_)) => true,
            (0, TokenKind::End) => self.events >= min_events,
            (1, TokenKind::Dur(_)) => true,
            (2, TokenKind::Bright(_)) => true,
            _ => false,
        }
    }

    pub fn advance(&mut self, vocab: &TokenVocab, id: usize) {
        if matches!(vocab.kind(id), Ok(TokenKind::End)) {
            self.done = true;
            return;
        }
        self.phase = (self.phase + 1) % 3;
        if self.phase == 0 {
            self.events += 1;
        }
    }
}

impl Default for GrammarState {
    fn default() -> Self {
        Self::new()
    }
}

fn sample_index(logits: &[f64], allowed: &[bool], gen: &GenerationConfig, rng: &mut RngState) -> Result<usize> {
    let mut scaled: Vec<(usize, f64)> = logits
        .iter()
        .zip(allowed)
        .enumerate()
        .filter(|(_, (_, &ok))| ok)
        .map(|(i, (&l, _))| (i, l / gen.temperature))
        .collect();
    if scaled.is_empty() {
        return Err(Error::Invalid("no admissible token to sample".into()));
    }
    if gen.top_k > 0 && gen.top_k < scaled.len() {
        scaled.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scaled.truncate(gen.top_k);
        scaled.sort_by_key(|&(i, _)| i);
    }
    let max = scaled.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("sampling logits".into()));
    }
    let weights: Vec<f64> = scaled.iter().map(|&(_, l)| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (&(i, _), &w) in scaled.iter().zip(&weights) {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(scaled.last().expect("non-empty").0)
}

/// Samples music tokens after `prompt` (which must end in SEP).
///
/// The conditional branch sees the prompt, the unconditional branch the
/// [`null_prompt`]; their logits are mixed with [`cfg_combine`]. The
/// injector in `hooks` is consulted for every position of both branches.
/// Sampling is restricted to well-formed PITCH, DUR, BRIGHT triples with END
/// admitted once `min_events` events exist. With γ = 1 the unconditional
/// branch cannot affect the result and is not computed.
pub fn generate<T: Scalar>(
    model: &Model<T>,
    prompt: &[usize],
    gen: &GenerationConfig,
    hooks: &HookSet<T>,
) -> Result<Vec<usize>> {
    gen.validate()?;
    let vocab = &model.vocab;
    if prompt.last() != Some(&vocab.sep()) {
        return Err(Error::MissingSep);
    }
    let total = prompt.len() + gen.max_new_tokens;
    if total > model.config.max_seq {
        return Err(Error::Overlength {
            len: total,
            max: model.config.max_seq,
        });
    }
    let mut rng = RngState::new(gen.seed);
    let mut cond = DecodeState::new(model, Branch::Cond);
    let mut uncond = (gen.cfg_scale != 1.0).then(|| DecodeState::new(model, Branch::Uncond));
    let mut cond_logits = cond.step(prompt, hooks, None, false)?;
    let mut uncond_logits = match uncond.as_mut() {
        Some(u) => Some(u.step(&null_prompt(vocab), hooks, None, false)?),
        None => None,
    };

    let mut grammar = GrammarState::new();
    let mut out = Vec::with_capacity(gen.max_new_tokens);
    let mut allowed = vec![false; vocab.len()];
    while out.len() < gen.max_new_tokens {
        let mixed = match &uncond_logits {
            Some(u) => cfg_combine(cond_logits.data(), u.data(), gen.cfg_scale)?,
            None => cond_logits.data().to_vec(),
        };
        let mixed: Vec<f64> = mixed.iter().map(|v| v.to_f64c()).collect();
        for (id, a) in allowed.iter_mut().enumerate() {
            *a = grammar.allows(vocab, id, gen.min_events);
        }
        let next = sample_index(&mixed, &allowed, gen, &mut rng)?;
        out.push(next);
        grammar.advance(vocab, next);
        if grammar.is_done() || out.len() == gen.max_new_tokens {
            break;
        }
        cond_logits = cond.step(&[next], hooks, None, false)?;
        if let Some(u) = uncond.as_mut() {
            uncond_logits = Some(u.step(&[next], hooks, None, false)?);
        }
    }
    Ok(out)
}

/// Decodes generated tokens into notes, ignoring a trailing partial triple.
pub fn complete_events(vocab: &TokenVocab, tokens: &[usize]) -> Result<Vec<NoteEvent>> {
    let body = match tokens.iter().position(|&t| t == vocab.end()) {
        Some(i) => &tokens[..i],
        None => tokens,
    };
    let whole = body.len() - body.len() % 3;
    crate::corpus::clip::parse_events(vocab, &body[..whole])
}
