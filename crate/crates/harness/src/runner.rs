//! Single generations and their metrics, plus the row type every experiment
//! emits.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use steerlab_core::corpus::{Attribute, PromptSet, TokenVocab};
use steerlab_core::model::{complete_events, generate, HookSet};
use steerlab_core::rng::derive_seed;
use steerlab_core::synthmetrics::{
    estimate_bpm_audio, estimate_bpm_symbolic, extract_features, render_audio, spectral_centroid, write_wav,
    FeatureVector,
};
use steerlab_core::Model32;

use crate::config::GenerationSection;
use crate::error::{HarnessError, Result};

const NS_GENERATION: u64 = 0x6E;

/// The sampling seed of prompt `index`. Every configuration of a run uses
/// the same seed for the same prompt, so steered rows differ from the
/// baseline only through the injection.
pub fn generation_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(&[base_seed, NS_GENERATION, index as u64])
}

/// Which pole a row is steered towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    Base,
    A,
    B,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Base => 0.0,
            Direction::A => 1.0,
            Direction::B => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Base => "base",
            Direction::A => "A",
            Direction::B => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Direction::Base),
            "A" | "a" => Some(Direction::A),
            "B" | "b" => Some(Direction::B),
            _ => None,
        }
    }

    /// The pole name of this direction for an attribute (`fast`, `dark`, ...).
    pub fn pole(self, attribute: Attribute) -> &'static str {
        let (a, b) = attribute.pole_names();
        match self {
            Direction::Base => "baseline",
            Direction::A => a,
            Direction::B => b,
        }
    }
}

/// Where the injected vector was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerLabel {
    None,
    One(usize),
    All,
}

impl fmt::Display for LayerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerLabel::None => f.write_str("-"),
            LayerLabel::One(l) => write!(f, "{l}"),
            LayerLabel::All => f.write_str("ALL"),
        }
    }
}

impl LayerLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "-" => Some(LayerLabel::None),
            "ALL" => Some(LayerLabel::All),
            n => n.parse().ok().map(LayerLabel::One),
        }
    }
}

/// Metrics of one decoded generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n_events: usize,
    /// NaN when fewer than two events were generated.
    pub bpm_symbolic: f64,
    /// NaN when the audio is shorter than the estimator needs or aperiodic.
    pub bpm_audio: f64,
    /// NaN for silent audio.
    pub centroid: f64,
    pub features: Option<FeatureVector>,
}

impl Metrics {
    /// The value the attribute is judged by.
    pub fn value(&self, attribute: Attribute) -> f64 {
        match attribute {
            Attribute::Tempo => self.bpm_symbolic,
            Attribute::Timbre => self.centroid,
        }
    }
}

pub fn metric_name(attribute: Attribute) -> &'static str {
    match attribute {
        Attribute::Tempo => "bpm",
        Attribute::Timbre => "centroid_hz",
    }
}

pub fn clip_metrics(vocab: &TokenVocab, tokens: &[usize]) -> Result<(Metrics, steerlab_core::synthmetrics::AudioClip)> {
    let notes = complete_events(vocab, tokens)?;
    let audio = render_audio(&notes)?;
    let bpm_symbolic = estimate_bpm_symbolic(&notes).unwrap_or(f64::NAN);
    let bpm_audio = estimate_bpm_audio(&audio).unwrap_or(f64::NAN);
    let centroid = spectral_centroid(&audio).unwrap_or(f64::NAN);
    let features = extract_features(&audio, &notes).ok();
    Ok((
        Metrics {
            n_events: notes.len(),
            bpm_symbolic,
            bpm_audio,
            centroid,
            features,
        },
        audio,
    ))
}

/// One generation's row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub experiment: String,
    pub attribute: String,
    pub prompt: usize,
    pub lambda: f64,
    pub layer: LayerLabel,
    pub strategy: String,
    pub direction: Direction,
    pub seed: u64,
    pub metrics: Metrics,
    pub tokens: Vec<usize>,
}

/// Labels shared by every row of one configuration.
#[derive(Debug, Clone)]
pub struct RowContext {
    pub experiment: String,
    pub attribute: String,
    pub lambda: f64,
    pub layer: LayerLabel,
    pub strategy: String,
    pub direction: Direction,
}

impl RowContext {
    pub fn baseline(experiment: &str, attribute: &str) -> Self {
        Self {
            experiment: experiment.into(),
            attribute: attribute.into(),
            lambda: 0.0,
            layer: LayerLabel::None,
            strategy: "none".into(),
            direction: Direction::Base,
        }
    }
}

/// Generates one clip per prompt under `hooks`.
pub fn run_prompts(
    model: &Model32,
    prompts: &PromptSet,
    generation: &GenerationSection,
    base_seed: u64,
    hooks: &HookSet<f32>,
    ctx: &RowContext,
    wav_dir: Option<&Path>,
) -> Result<Vec<RunResult>> {
    let mut rows = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.prompts.iter().enumerate() {
        let seed = generation_seed(base_seed, i);
        let tokens = generate(model, p, &generation.with_seed(seed), hooks)?;
        let (metrics, audio) = clip_metrics(&model.vocab, &tokens)?;
        if let Some(dir) = wav_dir {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            let name = format!("{}_{}_{}_{i:03}.wav", ctx.attribute, ctx.direction.label(), ctx.lambda);
            write_wav(&audio, &dir.join(name))?;
        }
        rows.push(RunResult {
            experiment: ctx.experiment.clone(),
            attribute: ctx.attribute.clone(),
            prompt: i,
            lambda: ctx.lambda,
            layer: ctx.layer,
            strategy: ctx.strategy.clone(),
            direction: ctx.direction,
            seed,
            metrics,
            tokens,
        });
    }
    Ok(rows)
}

/// Metric values of the rows, NaNs dropped.
pub fn metric_values(rows: &[&RunResult], attribute: Attribute) -> Vec<f64> {
    rows.iter()
        .map(|r| r.metrics.value(attribute))
        .filter(|v| v.is_finite())
        .collect()
}

pub fn feature_vectors(rows: &[&RunResult]) -> Vec<FeatureVector> {
    rows.iter().filter_map(|r| r.metrics.features).collect()
}
