//! Run configuration: a versioned TOML document plus command-line overrides.
//!
//! Every section and key is optional; missing values take the defaults
//! below. The document must carry `version = 1`.
//!
//! ```toml
//! version = 1
//! out = "runs/default"
//!
//! [corpus]      # n_clips, seed, grammar_version
//! [model]       # num_layers, d_model, num_heads, ffn_dim, max_seq, prompt_dropout, init_seed
//! [train]       # steps, batch_size, lr, warmup_steps, min_lr_ratio, grad_clip, seed, val_every, log_every
//! [generation]  # max_new_tokens, temperature, top_k, cfg_scale, min_events
//! [steering]    # attributes, n_prompts, seed, branches
//! [experiment]  # n, base_seed, prompt_seed, eval_seed, scan_lambdas, lambda_grid, ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steerlab_core::corpus::Attribute;
use steerlab_core::model::{Branches, GenerationConfig, ModelConfig, TrainConfig};
use steerlab_core::steering::Strategy;

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// Output root; relative output directories are resolved under it.
pub const OUT_ROOT_ENV: &str = "STEERLAB_OUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_clips: usize,
    pub seed: u64,
    pub grammar_version: u32,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            n_clips: 6000,
            seed: 1,
            grammar_version: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub prompt_dropout: f64,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            num_layers: m.num_layers,
            d_model: m.d_model,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            max_seq: m.max_seq,
            prompt_dropout: m.prompt_dropout,
            init_seed: 0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            d_model: self.d_model,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            vocab_size,
            max_seq: self.max_seq,
            prompt_dropout: self.prompt_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub cfg_scale: f64,
    pub min_events: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            max_new_tokens: g.max_new_tokens,
            temperature: g.temperature,
            top_k: g.top_k,
            cfg_scale: g.cfg_scale,
            min_events: g.min_events,
        }
    }
}

impl GenerationSection {
    pub fn with_seed(&self, seed: u64) -> GenerationConfig {
        GenerationConfig {
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_k: self.top_k,
            cfg_scale: self.cfg_scale,
            seed,
            min_events: self.min_events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSection {
    pub attributes: Vec<Attribute>,
    /// Prompts per contrastive set.
    pub n_prompts: usize,
    pub seed: u64,
    pub branches: Branches,
}

impl Default for SteeringSection {
    fn default() -> Self {
        Self {
            attributes: vec![Attribute::Tempo, Attribute::Timbre],
            n_prompts: 100,
            seed: 11,
            branches: Branches::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Generations per direction and configuration.
    pub n: usize,
    pub base_seed: u64,
    /// Seed of the neutral prompts used by the scan and the sweeps.
    pub prompt_seed: u64,
    /// Seed of the held-out neutral prompts used by `eval`.
    pub eval_seed: u64,
    pub scan_lambdas: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub prompt_counts: Vec<usize>,
    pub prompt_sweep_lambda: f64,
    pub eval_lambda: f64,
    /// Strategy of the sweeps and of `eval`; the scan always uses one-to-all.
    pub strategy: StrategyChoice,
    /// Fixes the steering layer instead of taking it from the scan.
    pub layer: Option<usize>,
    /// Also write WAV files of the evaluation generations.
    pub render_wav: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    OneToAll,
    AllToAll,
}

impl StrategyChoice {
    pub fn at(self, layer: usize) -> Strategy {
        match self {
            StrategyChoice::OneToAll => Strategy::OneToAll(layer),
            StrategyChoice::AllToAll => Strategy::AllToAll,
        }
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
    g.extend([3.0, 4.0, 5.0]);
    g
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n: 50,
            base_seed: 7,
            prompt_seed: 21,
            eval_seed: 99,
            scan_lambdas: vec![0.5, 1.0],
            lambda_grid: default_lambda_grid(),
            prompt_counts: vec![1, 5, 10, 25, 50, 100],
            prompt_sweep_lambda: 1.0,
            eval_lambda: 1.25,
            strategy: StrategyChoice::OneToAll,
            layer: None,
            render_wav: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub out: PathBuf,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub generation: GenerationSection,
    pub steering: SteeringSection,
    pub experiment: ExperimentSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            out: PathBuf::from("runs/default"),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            train: TrainConfig {
                batch_size: 32,
                ..TrainConfig::default()
            },
            generation: GenerationSection::default(),
            steering: SteeringSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let e = &self.experiment;
        if e.n == 0 {
            return bad("experiment.n must be >= 1".into());
        }
        for (name, grid) in [("lambda_grid", &e.lambda_grid), ("scan_lambdas", &e.scan_lambdas)] {
            if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|l| !l.is_finite()) {
                return bad(format!("experiment.{name} must be non-empty, finite and strictly ascending"));
            }
        }
        if e.lambda_grid[0] != 0.0 {
            return bad("experiment.lambda_grid must start at 0".into());
        }
        if e.prompt_counts.is_empty() || e.prompt_counts.contains(&0) {
            return bad("experiment.prompt_counts must be non-empty and positive".into());
        }
        if let Some(l) = e.layer {
            if l == 0 || l > self.model.num_layers {
                return bad(format!("experiment.layer {l} outside [1, {}]", self.model.num_layers));
            }
        }
        if self.steering.n_prompts == 0 || self.steering.attributes.is_empty() {
            return bad("steering needs at least one attribute and n_prompts >= 1".into());
        }
        Ok(())
    }

    /// The output directory after applying the output-root variable.
    pub fn out_dir(&self) -> PathBuf {
        resolve_out(&self.out, std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
    }
}

pub fn resolve_out(out: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(r) if out.is_relative() => r.join(out),
        _ => out.to_path_buf(),
    }
}
