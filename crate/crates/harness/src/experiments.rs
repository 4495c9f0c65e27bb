//! The experiment pipeline: corpus, training, vector extraction, layer scan,
//! coefficient sweep, prompt-count sweep and held-out evaluation.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.toml  timings.json  corpus.jsonl  model.mstr  train_log.csv  train_summary.json
//! steering/<attr>.json  steering/<attr>_{cosine,pca,kde}.csv
//! baseline/<prompt set>/{results.csv,tokens.jsonl,key.json}
//! scan/<attr>/{results.csv,summary.csv,layers.csv,selection.json}
//! scan_null/<attr>/...  (same files, for a randomly initialised model)
//! lambda/<attr>/{results.csv,summary.csv}
//! prompts/<attr>/{results.csv,summary.csv}
//! eval/{results.csv,summary.csv,separation.csv}
//! plots/*.svg
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use steerlab_core::corpus::file::UNIFORM_MIX;
use steerlab_core::corpus::{
    build_vocab, generate_corpus, make_contrastive_sets, make_eval_prompts, make_heldout_prompts, read_corpus,
    write_corpus, Attribute, Grammar, PromptSet, TokenVocab,
};
use steerlab_core::model::{checkpoint_hash, load_checkpoint, save_checkpoint, train, HookSet, TrainEvent};
use steerlab_core::rng::{derive_seed, RngState};
use steerlab_core::steering::{
    build_hookset, capture_eos_activations, compute_diff_means, cosine_similarity_matrix, kde_2d, kde_bounds,
    load_steering, pca_project, save_steering, split_points, SteerConfig, Strategy,
};
use steerlab_core::synthmetrics::{frechet_distance, gaussian_stats, GaussianStats};
use steerlab_core::{Model32, SteeringVectors32};

use crate::config::{Config, GenerationSection};
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, read_json, read_tokens, write_json, write_records, write_results, write_table, write_tokens};
use crate::runner::{
    clip_metrics, feature_vectors, metric_name, metric_values, run_prompts, Direction, LayerLabel,
    RowContext, RunResult,
};
use crate::stats::{relative_shift, signed_shift, Summary};

const NS_PROMPT_POOL: u64 = 0x50;
const KDE_GRID: usize = 64;
const KDE_PAD: f64 = 4.0;

/// Summary of one configuration (or of the baseline) of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub experiment: String,
    pub attribute: String,
    pub metric: String,
    pub lambda: f64,
    pub layer: String,
    pub strategy: String,
    pub direction: String,
    /// Prompts per contrastive set behind the steering vector.
    pub prompts_per_set: usize,
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
    pub mean: f64,
    pub std: f64,
    pub relative_shift: f64,
    pub signed_shift: f64,
    /// Fréchet distance of the feature distribution to the baseline pool.
    pub frechet: f64,
}

/// Layer-scan score of one injection layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    /// Half the gap between the A and B medians at the selection λ, in
    /// metric units. Positive when both directions move the intended way.
    pub effect: f64,
    /// `effect` divided by the baseline median.
    pub relative_effect: f64,
    /// Pooled A and B Fréchet distance at the reference λ.
    pub frechet_reference: f64,
    /// Pooled A and B Fréchet distance at the selection λ.
    pub frechet_selection: f64,
    pub exceeds_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSelection {
    pub attribute: String,
    pub metric: String,
    pub baseline_median: f64,
    /// Baseline interquartile range; a layer whose |effect| exceeds it lies
    /// outside the noise band.
    pub noise_band: f64,
    pub reference_lambda: f64,
    pub selection_lambda: f64,
    pub block_start: Option<usize>,
    pub block_end: Option<usize>,
    pub best_layer: Option<usize>,
    pub selection_error: Option<String>,
}

pub struct ScanOutcome {
    pub rows: Vec<RunResult>,
    pub summary: Vec<ConfigSummary>,
    pub scores: Vec<LayerScore>,
    pub selection: ScanSelection,
}

/// One row of the held-out evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub attribute: String,
    pub metric: String,
    pub direction: String,
    pub pole: String,
    pub lambda: f64,
    pub layer: String,
    pub strategy: String,
    pub n: usize,
    pub baseline_median: f64,
    pub baseline_iqr: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub steered_median: f64,
    pub steered_iqr: f64,
    pub steered_mean: f64,
    pub steered_std: f64,
    /// `|steered − baseline| / baseline` on medians.
    pub relative_shift: f64,
    pub signed_shift: f64,
    /// The same ratio on means.
    pub mean_relative_shift: f64,
    pub frechet: f64,
}

/// Unsteered generations from prompts naming each pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub attribute: String,
    pub metric: String,
    pub pole: String,
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub batch_size: usize,
    pub final_loss: f64,
    pub val_loss: f64,
    pub unigram_entropy: f64,
    pub corpus_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrainLogRow {
    step: usize,
    loss: f64,
    lr: f64,
    grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineKey {
    checkpoint_hash: String,
    base_seed: u64,
    generation: GenerationSection,
    prompts: Vec<Vec<usize>>,
}

/// A loaded checkpoint and its content hash.
pub struct Loaded {
    pub model: Model32,
    pub hash: String,
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let v = f()?;
        self.stages.push((name.to_string(), t0.elapsed().as_secs_f64()));
        Ok(v)
    }
}

/// Half the A–B median gap, the directional effect of a steering vector.
pub fn directional_effect(median_a: f64, median_b: f64) -> f64 {
    (median_a - median_b) / 2.0
}

/// Highest selection-λ effect among layers whose Fréchet score at the
/// selection λ is at most twice the score at the reference λ. Ties go to
/// the lower layer.
pub fn select_best_layer(scores: &[LayerScore]) -> Result<usize> {
    if scores.is_empty() {
        return Err(HarnessError::Experiment("layer scan is empty".into()));
    }
    let mut best: Option<&LayerScore> = None;
    for s in scores {
        let admissible = s.frechet_selection <= 2.0 * s.frechet_reference && s.effect.is_finite();
        if !admissible {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => s.effect > b.effect || (s.effect == b.effect && s.layer < b.layer),
        };
        if better {
            best = Some(s);
        }
    }
    best.map(|s| s.layer)
        .ok_or_else(|| HarnessError::Experiment("no layer satisfies the quality bound".into()))
}

/// The contiguous run of out-of-band layers with the largest total |effect|,
/// as inclusive layer bounds. Earlier runs win ties.
pub fn strongest_block(scores: &[LayerScore]) -> Option<(usize, usize)> {
    let mut sorted: Vec<&LayerScore> = scores.iter().collect();
    sorted.sort_by_key(|s| s.layer);
    let mut best: Option<((usize, usize), f64)> = None;
    let mut i = 0;
    while i < sorted.len() {
        if !sorted[i].exceeds_band {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].exceeds_band && sorted[j + 1].layer == sorted[j].layer + 1 {
            j += 1;
        }
        let total: f64 = sorted[i..=j].iter().map(|s| s.effect.abs()).sum();
        if best.is_none_or(|(_, t)| total > t) {
            best = Some(((sorted[i].layer, sorted[j].layer), total));
        }
        i = j + 1;
    }
    best.map(|(b, _)| b)
}

/// Mean pairwise cosine inside the block (off-diagonal) minus the mean
/// cosine of all pairs with at least one layer outside it. `None` when
/// either set of pairs is empty.
pub fn block_cosine_contrast(cosine: &[Vec<f64>], block: (usize, usize)) -> Option<f64> {
    let inside = |l: usize| l >= block.0 && l <= block.1;
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (i, row) in cosine.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            if inside(i + 1) && inside(j + 1) {
                si += c;
                ni += 1;
            } else {
                so += c;
                no += 1;
            }
        }
    }
    (ni > 0 && no > 0).then(|| si / ni as f64 - so / no as f64)
}

/// Fails when an evaluation prompt also appears in a steering set.
pub fn check_disjoint(eval: &PromptSet, steering: &[&PromptSet]) -> Result<()> {
    match steering.iter().find(|s| eval.overlaps(s)) {
        Some(s) => Err(HarnessError::PromptOverlap(s.name.clone())),
        None => Ok(()),
    }
}

fn rows_where<'a>(rows: &'a [RunResult], f: impl Fn(&RunResult) -> bool) -> Vec<&'a RunResult> {
    rows.iter().filter(|r| f(r)).collect()
}

fn stats_of(rows: &[&RunResult]) -> Option<GaussianStats> {
    gaussian_stats(&feature_vectors(rows)).ok()
}

/// NaN when either side has too few clips with features.
fn frechet_to(reference: Option<&GaussianStats>, rows: &[&RunResult]) -> f64 {
    match (reference, stats_of(rows)) {
        (Some(r), Some(s)) => frechet_distance(r, &s).unwrap_or(f64::NAN),
        _ => f64::NAN,
    }
}

pub struct Pipeline {
    pub cfg: Config,
    pub out: PathBuf,
    pub grammar: Grammar,
    pub vocab: TokenVocab,
    /// Print progress lines to stderr.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir();
        let grammar = Grammar::load(cfg.corpus.grammar_version)?;
        let vocab = build_vocab(cfg.corpus.grammar_version)?;
        Ok(Self {
            cfg,
            out,
            grammar,
            vocab,
            verbose: false,
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("steerlab: {}", msg.as_ref());
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.path("corpus.jsonl")
    }

    pub fn model_path(&self) -> PathBuf {
        self.path("model.mstr")
    }

    pub fn steering_path(&self, attr: Attribute) -> PathBuf {
        self.path(&format!("steering/{}.json", attr.name()))
    }

    pub fn experiment_dir(&self, experiment: &str, attr: Attribute) -> PathBuf {
        self.path(&format!("{experiment}/{}", attr.name()))
    }

    pub fn selection_path(&self, attr: Attribute) -> PathBuf {
        self.experiment_dir("scan", attr).join("selection.json")
    }

    // ----- corpus and training -----

    pub fn make_corpus(&self) -> Result<PathBuf> {
        let c = &self.cfg.corpus;
        let corpus = generate_corpus(&self.grammar, &self.vocab, c.n_clips, &UNIFORM_MIX, c.seed)?;
        crate::output::ensure_dir(&self.out)?;
        let path = self.corpus_path();
        write_corpus(&corpus, &path)?;
        self.note(format!("wrote {} clips to {}", c.n_clips, path.display()));
        Ok(path)
    }

    pub fn train(&self) -> Result<TrainSummary> {
        let corpus = read_corpus(&self.corpus_path())?;
        if corpus.header.grammar_version != self.cfg.corpus.grammar_version {
            return Err(HarnessError::Config(format!(
                "corpus uses grammar v{} but the config asks for v{}",
                corpus.header.grammar_version, self.cfg.corpus.grammar_version
            )));
        }
        let mcfg = self.cfg.model.model_config(self.vocab.len());
        let mut rng = RngState::new(derive_seed(&[self.cfg.model.init_seed, 0x1A]));
        let mut model = Model32::init(mcfg, self.vocab.clone(), &mut rng)?;
        let tcfg = self.cfg.train;
        let mut log = Vec::new();
        let t0 = Instant::now();
        train(&mut model, &corpus, &tcfg, |ev| {
            if let TrainEvent::Step { step, loss, lr, grad_norm } = ev {
                if self.verbose {
                    eprintln!(
                        "steerlab: step {step}/{} loss {loss:.4} ({:.0}s)",
                        tcfg.steps,
                        t0.elapsed().as_secs_f64()
                    );
                }
                log.push(TrainLogRow { step, loss, lr, grad_norm });
            }
        })?;
        let path = self.model_path();
        save_checkpoint(&model, &path)?;
        write_table(&self.path("train_log.csv"), &log)?;
        let summary = TrainSummary {
            steps: model.meta.steps,
            batch_size: tcfg.batch_size,
            final_loss: model.meta.final_loss,
            val_loss: model.meta.val_loss,
            unigram_entropy: model.meta.unigram_entropy,
            corpus_hash: model.meta.corpus_hash.clone(),
            checkpoint_hash: checkpoint_hash(&model)?,
        };
        write_json(&self.path("train_summary.json"), &summary)?;
        self.note(format!(
            "validation loss {:.4}, unigram entropy {:.4}",
            summary.val_loss, summary.unigram_entropy
        ));
        Ok(summary)
    }

    pub fn load_model(&self) -> Result<Loaded> {
        let model: Model32 = load_checkpoint(&self.model_path())?;
        let hash = checkpoint_hash(&model)?;
        Ok(Loaded { model, hash })
    }

    /// A model with fresh random weights, the null control of the scan.
    pub fn untrained_model(&self) -> Result<Loaded> {
        let mcfg = self.cfg.model.model_config(self.vocab.len());
        let mut rng = RngState::new(derive_seed(&[self.cfg.model.init_seed, 0x1A]));
        let model = Model32::init(mcfg, self.vocab.clone(), &mut rng)?;
        let hash = checkpoint_hash(&model)?;
        Ok(Loaded { model, hash })
    }

    // ----- prompt sets -----

    pub fn steering_sets(&self, attr: Attribute) -> Result<(PromptSet, PromptSet)> {
        let s = &self.cfg.steering;
        Ok(make_contrastive_sets(&self.grammar, &self.vocab, attr, s.n_prompts, s.seed)?)
    }

    /// Neutral prompts shared by the scan and both sweeps.
    pub fn sweep_prompts(&self) -> Result<PromptSet> {
        let e = &self.cfg.experiment;
        let mut p = make_eval_prompts(&self.grammar, &self.vocab, e.n, e.prompt_seed)?;
        p.name = "sweep".into();
        Ok(p)
    }

    /// Neutral prompts for the evaluation, disjoint from the sweep prompts.
    pub fn eval_prompts(&self) -> Result<PromptSet> {
        let e = &self.cfg.experiment;
        let sweep = self.sweep_prompts()?;
        let mut p = make_heldout_prompts(&self.grammar, &self.vocab, e.n, e.eval_seed, Some(&sweep))?;
        p.name = "eval".into();
        Ok(p)
    }

    // ----- steering vectors -----

    pub fn vectors_from(&self, loaded: &Loaded, a: &PromptSet, b: &PromptSet, attr: Attribute) -> Result<SteeringVectors32> {
        let ca = capture_eos_activations(&loaded.model, &loaded.hash, a)?;
        let cb = capture_eos_activations(&loaded.model, &loaded.hash, b)?;
        Ok(compute_diff_means(&ca, &cb, attr.name(), self.cfg.steering.seed)?)
    }

    pub fn extract(&self) -> Result<Vec<PathBuf>> {
        let loaded = self.load_model()?;
        let mut written = Vec::new();
        for &attr in &self.cfg.steering.attributes {
            let (a, b) = self.steering_sets(attr)?;
            let ca = capture_eos_activations(&loaded.model, &loaded.hash, &a)?;
            let cb = capture_eos_activations(&loaded.model, &loaded.hash, &b)?;
            let set = compute_diff_means(&ca, &cb, attr.name(), self.cfg.steering.seed)?;
            let path = self.steering_path(attr);
            crate::output::ensure_dir(path.parent().expect("steering dir"))?;
            save_steering(&set, &path)?;
            written.push(path.clone());

            let cos = cosine_similarity_matrix(&set)?;
            let l = set.num_layers;
            let header: Vec<String> =
                std::iter::once("layer".to_string()).chain((1..=l).map(|i| i.to_string())).collect();
            let recs: Vec<Vec<String>> = cos
                .iter()
                .enumerate()
                .map(|(i, row)| std::iter::once((i + 1).to_string()).chain(row.iter().map(|c| c.to_string())).collect())
                .collect();
            let stem = |s: &str| self.path(&format!("steering/{}_{s}.csv", attr.name()));
            write_records(&stem("cosine"), &header, &recs)?;

            let mut pca_recs = Vec::new();
            let mut kde_recs = Vec::new();
            for layer in 1..=l {
                let proj = pca_project(&ca, &cb, layer, 2)?;
                for (i, (pt, label)) in proj.points.iter().zip(&proj.labels).enumerate() {
                    pca_recs.push(vec![
                        layer.to_string(),
                        label.clone(),
                        i.to_string(),
                        pt[0].to_string(),
                        pt.get(1).copied().unwrap_or(0.0).to_string(),
                    ]);
                }
                let groups = split_points(&proj);
                let all: Vec<[f64; 2]> = groups.iter().flat_map(|(_, p)| p.iter().copied()).collect();
                let bounds = kde_bounds(&all, KDE_PAD)?;
                for (label, pts) in &groups {
                    let grid = kde_2d(pts, bounds, KDE_GRID)?;
                    for (iy, row) in grid.values.iter().enumerate() {
                        for (ix, v) in row.iter().enumerate() {
                            kde_recs.push(vec![
                                layer.to_string(),
                                label.clone(),
                                ix.to_string(),
                                iy.to_string(),
                                grid.xs[ix].to_string(),
                                grid.ys[iy].to_string(),
                                v.to_string(),
                            ]);
                        }
                    }
                }
            }
            let h = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
            write_records(&stem("pca"), &h(&["layer", "set", "index", "pc1", "pc2"]), &pca_recs)?;
            write_records(&stem("kde"), &h(&["layer", "set", "ix", "iy", "x", "y", "density"]), &kde_recs)?;
            self.note(format!("extracted {} vectors", attr.name()));
        }
        Ok(written)
    }

    pub fn load_vectors(&self, loaded: &Loaded, attr: Attribute) -> Result<SteeringVectors32> {
        Ok(load_steering(&self.steering_path(attr), Some(&loaded.hash))?)
    }

    pub fn selected_layer(&self, attr: Attribute) -> Result<usize> {
        if let Some(l) = self.cfg.experiment.layer {
            return Ok(l);
        }
        let path = self.selection_path(attr);
        let sel: ScanSelection = read_json(&path)?;
        sel.best_layer.ok_or_else(|| {
            HarnessError::Experiment(format!(
                "{} has no selected layer: {}",
                path.display(),
                sel.selection_error.unwrap_or_default()
            ))
        })
    }

    // ----- generation -----

    fn generate_rows(
        &self,
        model: &Model32,
        prompts: &PromptSet,
        hooks: &HookSet<f32>,
        ctx: &RowContext,
        wav_dir: Option<&Path>,
    ) -> Result<Vec<RunResult>> {
        let e = &self.cfg.experiment;
        run_prompts(model, prompts, &self.cfg.generation, e.base_seed, hooks, ctx, wav_dir)
    }

    /// Unsteered generations for a prompt set, cached under
    /// `baseline/<name>` and reused while the checkpoint, prompts, seed and
    /// sampling settings are unchanged.
    pub fn baseline(&self, loaded: &Loaded, prompts: &PromptSet) -> Result<Vec<RunResult>> {
        let dir = self.path(&format!("baseline/{}", prompts.name));
        let key = BaselineKey {
            checkpoint_hash: loaded.hash.clone(),
            base_seed: self.cfg.experiment.base_seed,
            generation: self.cfg.generation.clone(),
            prompts: prompts.prompts.clone(),
        };
        let ctx = RowContext::baseline("baseline", "-");
        let key_path = dir.join("key.json");
        let tok_path = dir.join("tokens.jsonl");
        if key_path.exists() && tok_path.exists() {
            if let Ok(stored) = read_json::<BaselineKey>(&key_path) {
                let lines = read_tokens(&tok_path)?;
                if stored == key && lines.len() == prompts.len() {
                    let mut rows = Vec::with_capacity(lines.len());
                    for t in lines {
                        let (metrics, _) = clip_metrics(&loaded.model.vocab, &t.tokens)?;
                        rows.push(RunResult {
                            experiment: ctx.experiment.clone(),
                            attribute: ctx.attribute.clone(),
                            prompt: t.prompt,
                            lambda: 0.0,
                            layer: ctx.layer,
                            strategy: ctx.strategy.clone(),
                            direction: ctx.direction,
                            seed: t.seed,
                            metrics,
                            tokens: t.tokens,
                        });
                    }
                    return Ok(rows);
                }
            }
        }
        self.note(format!("generating baseline for {} prompts ({})", prompts.len(), prompts.name));
        let rows = self.generate_rows(&loaded.model, prompts, &HookSet::new(), &ctx, None)?;
        write_results(&dir.join("results.csv"), &rows)?;
        write_tokens(&tok_path, &rows)?;
        write_json(&key_path, &key)?;
        Ok(rows)
    }

    fn summarize(
        &self,
        ctx: &RowContext,
        attr: Attribute,
        rows: &[&RunResult],
        base: &Summary,
        base_stats: Option<&GaussianStats>,
        prompts_per_set: usize,
    ) -> ConfigSummary {
        let s = Summary::of(&metric_values(rows, attr));
        ConfigSummary {
            experiment: ctx.experiment.clone(),
            attribute: attr.name().into(),
            metric: metric_name(attr).into(),
            lambda: ctx.lambda,
            layer: ctx.layer.to_string(),
            strategy: ctx.strategy.clone(),
            direction: ctx.direction.label().into(),
            prompts_per_set,
            n: s.n,
            median: s.median,
            iqr: s.iqr,
            mean: s.mean,
            std: s.std,
            relative_shift: relative_shift(base.median, s.median),
            signed_shift: signed_shift(base.median, s.median),
            frechet: if ctx.direction == Direction::Base {
                0.0
            } else {
                frechet_to(base_stats, rows)
            },
        }
    }

    fn baseline_summary(&self, experiment: &str, attr: Attribute, baseline: &[RunResult]) -> (Summary, ConfigSummary) {
        let refs: Vec<&RunResult> = baseline.iter().collect();
        let base = Summary::of(&metric_values(&refs, attr));
        let ctx = RowContext::baseline(experiment, attr.name());
        let row = self.summarize(&ctx, attr, &refs, &base, None, self.cfg.steering.n_prompts);
        (base, row)
    }

    // ----- layer scan -----

    /// Every layer's vector injected at all layers (one-to-all) for each
    /// scan λ and both directions.
    pub fn layer_scan(
        &self,
        loaded: &Loaded,
        vectors: &SteeringVectors32,
        attr: Attribute,
        prompts: &PromptSet,
        baseline: &[RunResult],
        lambdas: &[f64],
        experiment: &str,
    ) -> Result<ScanOutcome> {
        if lambdas.is_empty() {
            return Err(HarnessError::Config("layer scan needs at least one λ".into()));
        }
        let model = &loaded.model;
        let l = vectors.num_layers;
        if l != model.num_layers() {
            return Err(HarnessError::Experiment(format!(
                "steering vectors have {l} layers but the model has {}",
                model.num_layers()
            )));
        }
        let branches = self.cfg.steering.branches;
        let (base, base_row) = self.baseline_summary(experiment, attr, baseline);
        let base_refs: Vec<&RunResult> = baseline.iter().collect();
        let base_stats = stats_of(&base_refs);
        let mut rows = Vec::new();
        let mut summary = vec![base_row];
        for layer in 1..=l {
            self.note(format!("{experiment} {}: layer {layer}/{l}", attr.name()));
            for &lambda in lambdas {
                for dir in [Direction::A, Direction::B] {
                    let strategy = Strategy::OneToAll(layer);
                    let hooks = build_hookset(
                        &SteerConfig {
                            lambda: lambda * dir.sign(),
                            strategy,
                            branches,
                        },
                        vectors,
                    )?;
                    let ctx = RowContext {
                        experiment: experiment.into(),
                        attribute: attr.name().into(),
                        lambda,
                        layer: LayerLabel::One(layer),
                        strategy: strategy.label(),
                        direction: dir,
                    };
                    let batch = self.generate_rows(model, prompts, &hooks, &ctx, None)?;
                    let refs: Vec<&RunResult> = batch.iter().collect();
                    summary.push(self.summarize(&ctx, attr, &refs, &base, base_stats.as_ref(), vectors.n_a));
                    rows.extend(batch);
                }
            }
        }
        let lo = lambdas[0];
        let hi = *lambdas.last().unwrap();
        let scores: Vec<LayerScore> = (1..=l)
            .map(|layer| {
                let pick = |lambda: f64, dir: Direction| {
                    summary
                        .iter()
                        .find(|s| s.layer == layer.to_string() && s.lambda == lambda && s.direction == dir.label())
                        .map(|s| s.median)
                        .unwrap_or(f64::NAN)
                };
                let pooled = |lambda: f64| {
                    let r = rows_where(&rows, |r| r.layer == LayerLabel::One(layer) && r.lambda == lambda);
                    frechet_to(base_stats.as_ref(), &r)
                };
                let effect = directional_effect(pick(hi, Direction::A), pick(hi, Direction::B));
                LayerScore {
                    layer,
                    effect,
                    relative_effect: effect / base.median.abs(),
                    frechet_reference: pooled(lo),
                    frechet_selection: pooled(hi),
                    exceeds_band: effect.abs() > base.iqr,
                }
            })
            .collect();
        let block = strongest_block(&scores);
        let (best_layer, selection_error) = match select_best_layer(&scores) {
            Ok(l) => (Some(l), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let selection = ScanSelection {
            attribute: attr.name().into(),
            metric: metric_name(attr).into(),
            baseline_median: base.median,
            noise_band: base.iqr,
            reference_lambda: lo,
            selection_lambda: hi,
            block_start: block.map(|b| b.0),
            block_end: block.map(|b| b.1),
            best_layer,
            selection_error,
        };
        Ok(ScanOutcome {
            rows,
            summary,
            scores,
            selection,
        })
    }

    fn write_scan(&self, dir: &Path, outcome: &ScanOutcome) -> Result<()> {
        write_results(&dir.join("results.csv"), &outcome.rows)?;
        write_table(&dir.join("summary.csv"), &outcome.summary)?;
        write_table(&dir.join("layers.csv"), &outcome.scores)?;
        write_json(&dir.join("selection.json"), &outcome.selection)
    }

    pub fn scan_layers(&self, attr: Attribute) -> Result<ScanOutcome> {
        let loaded = self.load_model()?;
        let vectors = self.load_vectors(&loaded, attr)?;
        let prompts = self.sweep_prompts()?;
        let baseline = self.baseline(&loaded, &prompts)?;
        let outcome = self.layer_scan(
            &loaded,
            &vectors,
            attr,
            &prompts,
            &baseline,
            &self.cfg.experiment.scan_lambdas,
            "scan",
        )?;
        self.write_scan(&self.experiment_dir("scan", attr), &outcome)?;
        Ok(outcome)
    }

    /// The scan on a randomly initialised model with vectors extracted from
    /// it, at the selection λ only. Written under `scan_null/<attr>`.
    pub fn scan_untrained(&self, attr: Attribute) -> Result<ScanOutcome> {
        let loaded = self.untrained_model()?;
        let (a, b) = self.steering_sets(attr)?;
        let vectors = self.vectors_from(&loaded, &a, &b, attr)?;
        let mut prompts = self.sweep_prompts()?;
        prompts.name = "sweep_untrained".into();
        let baseline = self.baseline(&loaded, &prompts)?;
        let hi = *self.cfg.experiment.scan_lambdas.last().unwrap();
        let outcome = self.layer_scan(&loaded, &vectors, attr, &prompts, &baseline, &[hi], "scan_null")?;
        self.write_scan(&self.experiment_dir("scan_null", attr), &outcome)?;
        Ok(outcome)
    }

    fn steering_context(&self, experiment: &str, attr: Attribute, lambda: f64, layer: usize, dir: Direction) -> (RowContext, Strategy) {
        let strategy = self.cfg.experiment.strategy.at(layer);
        let label = match strategy {
            Strategy::OneToAll(l) => LayerLabel::One(l),
            Strategy::AllToAll => LayerLabel::All,
        };
        (
            RowContext {
                experiment: experiment.into(),
                attribute: attr.name().into(),
                lambda,
                layer: label,
                strategy: strategy.label(),
                direction: dir,
            },
            strategy,
        )
    }

    fn steered_rows(
        &self,
        loaded: &Loaded,
        vectors: &SteeringVectors32,
        prompts: &PromptSet,
        ctx: &RowContext,
        strategy: Strategy,
        wav_dir: Option<&Path>,
    ) -> Result<Vec<RunResult>> {
        let hooks = build_hookset(
            &SteerConfig {
                lambda: ctx.lambda * ctx.direction.sign(),
                strategy,
                branches: self.cfg.steering.branches,
            },
            vectors,
        )?;
        self.generate_rows(&loaded.model, prompts, &hooks, ctx, wav_dir)
    }

    // ----- λ sweep -----

    pub fn sweep_lambda(&self, attr: Attribute) -> Result<(Vec<RunResult>, Vec<ConfigSummary>)> {
        let loaded = self.load_model()?;
        let vectors = self.load_vectors(&loaded, attr)?;
        let layer = self.selected_layer(attr)?;
        let prompts = self.sweep_prompts()?;
        let baseline = self.baseline(&loaded, &prompts)?;
        let (base, base_row) = self.baseline_summary("lambda", attr, &baseline);
        let base_refs: Vec<&RunResult> = baseline.iter().collect();
        let base_stats = stats_of(&base_refs);
        let mut rows = Vec::new();
        let mut summary = vec![base_row];
        for &lambda in &self.cfg.experiment.lambda_grid {
            self.note(format!("lambda {}: λ = {lambda}", attr.name()));
            for dir in [Direction::A, Direction::B] {
                let (ctx, strategy) = self.steering_context("lambda", attr, lambda, layer, dir);
                let batch = self.steered_rows(&loaded, &vectors, &prompts, &ctx, strategy, None)?;
                if lambda == 0.0 {
                    for (r, b) in batch.iter().zip(&baseline) {
                        if r.tokens != b.tokens {
                            return Err(HarnessError::Experiment(format!(
                                "λ = 0 generation for prompt {} differs from the baseline",
                                r.prompt
                            )));
                        }
                    }
                }
                let refs: Vec<&RunResult> = batch.iter().collect();
                summary.push(self.summarize(&ctx, attr, &refs, &base, base_stats.as_ref(), vectors.n_a));
                rows.extend(batch);
            }
        }
        let dir = self.experiment_dir("lambda", attr);
        write_results(&dir.join("results.csv"), &rows)?;
        write_table(&dir.join("summary.csv"), &summary)?;
        Ok((rows, summary))
    }

    // ----- prompt-count sweep -----

    /// Distinct contrastive pairs, enough for disjoint slices of every size
    /// in the sweep.
    pub fn prompt_pool(&self, attr: Attribute) -> Result<(PromptSet, PromptSet)> {
        let need: usize = self.cfg.experiment.prompt_counts.iter().sum();
        let seed = derive_seed(&[self.cfg.steering.seed, NS_PROMPT_POOL]);
        let (mut a, mut b) = make_contrastive_sets(&self.grammar, &self.vocab, attr, need * 4, seed)?;
        let mut seen = HashSet::new();
        let keep: Vec<bool> = a.prompts.iter().map(|p| seen.insert(p.clone())).collect();
        let mut it = keep.iter();
        a.prompts.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        b.prompts.retain(|_| *it.next().unwrap());
        if a.len() < need {
            return Err(HarnessError::Experiment(format!(
                "insufficient prompts: the sweep needs {need} distinct pairs, the grammar produced {}",
                a.len()
            )));
        }
        a.prompts.truncate(need);
        b.prompts.truncate(need);
        Ok((a, b))
    }

    pub fn sweep_prompts_counts(&self, attr: Attribute) -> Result<(Vec<RunResult>, Vec<ConfigSummary>)> {
        let loaded = self.load_model()?;
        let layer = self.selected_layer(attr)?;
        let prompts = self.sweep_prompts()?;
        let baseline = self.baseline(&loaded, &prompts)?;
        let (base, base_row) = self.baseline_summary("prompts", attr, &baseline);
        let base_refs: Vec<&RunResult> = baseline.iter().collect();
        let base_stats = stats_of(&base_refs);
        let (pool_a, pool_b) = self.prompt_pool(attr)?;
        let lambda = self.cfg.experiment.prompt_sweep_lambda;
        let mut rows = Vec::new();
        let mut summary = vec![base_row];
        let mut offset = 0;
        for &n in &self.cfg.experiment.prompt_counts {
            self.note(format!("prompts {}: N = {n}", attr.name()));
            let slice = |p: &PromptSet| PromptSet {
                name: format!("{}_{n}", p.name),
                class: p.class,
                prompts: p.prompts[offset..offset + n].to_vec(),
            };
            let (a, b) = (slice(&pool_a), slice(&pool_b));
            offset += n;
            let vectors = self.vectors_from(&loaded, &a, &b, attr)?;
            for dir in [Direction::A, Direction::B] {
                let (ctx, strategy) = self.steering_context("prompts", attr, lambda, layer, dir);
                let batch = self.steered_rows(&loaded, &vectors, &prompts, &ctx, strategy, None)?;
                let refs: Vec<&RunResult> = batch.iter().collect();
                summary.push(self.summarize(&ctx, attr, &refs, &base, base_stats.as_ref(), n));
                rows.extend(batch);
            }
        }
        let dir = self.experiment_dir("prompts", attr);
        write_results(&dir.join("results.csv"), &rows)?;
        write_table(&dir.join("summary.csv"), &summary)?;
        Ok((rows, summary))
    }

    // ----- evaluation -----

    fn separation(&self, loaded: &Loaded, attr: Attribute) -> Result<Vec<SeparationRow>> {
        let e = &self.cfg.experiment;
        let (a, b) = make_contrastive_sets(&self.grammar, &self.vocab, attr, e.n, e.eval_seed)?;
        let mut out = Vec::new();
        for (set, dir) in [(a, Direction::A), (b, Direction::B)] {
            let ctx = RowContext::baseline("separation", attr.name());
            let rows = self.generate_rows(&loaded.model, &set, &HookSet::new(), &ctx, None)?;
            let refs: Vec<&RunResult> = rows.iter().collect();
            let s = Summary::of(&metric_values(&refs, attr));
            out.push(SeparationRow {
                attribute: attr.name().into(),
                metric: metric_name(attr).into(),
                pole: dir.pole(attr).into(),
                n: s.n,
                median: s.median,
                iqr: s.iqr,
                mean: s.mean,
                std: s.std,
            });
        }
        Ok(out)
    }

    pub fn eval(&self) -> Result<Vec<EvalRow>> {
        let e = &self.cfg.experiment;
        let prompts = self.eval_prompts()?;
        for &attr in &self.cfg.steering.attributes {
            let (a, b) = self.steering_sets(attr)?;
            check_disjoint(&prompts, &[&a, &b])?;
        }
        let loaded = self.load_model()?;
        let mut vectors = Vec::new();
        for &attr in &self.cfg.steering.attributes {
            vectors.push((attr, self.load_vectors(&loaded, attr)?, self.selected_layer(attr)?));
        }
        let baseline = self.baseline(&loaded, &prompts)?;
        let base_refs: Vec<&RunResult> = baseline.iter().collect();
        let base_stats = stats_of(&base_refs);
        let wav_dir = e.render_wav.then(|| self.path("eval/wav"));
        let mut rows = Vec::new();
        let mut table = Vec::new();
        let mut separation = Vec::new();
        for (attr, set, layer) in &vectors {
            let attr = *attr;
            let base = Summary::of(&metric_values(&base_refs, attr));
            for dir in [Direction::A, Direction::B] {
                self.note(format!("eval {} {}", attr.name(), dir.pole(attr)));
                let (ctx, strategy) = self.steering_context("eval", attr, e.eval_lambda, *layer, dir);
                let batch = self.steered_rows(&loaded, set, &prompts, &ctx, strategy, wav_dir.as_deref())?;
                let refs: Vec<&RunResult> = batch.iter().collect();
                let s = Summary::of(&metric_values(&refs, attr));
                table.push(EvalRow {
                    attribute: attr.name().into(),
                    metric: metric_name(attr).into(),
                    direction: dir.label().into(),
                    pole: dir.pole(attr).into(),
                    lambda: e.eval_lambda,
                    layer: ctx.layer.to_string(),
                    strategy: ctx.strategy.clone(),
                    n: s.n,
                    baseline_median: base.median,
                    baseline_iqr: base.iqr,
                    baseline_mean: base.mean,
                    baseline_std: base.std,
                    steered_median: s.median,
                    steered_iqr: s.iqr,
                    steered_mean: s.mean,
                    steered_std: s.std,
                    relative_shift: relative_shift(base.median, s.median),
                    signed_shift: signed_shift(base.median, s.median),
                    mean_relative_shift: relative_shift(base.mean, s.mean),
                    frechet: frechet_to(base_stats.as_ref(), &refs),
                });
                rows.extend(batch);
            }
            separation.extend(self.separation(&loaded, attr)?);
        }
        let dir = self.path("eval");
        write_results(&dir.join("results.csv"), &rows)?;
        write_table(&dir.join("summary.csv"), &table)?;
        write_table(&dir.join("separation.csv"), &separation)?;
        Ok(table)
    }

    // ----- single runs -----

    /// Unsteered generations on the sweep prompts, written to `generate/`.
    pub fn generate(&self) -> Result<Vec<RunResult>> {
        let loaded = self.load_model()?;
        let prompts = self.sweep_prompts()?;
        let ctx = RowContext::baseline("generate", "-");
        let rows = self.generate_rows(&loaded.model, &prompts, &HookSet::new(), &ctx, None)?;
        let dir = self.path("generate");
        write_results(&dir.join("results.csv"), &rows)?;
        write_tokens(&dir.join("tokens.jsonl"), &rows)?;
        Ok(rows)
    }

    /// Steered generations on the sweep prompts, written to `steer/`.
    pub fn steer(&self, attr: Attribute, lambda: f64, dir: Direction) -> Result<Vec<RunResult>> {
        let loaded = self.load_model()?;
        let vectors = self.load_vectors(&loaded, attr)?;
        let layer = self.selected_layer(attr)?;
        let prompts = self.sweep_prompts()?;
        let (ctx, strategy) = self.steering_context("steer", attr, lambda, layer, dir);
        let wav_dir = self.cfg.experiment.render_wav.then(|| self.path("steer/wav"));
        let rows = self.steered_rows(&loaded, &vectors, &prompts, &ctx, strategy, wav_dir.as_deref())?;
        let out = self.path("steer");
        write_results(&out.join("results.csv"), &rows)?;
        write_tokens(&out.join("tokens.jsonl"), &rows)?;
        Ok(rows)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Timings> {
        ensure_dir(&self.out)?;
        let cfg_path = self.path("config.toml");
        std::fs::write(&cfg_path, self.cfg.to_toml()).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let mut t = Timings::default();
        t.time("corpus", || self.make_corpus())?;
        t.time("train", || self.train())?;
        t.time("extract", || self.extract())?;
        for &attr in &self.cfg.steering.attributes {
            t.time(&format!("scan {}", attr.name()), || self.scan_layers(attr))?;
            t.time(&format!("lambda {}", attr.name()), || self.sweep_lambda(attr))?;
            t.time(&format!("prompts {}", attr.name()), || self.sweep_prompts_counts(attr))?;
            t.time(&format!("null scan {}", attr.name()), || self.scan_untrained(attr))?;
        }
        t.time("eval", || self.eval())?;
        t.time("report", || crate::report::write_report(self))?;
        write_json(&self.path("timings.json"), &t)?;
        Ok(t)
    }
}
