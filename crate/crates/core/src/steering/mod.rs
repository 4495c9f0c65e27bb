//! Difference-in-means steering vectors and their injection.
//!
//! For two prompt sets A and B the vector at layer `l` is
//! `Δ[l] = mean_A h_l − mean_B h_l`, where `h_l` is the residual stream at
//! the SEP position after block `l`. Steering adds `λ·Δ` to the residual
//! stream during generation.

mod geometry;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use geometry::{
    cosine_similarity_matrix, kde_2d, kde_bounds, pca_project, pca_rows, scott_bandwidth, split_points, KdeGrid, PcaProjection,
};

use crate::corpus::PromptSet;
use crate::error::{Error, Result};
use crate::model::{Branches, HookSet, LayerInjector, Model};
use crate::scalar::Scalar;

pub const STEERING_FORMAT: &str = "steerlab-steering";
pub const STEERING_VERSION: u32 = 1;

/// SEP-position activations of one prompt set at every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache<T> {
    pub set_name: String,
    pub checkpoint_hash: String,
    pub num_layers: usize,
    pub d_model: usize,
    /// `vectors[p][l - 1]` is prompt `p` at layer `l`.
    pub vectors: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> ActivationCache<T> {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &[T]> {
        self.vectors.iter().map(move |p| p[layer - 1].as_slice())
    }
}

/// Runs each prompt once, capturing every layer at its SEP position.
pub fn capture_eos_activations<T: Scalar>(
    model: &Model<T>,
    checkpoint_hash: &str,
    prompts: &PromptSet,
) -> Result<ActivationCache<T>> {
    let sep = model.vocab.sep();
    let l = model.num_layers();
    let hooks = HookSet::capture_all(l);
    let mut vectors = Vec::with_capacity(prompts.len());
    for p in &prompts.prompts {
        let pos = p.iter().rposition(|&t| t == sep).ok_or(Error::MissingSep)?;
        let (_, caps) = model.forward_full(&p[..=pos], &hooks)?;
        let per_layer = (1..=l).map(|layer| caps[&layer].row(pos).to_vec()).collect();
        vectors.push(per_layer);
    }
    Ok(ActivationCache {
        set_name: prompts.name.clone(),
        checkpoint_hash: checkpoint_hash.to_string(),
        num_layers: l,
        d_model: model.d_model(),
        vectors,
    })
}

/// Per-layer means of two caches and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVectorSet<T = f32> {
    pub attribute: String,
    pub set_a: String,
    pub set_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub num_layers: usize,
    pub d_model: usize,
    pub mu_a: Vec<Vec<T>>,
    pub mu_b: Vec<Vec<T>>,
    pub delta: Vec<Vec<T>>,
}

impl<T: Scalar> SteeringVectorSet<T> {
    /// `Δ[layer]`, 1-based.
    pub fn delta(&self, layer: usize) -> Result<&[T]> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::Invalid(format!("layer {layer} outside [1, {}]", self.num_layers)));
        }
        Ok(&self.delta[layer - 1])
    }
}

fn layer_means<T: Scalar>(cache: &ActivationCache<T>) -> Vec<Vec<T>> {
    (1..=cache.num_layers)
        .map(|l| {
            let mut acc = vec![0.0f64; cache.d_model];
            for v in cache.layer(l) {
                for (a, &x) in acc.iter_mut().zip(v) {
                    *a += x.to_f64c();
                }
            }
            acc.iter().map(|&s| T::lit(s / cache.len() as f64)).collect()
        })
        .collect()
}

pub fn compute_diff_means<T: Scalar>(
    a: &ActivationCache<T>,
    b: &ActivationCache<T>,
    attribute: &str,
    seed: u64,
) -> Result<SteeringVectorSet<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("difference of means needs two non-empty sets".into()));
    }
    if a.checkpoint_hash != b.checkpoint_hash {
        return Err(Error::HashMismatch {
            expected: a.checkpoint_hash.clone(),
            found: b.checkpoint_hash.clone(),
        });
    }
    if a.num_layers != b.num_layers || a.d_model != b.d_model {
        return Err(Error::Shape("activation caches come from different shapes".into()));
    }
    let mu_a = layer_means(a);
    let mu_b = layer_means(b);
    let delta = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p - q).collect())
        .collect();
    Ok(SteeringVectorSet {
        attribute: attribute.to_string(),
        set_a: a.set_name.clone(),
        set_b: b.set_name.clone(),
        n_a: a.len(),
        n_b: b.len(),
        checkpoint_hash: a.checkpoint_hash.clone(),
        seed,
        num_layers: a.num_layers,
        d_model: a.d_model,
        mu_a,
        mu_b,
        delta,
    })
}

/// Which vector each layer receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layer", rename_all = "snake_case")]
pub enum Strategy {
    /// Every layer receives `Δ[l_best]`.
    OneToAll(usize),
    /// Layer `l` receives `Δ[l]`.
    AllToAll,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::OneToAll(l) => format!("one_to_all:{l}"),
            Strategy::AllToAll => "all_to_all".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerConfig {
    pub lambda: f64,
    pub strategy: Strategy,
    #[serde(default)]
    pub branches: Branches,
}

/// Injection hooks for `cfg`: λ times the chosen Δ at every layer, for the
/// admitted branches.
pub fn build_hookset<T: Scalar>(cfg: &SteerConfig, vectors: &SteeringVectorSet<T>) -> Result<HookSet<T>> {
    let l = vectors.num_layers;
    let lam = T::lit(cfg.lambda);
    let mut inj = LayerInjector::new(l, cfg.branches);
    for layer in 1..=l {
        let src = match cfg.strategy {
            Strategy::OneToAll(best) => vectors.delta(best)?,
            Strategy::AllToAll => vectors.delta(layer)?,
        };
        inj.set(layer, src.iter().map(|&v| lam * v).collect())?;
    }
    Ok(HookSet::new().with_injector(Arc::new(inj)))
}

/// Injection of `λ·v` at a single layer only, used by the layer scan.
pub fn single_layer_hookset<T: Scalar>(
    num_layers: usize,
    layer: usize,
    v: &[T],
    lambda: f64,
    branches: Branches,
) -> Result<HookSet<T>> {
    let lam = T::lit(lambda);
    let mut inj = LayerInjector::new(num_layers, branches);
    inj.set(layer, v.iter().map(|&x| lam * x).collect())?;
    Ok(HookSet::new().with_injector(Arc::new(inj)))
}

#[derive(Serialize, Deserialize)]
struct SteeringFile<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    set: SteeringVectorSet<T>,
}

pub fn save_steering<T: Scalar + Serialize>(set: &SteeringVectorSet<T>, path: &Path) -> Result<()> {
    let doc = SteeringFile {
        format: STEERING_FORMAT.into(),
        version: STEERING_VERSION,
        set: set.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&doc)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a steering file; with `expected_hash` the file must have been
/// computed against that checkpoint.
pub fn load_steering<T>(path: &Path, expected_hash: Option<&str>) -> Result<SteeringVectorSet<T>>
where
    T: Scalar + for<'de> Deserialize<'de>,
{
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: SteeringFile<T> =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if doc.format != STEERING_FORMAT || doc.version != STEERING_VERSION {
        return Err(Error::Format(format!(
            "unsupported steering file {} v{}",
            doc.format, doc.version
        )));
    }
    let s = doc.set;
    let shape_ok = [&s.mu_a, &s.mu_b, &s.delta]
        .iter()
        .all(|m| m.len() == s.num_layers && m.iter().all(|v| v.len() == s.d_model));
    if !shape_ok {
        return Err(Error::Format("steering arrays do not match num_layers x d_model".into()));
    }
    if let Some(h) = expected_hash {
        if h != s.checkpoint_hash {
            return Err(Error::HashMismatch {
                expected: h.to_string(),
                found: s.checkpoint_hash.clone(),
            });
        }
    }
    Ok(s)
}
