//! Residual-stream read/write hooks.
//!
//! The hook point is the residual stream at the output of each block
//! (after both residual adds, before the final layer norm). Layers are
//! numbered from 1. At a hooked layer the injection is added first and the
//! capture reads the result, so a capture taken under injection `v` equals
//! the baseline capture plus `v`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Classifier-free guidance branch a forward pass belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Cond,
    Uncond,
}

/// Branch filter for injections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branches {
    Cond,
    Uncond,
    #[default]
    Both,
}

impl Branches {
    pub fn admits(self, branch: Branch) -> bool {
        matches!(
            (self, branch),
            (Branches::Both, _) | (Branches::Cond, Branch::Cond) | (Branches::Uncond, Branch::Uncond)
        )
    }
}

impl std::str::FromStr for Branches {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cond" => Ok(Branches::Cond),
            "uncond" => Ok(Branches::Uncond),
            "both" => Ok(Branches::Both),
            other => Err(Error::Invalid(format!("unknown branch filter {other:?}"))),
        }
    }
}

/// Where a token sits relative to the end-of-prompt marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionKind {
    Prompt,
    Sep,
    Music,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    pub branch: Branch,
    pub position: PositionKind,
}

/// Supplies the additive vector for a layer at a site, if any.
pub trait Injector<T>: Send + Sync {
    fn vector(&self, layer: usize, site: Site) -> Option<&[T]>;
}

/// Fixed per-layer vectors applied at every position of the admitted
/// branches.
#[derive(Debug, Clone)]
pub struct LayerInjector<T> {
    /// Index `l - 1` holds layer `l`'s vector.
    vectors: Vec<Option<Vec<T>>>,
    branches: Branches,
}

impl<T: Scalar> LayerInjector<T> {
    pub fn new(num_layers: usize, branches: Branches) -> Self {
        Self {
            vectors: vec![None; num_layers],
            branches,
        }
    }

    pub fn set(&mut self, layer: usize, v: Vec<T>) -> Result<()> {
        if layer == 0 || layer > self.vectors.len() {
            return Err(Error::Invalid(format!(
                "layer {layer} outside [1, {}]",
                self.vectors.len()
            )));
        }
        self.vectors[layer - 1] = Some(v);
        Ok(())
    }

    pub fn get(&self, layer: usize) -> Option<&[T]> {
        self.vectors.get(layer.wrapping_sub(1))?.as_deref()
    }

    pub fn branches(&self) -> Branches {
        self.branches
    }
}

impl<T: Scalar> Injector<T> for LayerInjector<T> {
    fn vector(&self, layer: usize, site: Site) -> Option<&[T]> {
        if !self.branches.admits(site.branch) {
            return None;
        }
        self.get(layer)
    }
}

/// Which layers to read and what to add.
#[derive(Clone, Default)]
pub struct HookSet<T> {
    pub capture: BTreeSet<usize>,
    pub inject: Option<Arc<dyn Injector<T>>>,
}

impl<T> fmt::Debug for HookSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HookSet")
            .field("capture", &self.capture)
            .field("inject", &self.inject.is_some())
            .finish()
    }
}

impl<T: Scalar> HookSet<T> {
    pub fn new() -> Self {
        Self {
            capture: BTreeSet::new(),
            inject: None,
        }
    }

    pub fn capture_all(num_layers: usize) -> Self {
        Self {
            capture: (1..=num_layers).collect(),
            inject: None,
        }
    }

    pub fn with_capture(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.capture.extend(layers);
        self
    }

    pub fn with_injector(mut self, inject: Arc<dyn Injector<T>>) -> Self {
        self.inject = Some(inject);
        self
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if let Some(&l) = self.capture.iter().find(|&&l| l == 0 || l > num_layers) {
            return Err(Error::Invalid(format!("capture layer {l} outside [1, {num_layers}]")));
        }
        Ok(())
    }
}
