//! Fixed-arity prompt grammar and the prompt sets built from it.
//!
//! Every prompt is `<tempo-adj> <timbre-adj> <genre> <instrument> piece SEP`,
//! six tokens, so the SEP token always sits at index 5.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngState};

use super::vocab::TokenVocab;

pub const PROMPT_LEN: usize = 6;
pub const SEP_INDEX: usize = PROMPT_LEN - 1;

const GRAMMAR_V1: &str = include_str!("../../data/grammar_v1.json");

/// Seed namespaces keep corpus, contrastive and evaluation draws disjoint.
pub(crate) const NS_CORPUS: u64 = 0xC0;
pub(crate) const NS_CONTRAST: u64 = 0xC1;
pub(crate) const NS_EVAL: u64 = 0xC2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tempo {
    Slow,
    Neutral,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timbre {
    Dark,
    Neutral,
    Bright,
}

impl Tempo {
    pub const ALL: [Tempo; 3] = [Tempo::Slow, Tempo::Neutral, Tempo::Fast];
    pub fn name(self) -> &'static str {
        match self {
            Tempo::Slow => "slow",
            Tempo::Neutral => "neutral",
            Tempo::Fast => "fast",
        }
    }
}

impl Timbre {
    pub const ALL: [Timbre; 3] = [Timbre::Dark, Timbre::Neutral, Timbre::Bright];
    pub fn name(self) -> &'static str {
        match self {
            Timbre::Dark => "dark",
            Timbre::Neutral => "neutral",
            Timbre::Bright => "bright",
        }
    }
}

/// One value on each attribute axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeClass {
    pub tempo: Tempo,
    pub timbre: Timbre,
}

impl AttributeClass {
    pub const NEUTRAL: AttributeClass = AttributeClass {
        tempo: Tempo::Neutral,
        timbre: Timbre::Neutral,
    };

    pub fn new(tempo: Tempo, timbre: Timbre) -> Self {
        Self { tempo, timbre }
    }

    /// The nine combinations in tempo-major order.
    pub fn all() -> impl Iterator<Item = AttributeClass> {
        Tempo::ALL
            .into_iter()
            .flat_map(|t| Timbre::ALL.into_iter().map(move |b| AttributeClass::new(t, b)))
    }

    pub fn key(&self) -> String {
        format!("{}/{}", self.tempo.name(), self.timbre.name())
    }
}

impl fmt::Display for AttributeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// The steerable axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Tempo,
    Timbre,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Tempo => "tempo",
            Attribute::Timbre => "timbre",
        }
    }

    /// Class of the A set (fast or bright) and of the B set (slow or dark).
    pub fn poles(self) -> (AttributeClass, AttributeClass) {
        match self {
            Attribute::Tempo => (
                AttributeClass::new(Tempo::Fast, Timbre::Neutral),
                AttributeClass::new(Tempo::Slow, Timbre::Neutral),
            ),
            Attribute::Timbre => (
                AttributeClass::new(Tempo::Neutral, Timbre::Bright),
                AttributeClass::new(Tempo::Neutral, Timbre::Dark),
            ),
        }
    }

    pub fn pole_names(self) -> (&'static str, &'static str) {
        match self {
            Attribute::Tempo => ("fast", "slow"),
            Attribute::Timbre => ("bright", "dark"),
        }
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tempo" => Ok(Attribute::Tempo),
            "timbre" => Ok(Attribute::Timbre),
            other => Err(Error::Invalid(format!("unknown attribute {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct AxisPools {
    #[serde(alias = "fast", alias = "bright")]
    up: Vec<String>,
    #[serde(alias = "slow", alias = "dark")]
    down: Vec<String>,
    neutral: Vec<String>,
}

/// Word pools of one grammar version.
#[derive(Debug, Clone, Deserialize)]
pub struct Grammar {
    pub version: u32,
    tempo: AxisPools,
    timbre: AxisPools,
    genres: Vec<String>,
    instruments: Vec<String>,
    closing: String,
}

impl Grammar {
    pub fn load(version: u32) -> Result<Self> {
        let text = match version {
            1 => GRAMMAR_V1,
            v => return Err(Error::Invalid(format!("unknown grammar version {v}"))),
        };
        let g: Grammar = serde_json::from_str(text)?;
        for pools in [&g.tempo, &g.timbre] {
            if pools.up.len() < 8 || pools.down.len() < 8 || pools.up.len() != pools.down.len() {
                return Err(Error::Format(
                    "marked pools need at least 8 words and equal sizes".into(),
                ));
            }
        }
        Ok(g)
    }

    pub(crate) fn all_words(&self) -> impl Iterator<Item = &str> {
        let t = &self.tempo;
        let b = &self.timbre;
        t.up.iter()
            .chain(&t.down)
            .chain(&t.neutral)
            .chain(&b.up)
            .chain(&b.down)
            .chain(&b.neutral)
            .chain(&self.genres)
            .chain(&self.instruments)
            .chain(std::iter::once(&self.closing))
            .map(String::as_str)
    }

    pub fn tempo_pool(&self, tempo: Tempo) -> &[String] {
        match tempo {
            Tempo::Fast => &self.tempo.up,
            Tempo::Slow => &self.tempo.down,
            Tempo::Neutral => &self.tempo.neutral,
        }
    }

    pub fn timbre_pool(&self, timbre: Timbre) -> &[String] {
        match timbre {
            Timbre::Bright => &self.timbre.up,
            Timbre::Dark => &self.timbre.down,
            Timbre::Neutral => &self.timbre.neutral,
        }
    }

    /// Renders one prompt for `class`. The four slot draws happen in a
    /// fixed order with one index draw each, so prompts rendered from equal
    /// rng states for classes that differ on one axis differ only in that
    /// axis's word.
    pub fn render_prompt(&self, vocab: &TokenVocab, class: AttributeClass, rng: &mut RngState) -> Result<Vec<usize>> {
        let tempo = self.tempo_pool(class.tempo);
        let timbre = self.timbre_pool(class.timbre);
        let words = [
            slot(tempo, rng),
            slot(timbre, rng),
            slot(&self.genres, rng),
            slot(&self.instruments, rng),
            self.closing.as_str(),
        ];
        let mut ids = vocab.tokenize(&words)?;
        ids.push(vocab.sep());
        Ok(ids)
    }
}

// Exactly one 64-bit draw per slot whatever the pool size, which keeps
// streams aligned between classes.
fn slot<'a>(pool: &'a [String], rng: &mut RngState) -> &'a str {
    let i = (rng.uniform() * pool.len() as f64) as usize;
    &pool[i.min(pool.len() - 1)]
}

/// A named list of prompts sharing one attribute class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub name: String,
    pub class: AttributeClass,
    pub prompts: Vec<Vec<usize>>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn overlaps(&self, other: &PromptSet) -> bool {
        let mine: HashSet<&Vec<usize>> = self.prompts.iter().collect();
        other.prompts.iter().any(|p| mine.contains(p))
    }

    pub fn validate(&self, vocab: &TokenVocab) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::Invalid(format!("prompt set {} is empty", self.name)));
        }
        if self.prompts.iter().any(|p| p.last() != Some(&vocab.sep())) {
            return Err(Error::MissingSep);
        }
        Ok(())
    }
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Paired contrastive sets `(S_A, S_B)` of `n` prompts each. Prompt `i` of
/// both sets comes from the same rng stream, so the sets differ only in the
/// marked-axis adjective.
pub fn make_contrastive_sets(
    grammar: &Grammar,
    vocab: &TokenVocab,
    attribute: Attribute,
    n: usize,
    seed: u64,
) -> Result<(PromptSet, PromptSet)> {
    if n == 0 {
        return Err(Error::Invalid("contrastive sets need n >= 1".into()));
    }
    let (class_a, class_b) = attribute.poles();
    let (name_a, name_b) = attribute.pole_names();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let s = derive_seed(&[seed, NS_CONTRAST, attribute as u64, i as u64]);
        a.push(grammar.render_prompt(vocab, class_a, &mut RngState::new(s))?);
        b.push(grammar.render_prompt(vocab, class_b, &mut RngState::new(s))?);
    }
    Ok((
        PromptSet {
            name: format!("S_{}", capitalized(name_a)),
            class: class_a,
            prompts: a,
        },
        PromptSet {
            name: format!("S_{}", capitalized(name_b)),
            class: class_b,
            prompts: b,
        },
    ))
}

/// `n` distinct fully neutral prompts.
pub fn make_eval_prompts(grammar: &Grammar, vocab: &TokenVocab, n: usize, seed: u64) -> Result<PromptSet> {
    make_heldout_prompts(grammar, vocab, n, seed, None)
}

/// `n` distinct neutral prompts, none of which appear in `exclude`.
pub fn make_heldout_prompts(
    grammar: &Grammar,
    vocab: &TokenVocab,
    n: usize,
    seed: u64,
    exclude: Option<&PromptSet>,
) -> Result<PromptSet> {
    if n == 0 {
        return Err(Error::Invalid("evaluation set needs n >= 1".into()));
    }
    let capacity = grammar.tempo_pool(Tempo::Neutral).len()
        * grammar.timbre_pool(Timbre::Neutral).len()
        * grammar.genres.len()
        * grammar.instruments.len();
    let excluded: HashSet<Vec<usize>> = exclude.map(|e| e.prompts.iter().cloned().collect()).unwrap_or_default();
    if n + excluded.len() > capacity {
        return Err(Error::Invalid(format!(
            "cannot draw {n} distinct neutral prompts from {capacity} combinations"
        )));
    }
    let mut rng = RngState::new(derive_seed(&[seed, NS_EVAL]));
    let mut seen = HashSet::new();
    let mut prompts = Vec::with_capacity(n);
    while prompts.len() < n {
        let p = grammar.render_prompt(vocab, AttributeClass::NEUTRAL, &mut rng)?;
        if excluded.contains(&p) || !seen.insert(p.clone()) {
            continue;
        }
        prompts.push(p);
    }
    Ok(PromptSet {
        name: format!("eval_{seed}"),
        class: AttributeClass::NEUTRAL,
        prompts,
    })
}
