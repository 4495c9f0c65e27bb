//! Token vocabulary: structural markers, prompt words and music events.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grammar::Grammar;

pub const PITCH_MIN: u8 = 36;
pub const PITCH_MAX: u8 = 84;
pub const NUM_PITCHES: usize = (PITCH_MAX - PITCH_MIN + 1) as usize;
pub const NUM_DURATIONS: usize = 32;
pub const NUM_BRIGHTNESS: usize = 8;
/// Duration grid step in seconds (`DUR_k` is `k` steps long).
pub const DUR_STEP_SECS: f64 = 0.025;

pub const NULL: &str = "NULL";
pub const SEP: &str = "SEP";
pub const END: &str = "END";

/// What a token id denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Null,
    Sep,
    End,
    Word,
    Pitch(u8),
    /// Inter-onset interval in grid steps, 1..=32.
    Dur(u8),
    /// Harmonic roll-off level, 0..=7.
    Bright(u8),
}

/// Dense, versioned token table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct TokenVocab {
    grammar_version: u32,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    word_start: usize,
    pitch_start: usize,
    dur_start: usize,
    bright_start: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    grammar_version: u32,
    tokens: Vec<String>,
}

impl From<TokenVocab> for VocabRepr {
    fn from(v: TokenVocab) -> Self {
        VocabRepr {
            grammar_version: v.grammar_version,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabRepr> for TokenVocab {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        let built = build_vocab(r.grammar_version)?;
        if built.tokens != r.tokens {
            return Err(Error::Format(format!(
                "token table does not match grammar version {}",
                r.grammar_version
            )));
        }
        Ok(built)
    }
}

/// Builds the vocabulary for a grammar version. Ids are assigned in a
/// fixed order: NULL, SEP, END, prompt words in grammar order, then
/// PITCH_36..PITCH_84, DUR_1..DUR_32, BRIGHT_0..BRIGHT_7.
pub fn build_vocab(grammar_version: u32) -> Result<TokenVocab> {
    let grammar = Grammar::load(grammar_version)?;
    let mut tokens: Vec<String> = vec![NULL.into(), SEP.into(), END.into()];
    let word_start = tokens.len();
    for w in grammar.all_words() {
        if !tokens.iter().any(|t| t == w) {
            tokens.push(w.to_string());
        }
    }
    let pitch_start = tokens.len();
    tokens.extend((PITCH_MIN..=PITCH_MAX).map(|p| format!("PITCH_{p}")));
    let dur_start = tokens.len();
    tokens.extend((1..=NUM_DURATIONS).map(|k| format!("DUR_{k}")));
    let bright_start = tokens.len();
    tokens.extend((0..NUM_BRIGHTNESS).map(|b| format!("BRIGHT_{b}")));
    let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(TokenVocab {
        grammar_version,
        tokens,
        index,
        word_start,
        pitch_start,
        dur_start,
        bright_start,
    })
}

impl TokenVocab {
    pub fn grammar_version(&self) -> u32 {
        self.grammar_version
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn null(&self) -> usize {
        0
    }

    pub fn sep(&self) -> usize {
        1
    }

    pub fn end(&self) -> usize {
        2
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::UnknownToken {
            id,
            vocab_size: self.len(),
        })
    }

    pub fn kind(&self, id: usize) -> Result<TokenKind> {
        if id >= self.len() {
            return Err(Error::UnknownToken {
                id,
                vocab_size: self.len(),
            });
        }
        Ok(match id {
            0 => TokenKind::Null,
            1 => TokenKind::Sep,
            2 => TokenKind::End,
            i if i < self.pitch_start => TokenKind::Word,
            i if i < self.dur_start => TokenKind::Pitch(PITCH_MIN + (i - self.pitch_start) as u8),
            i if i < self.bright_start => TokenKind::Dur(1 + (i - self.dur_start) as u8),
            i => TokenKind::Bright((i - self.bright_start) as u8),
        })
    }

    pub fn pitch(&self, midi: u8) -> usize {
        debug_assert!((PITCH_MIN..=PITCH_MAX).contains(&midi));
        self.pitch_start + (midi - PITCH_MIN) as usize
    }

    pub fn dur(&self, steps: u8) -> usize {
        debug_assert!((1..=NUM_DURATIONS as u8).contains(&steps));
        self.dur_start + (steps - 1) as usize
    }

    pub fn bright(&self, level: u8) -> usize {
        debug_assert!((level as usize) < NUM_BRIGHTNESS);
        self.bright_start + level as usize
    }

    pub fn word_ids(&self) -> std::ops::Range<usize> {
        self.word_start..self.pitch_start
    }

    pub fn pitch_ids(&self) -> std::ops::Range<usize> {
        self.pitch_start..self.dur_start
    }

    pub fn dur_ids(&self) -> std::ops::Range<usize> {
        self.dur_start..self.bright_start
    }

    pub fn bright_ids(&self) -> std::ops::Range<usize> {
        self.bright_start..self.len()
    }

    pub fn tokenize<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counted() {
        let a = build_vocab(1).unwrap();
        let b = build_vocab(1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pitch_ids().len(), 49);
        assert_eq!(a.dur_ids().len(), 32);
        assert_eq!(a.bright_ids().len(), 8);
        assert!(a.len() <= 200);
    }

    #[test]
    fn unknown_version() {
        assert!(build_vocab(99).is_err());
    }

    #[test]
    fn round_trip_all_tokens() {
        let v = build_vocab(1).unwrap();
        let ids: Vec<usize> = (0..v.len()).collect();
        let words = v.detokenize(&ids).unwrap();
        assert_eq!(v.tokenize(&words).unwrap(), ids);
    }

    #[test]
    fn kinds() {
        let v = build_vocab(1).unwrap();
        assert_eq!(v.kind(v.pitch(60)).unwrap(), TokenKind::Pitch(60));
        assert_eq!(v.kind(v.dur(20)).unwrap(), TokenKind::Dur(20));
        assert_eq!(v.kind(v.bright(7)).unwrap(), TokenKind::Bright(7));
        assert_eq!(v.kind(v.sep()).unwrap(), TokenKind::Sep);
        assert_eq!(v.kind(v.id("calm").unwrap()).unwrap(), TokenKind::Word);
        assert!(v.kind(v.len()).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: TokenVocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let tampered = s.replace("calm", "cool");
        assert!(serde_json::from_str::<TokenVocab>(&tampered).is_err());
    }
}
