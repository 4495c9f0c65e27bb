//! Corpus JSONL files.
//!
//! Line 1 is a header record, every following line one clip:
//!
//! ```text
//! {"kind":"header","grammar_version":1,"seed":7,"n_clips":2,"counts":{"fast/bright":1,...}}
//! {"kind":"clip","index":0,"tempo":"fast","timbre":"bright","prompt":[..],"events":[..],"truth_bpm":..,"truth_brightness":..}
//! ```
//!
//! Clip `i` is drawn from its own stream derived from `(seed, i)`, so the
//! file does not depend on generation order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngState};

use super::clip::{sample_clip, Clip};
use super::grammar::{AttributeClass, Grammar, Tempo, Timbre, NS_CORPUS};
use super::vocab::TokenVocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub kind: String,
    pub grammar_version: u32,
    pub seed: u64,
    pub n_clips: usize,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClipRecord {
    kind: String,
    index: usize,
    tempo: Tempo,
    timbre: Timbre,
    prompt: Vec<usize>,
    events: Vec<usize>,
    truth_bpm: f64,
    truth_brightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub clips: Vec<Clip>,
}

impl Corpus {
    /// Serialized JSONL bytes.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for (index, c) in self.clips.iter().enumerate() {
            let rec = ClipRecord {
                kind: "clip".into(),
                index,
                tempo: c.class.tempo,
                timbre: c.class.timbre,
                prompt: c.prompt_tokens.clone(),
                events: c.events.clone(),
                truth_bpm: c.truth_bpm,
                truth_brightness: c.truth_brightness,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    /// SHA-256 of the serialized corpus, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(&self.to_jsonl()?))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws `n_clips` clips; `class_mix` gives the probability of each of the
/// nine classes in [`AttributeClass::all`] order.
pub fn generate_corpus(
    grammar: &Grammar,
    vocab: &TokenVocab,
    n_clips: usize,
    class_mix: &[f64; 9],
    seed: u64,
) -> Result<Corpus> {
    let total: f64 = class_mix.iter().sum();
    if (total - 1.0).abs() > 1e-9 || class_mix.iter().any(|&p| p < 0.0) {
        return Err(Error::Invalid(format!("class mix sums to {total}, expected 1")));
    }
    let classes: Vec<AttributeClass> = AttributeClass::all().collect();
    let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.key(), 0)).collect();
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let mut rng = RngState::new(derive_seed(&[seed, NS_CORPUS, i as u64]));
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut class = classes[8];
        for (c, &p) in classes.iter().zip(class_mix) {
            acc += p;
            if u < acc {
                class = *c;
                break;
            }
        }
        *counts.get_mut(&class.key()).unwrap() += 1;
        clips.push(sample_clip(grammar, vocab, class, &mut rng)?);
    }
    Ok(Corpus {
        header: CorpusHeader {
            kind: "header".into(),
            grammar_version: grammar.version,
            seed,
            n_clips,
            counts,
        },
        clips,
    })
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&corpus.to_jsonl()?).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty corpus file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: CorpusHeader = serde_json::from_str(&first)?;
    if header.kind != "header" {
        return Err(Error::Format("first corpus line is not a header".into()));
    }
    let mut clips = Vec::with_capacity(header.n_clips);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line)?;
        if rec.index != clips.len() {
            return Err(Error::Format(format!("clip index {} out of order", rec.index)));
        }
        clips.push(Clip {
            class: AttributeClass::new(rec.tempo, rec.timbre),
            prompt_tokens: rec.prompt,
            events: rec.events,
            truth_bpm: rec.truth_bpm,
            truth_brightness: rec.truth_brightness,
        });
    }
    if clips.len() != header.n_clips {
        return Err(Error::Format(format!(
            "header announces {} clips, file has {}",
            header.n_clips,
            clips.len()
        )));
    }
    Ok(Corpus { header, clips })
}

/// Uniform mix over the nine classes.
pub const UNIFORM_MIX: [f64; 9] = [1.0 / 9.0; 9];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn setup() -> (Grammar, TokenVocab) {
        (Grammar::load(1).unwrap(), build_vocab(1).unwrap())
    }

    #[test]
    fn multinomial_counts() {
        let (g, v) = setup();
        let c = generate_corpus(&g, &v, 6000, &UNIFORM_MIX, 1).unwrap();
        for (k, &n) in &c.header.counts {
            assert!((617..=717).contains(&n), "{k}: {n}");
        }
        assert_eq!(c.header.counts.values().sum::<usize>(), 6000);
    }

    #[test]
    fn deterministic_bytes_and_round_trip() {
        let (g, v) = setup();
        let a = generate_corpus(&g, &v, 50, &UNIFORM_MIX, 5).unwrap();
        let b = generate_corpus(&g, &v, 50, &UNIFORM_MIX, 5).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&a, &p).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), a);
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let (g, v) = setup();
        let c = generate_corpus(&g, &v, 0, &UNIFORM_MIX, 5).unwrap();
        let bytes = c.to_jsonl().unwrap();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
    }

    #[test]
    fn bad_mix() {
        let (g, v) = setup();
        assert!(generate_corpus(&g, &v, 1, &[0.5; 9], 0).is_err());
    }

    #[test]
    fn prefix_independent_of_length() {
        let (g, v) = setup();
        let a = generate_corpus(&g, &v, 10, &UNIFORM_MIX, 8).unwrap();
        let b = generate_corpus(&g, &v, 20, &UNIFORM_MIX, 8).unwrap();
        assert_eq!(a.clips[..], b.clips[..10]);
    }
}
