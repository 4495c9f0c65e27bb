//! Synthetic clips: a prompt plus (PITCH, DUR, BRIGHT) event triples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::grammar::{AttributeClass, Grammar, Tempo, Timbre};
use super::vocab::{TokenKind, TokenVocab, DUR_STEP_SECS, NUM_DURATIONS, PITCH_MAX, PITCH_MIN};

pub const MIN_EVENTS: usize = 24;
pub const MAX_EVENTS: usize = 32;

/// One decoded note.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: u8,
    /// Inter-onset interval in 25 ms steps.
    pub dur_steps: u8,
    pub brightness: u8,
}

impl NoteEvent {
    pub fn ioi_secs(&self) -> f64 {
        self.dur_steps as f64 * DUR_STEP_SECS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub class: AttributeClass,
    pub prompt_tokens: Vec<usize>,
    /// Event triples followed by END.
    pub events: Vec<usize>,
    pub truth_bpm: f64,
    pub truth_brightness: f64,
}

/// Inclusive BPM range drawn for a tempo class.
pub fn bpm_range(tempo: Tempo) -> (f64, f64) {
    match tempo {
        Tempo::Slow => (60.0, 96.0),
        Tempo::Neutral => (97.0, 143.0),
        Tempo::Fast => (144.0, 180.0),
    }
}

/// Inclusive IOI range, in grid steps, whose BPM lies inside the class
/// range. The slow range is cut at the 32-step (75 BPM) end of the grid.
pub fn step_range(tempo: Tempo) -> (u8, u8) {
    let (lo, hi) = bpm_range(tempo);
    let shortest = (60.0 / hi / DUR_STEP_SECS).ceil() as u8;
    let longest = ((60.0 / lo / DUR_STEP_SECS).floor() as u8).min(NUM_DURATIONS as u8);
    (shortest, longest)
}

/// Inclusive brightness band for a timbre class.
pub fn brightness_band(timbre: Timbre) -> (u8, u8) {
    match timbre {
        Timbre::Dark => (0, 2),
        Timbre::Neutral => (3, 4),
        Timbre::Bright => (5, 7),
    }
}

/// Parses an event token stream. A trailing END is accepted and stops the
/// parse; anything after it, or a broken triple, is an error.
pub fn parse_events(vocab: &TokenVocab, tokens: &[usize]) -> Result<Vec<NoteEvent>> {
    let mut notes = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match vocab.kind(tokens[i])? {
            TokenKind::End => {
                if i + 1 != tokens.len() {
                    return Err(Error::Format("tokens after END".into()));
                }
                break;
            }
            TokenKind::Pitch(pitch) => {
                if i + 2 >= tokens.len() {
                    return Err(Error::Format(format!("truncated event at token {i}")));
                }
                let (TokenKind::Dur(dur_steps), TokenKind::Bright(brightness)) =
                    (vocab.kind(tokens[i + 1])?, vocab.kind(tokens[i + 2])?)
                else {
                    return Err(Error::Format(format!("event at token {i} is not PITCH DUR BRIGHT")));
                };
                notes.push(NoteEvent {
                    pitch,
                    dur_steps,
                    brightness,
                });
                i += 3;
            }
            other => return Err(Error::Format(format!("unexpected {other:?} at token {i}"))),
        }
    }
    Ok(notes)
}

pub fn encode_events(vocab: &TokenVocab, notes: &[NoteEvent], with_end: bool) -> Vec<usize> {
    let mut out = Vec::with_capacity(notes.len() * 3 + 1);
    for n in notes {
        out.extend([vocab.pitch(n.pitch), vocab.dur(n.dur_steps), vocab.bright(n.brightness)]);
    }
    if with_end {
        out.push(vocab.end());
    }
    out
}

/// `60 / mean IOI` in beats per minute.
pub fn mean_ioi_bpm(notes: &[NoteEvent]) -> f64 {
    let total: f64 = notes.iter().map(NoteEvent::ioi_secs).sum();
    60.0 * notes.len() as f64 / total
}

pub fn mean_brightness(notes: &[NoteEvent]) -> f64 {
    notes.iter().map(|n| n.brightness as f64).sum::<f64>() / notes.len() as f64
}

impl Clip {
    pub fn notes(&self, vocab: &TokenVocab) -> Result<Vec<NoteEvent>> {
        parse_events(vocab, &self.events)
    }

    /// Prompt followed by events: the training sequence.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = self.prompt_tokens.clone();
        s.extend_from_slice(&self.events);
        s
    }

    /// Builds a clip from decoded notes (used for generated sequences).
    pub fn from_notes(vocab: &TokenVocab, class: AttributeClass, prompt: Vec<usize>, notes: &[NoteEvent]) -> Self {
        Self {
            class,
            prompt_tokens: prompt,
            events: encode_events(vocab, notes, true),
            truth_bpm: if notes.is_empty() { 0.0 } else { mean_ioi_bpm(notes) },
            truth_brightness: if notes.is_empty() { 0.0 } else { mean_brightness(notes) },
        }
    }
}

/// Samples one clip of `class` with its prompt.
///
/// BPM is uniform in the class range; every note's IOI is the grid step
/// nearest `60/BPM` plus a jitter in {-1, 0, +1} steps, clamped to the
/// class's [`step_range`]. Pitch follows a bounded random walk. Brightness takes a
/// per-clip level in the class band and a per-note ±1 jitter kept inside
/// the band.
pub fn sample_clip(grammar: &Grammar, vocab: &TokenVocab, class: AttributeClass, rng: &mut RngState) -> Result<Clip> {
    let prompt = grammar.render_prompt(vocab, class, rng)?;
    let (lo, hi) = bpm_range(class.tempo);
    let bpm = rng.uniform_range(lo, hi);
    let (slo, shi) = step_range(class.tempo);
    let base = ((60.0 / bpm) / DUR_STEP_SECS).round() as i64;
    let (blo, bhi) = brightness_band(class.timbre);
    let level = rng.int_inclusive(blo as i64, bhi as i64);
    let n = rng.int_inclusive(MIN_EVENTS as i64, MAX_EVENTS as i64) as usize;
    let mut pitch = rng.int_inclusive(48, 72);
    let mut notes = Vec::with_capacity(n);
    for _ in 0..n {
        let dur = (base.clamp(slo as i64, shi as i64) + rng.int_inclusive(-1, 1)).clamp(slo as i64, shi as i64);
        let b = (level + rng.int_inclusive(-1, 1)).clamp(blo as i64, bhi as i64);
        notes.push(NoteEvent {
            pitch: pitch as u8,
            dur_steps: dur as u8,
            brightness: b as u8,
        });
        pitch = (pitch + rng.int_inclusive(-3, 3)).clamp(PITCH_MIN as i64, PITCH_MAX as i64);
    }
    Ok(Clip::from_notes(vocab, class, prompt, &notes))
}
