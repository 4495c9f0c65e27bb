//! Additive-synthesis rendering of note events.

use std::path::Path;

use crate::corpus::NoteEvent;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const NUM_HARMONICS: usize = 8;
pub const PEAK: f32 = 0.9;
const ATTACK_SECS: f64 = 0.002;
const DECAY_SECS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&x| x == 0.0)
    }
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

/// Harmonic roll-off exponent for a brightness level.
pub fn rolloff_exponent(brightness: u8) -> f64 {
    3.0 - 0.25 * brightness as f64
}

/// Renders notes back to back, each lasting its inter-onset interval.
///
/// A note of pitch `p` and brightness `b` sums harmonics `k = 1..=8` of
/// `440·2^((p−69)/12)` Hz with amplitude `k^−ρ(b)`, skipping any above
/// Nyquist, under a 2 ms linear attack and an exponential decay
/// (τ = 150 ms). The clip is then scaled so its peak is exactly 0.9.
pub fn render_audio(notes: &[NoteEvent]) -> Result<AudioClip> {
    let sr = SAMPLE_RATE as f64;
    let lengths: Vec<usize> = notes.iter().map(|n| (n.ioi_secs() * sr).round() as usize).collect();
    let total: usize = lengths.iter().sum();
    let mut out = vec![0.0f64; total];
    let attack = (ATTACK_SECS * sr).max(1.0);
    let mut start = 0;
    for (n, &len) in notes.iter().zip(&lengths) {
        if n.dur_steps == 0 || n.brightness > 7 {
            return Err(Error::Invalid(format!("malformed note {n:?}")));
        }
        let f0 = midi_to_hz(n.pitch as f64);
        let rho = rolloff_exponent(n.brightness);
        let partials: Vec<(f64, f64)> = (1..=NUM_HARMONICS)
            .map(|k| (k as f64 * f0, (k as f64).powf(-rho)))
            .filter(|&(f, _)| f < sr / 2.0)
            .collect();
        for (i, s) in out[start..start + len].iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = (i as f64 / attack).min(1.0) * (-t / DECAY_SECS).exp();
            let tone: f64 = partials
                .iter()
                .map(|&(f, a)| a * (std::f64::consts::TAU * f * t).sin())
                .sum();
            *s = env * tone;
        }
        start += len;
    }
    let mut samples: Vec<f32> = out.iter().map(|&x| x as f32).collect();
    if let Some((imax, peak)) = out
        .iter()
        .map(|x| x.abs())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
    {
        if peak > 0.0 {
            let scale = PEAK as f64 / peak;
            for (s, &x) in samples.iter_mut().zip(&out) {
                *s = ((x * scale) as f32).clamp(-PEAK, PEAK);
            }
            samples[imax] = PEAK.copysign(out[imax] as f32);
        }
    }
    Ok(AudioClip {
        sample_rate: SAMPLE_RATE,
        samples,
    })
}

/// Writes 16-bit PCM mono WAV.
pub fn write_wav(audio: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
