//! Tempo estimation from note events and from rendered audio.

use crate::corpus::vocab::DUR_STEP_SECS;
use crate::corpus::NoteEvent;
use crate::error::{Error, Result};

use super::audio::AudioClip;
use super::spectral::{onset_envelope, stft};

pub const BPM_MIN: f64 = 40.0;
pub const BPM_MAX: f64 = 200.0;
pub const MIN_AUDIO_SECS: f64 = 4.0;
const OCTAVE_TOLERANCE: f64 = 0.9;
const NOISE_FLOOR: f64 = 0.1;

/// `60 / median(IOI)`.
pub fn estimate_bpm_symbolic(notes: &[NoteEvent]) -> Result<f64> {
    if notes.len() < 2 {
        return Err(Error::Invalid(format!(
            "tempo needs at least 2 events, got {}",
            notes.len()
        )));
    }
    let mut steps: Vec<u8> = notes.iter().map(|n| n.dur_steps).collect();
    steps.sort_unstable();
    let m = steps.len() / 2;
    let median_steps = if steps.len() % 2 == 1 {
        steps[m] as f64
    } else {
        (steps[m - 1] as f64 + steps[m] as f64) / 2.0
    };
    Ok(60.0 / DUR_STEP_SECS / median_steps)
}

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64
}

/// Audio tempo from the autocorrelation of the spectral-flux envelope.
///
/// The strongest lag between 40 and 200 BPM wins, except that when the lag
/// of double tempo correlates within 10% of it, whichever of the two sits
/// closer to 120 BPM is reported.
pub fn estimate_bpm_audio(audio: &AudioClip) -> Result<f64> {
    if audio.duration_secs() < MIN_AUDIO_SECS {
        return Err(Error::Invalid(format!(
            "audio tempo needs at least {MIN_AUDIO_SECS} s, got {:.2} s",
            audio.duration_secs()
        )));
    }
    let spec = stft(audio);
    let fr = spec.frame_rate();
    let mut env = onset_envelope(&spec);
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    env.iter_mut().for_each(|v| *v -= mean);

    let level = spec.frames.iter().map(|f| f.iter().sum::<f64>()).sum::<f64>() / spec.frames.len() as f64;
    let r0 = autocorrelation(&env, 0);
    if !(level > 0.0) || r0.sqrt() < 1e-2 * level {
        return Err(Error::NoPeriodicity);
    }

    let lag_lo = (60.0 * fr / BPM_MAX).floor().max(1.0) as usize;
    let lag_hi = ((60.0 * fr / BPM_MIN).ceil() as usize).min(env.len() - 2);
    if lag_lo + 1 >= lag_hi {
        return Err(Error::NoPeriodicity);
    }
    let r: Vec<f64> = (0..=lag_hi + 1).map(|lag| autocorrelation(&env, lag)).collect();
    let in_range = |lag: f64| {
        let bpm = 60.0 * fr / lag;
        (BPM_MIN..=BPM_MAX).contains(&bpm)
    };
    let peak = (lag_lo..=lag_hi)
        .filter(|&l| in_range(l as f64))
        .max_by(|&a, &b| r[a].total_cmp(&r[b]))
        .ok_or(Error::NoPeriodicity)?;
    if r[peak] / r0 < NOISE_FLOOR {
        return Err(Error::NoPeriodicity);
    }

    let refine = |l: usize| -> f64 {
        if l == 0 || l + 1 >= r.len() {
            return l as f64;
        }
        let (a, b, c) = (r[l - 1], r[l], r[l + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            l as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            l as f64
        }
    };
    let mut lag = refine(peak);

    let half = (lag / 2.0).round() as usize;
    if half >= 1 && in_range(lag / 2.0) {
        let local = (half.saturating_sub(1)..=half + 1)
            .filter(|&l| l >= 1)
            .max_by(|&a, &b| r[a].total_cmp(&r[b]))
            .unwrap_or(half);
        if r[local] >= OCTAVE_TOLERANCE * r[peak] {
            let alt = refine(local);
            let centre = (BPM_MIN + BPM_MAX) / 2.0;
            if (60.0 * fr / alt - centre).abs() < (60.0 * fr / lag - centre).abs() {
                lag = alt;
            }
        }
    }
    Ok(60.0 * fr / lag)
}
