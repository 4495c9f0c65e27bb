//! Short-time spectra and the features computed from them.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::audio::AudioClip;

pub const WINDOW: usize = 1024;
pub const HOP: usize = 256;

/// Magnitude spectrogram: `frames[t][bin]` for bins `0..=WINDOW/2`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub sample_rate: u32,
    pub frames: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / WINDOW as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / HOP as f64
    }
}

fn hann() -> Vec<f64> {
    (0..WINDOW)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / WINDOW as f64).cos())
        .collect()
}

/// Hann-windowed STFT, window 1024, hop 256, no centring. Audio shorter
/// than one window is zero-padded to a single frame.
pub fn stft(audio: &AudioClip) -> Spectrogram {
    let x = &audio.samples;
    let n_frames = if x.len() <= WINDOW { 1 } else { 1 + (x.len() - WINDOW) / HOP };
    let window = hann();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(WINDOW);
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = x.get(start + i).copied().unwrap_or(0.0) as f64;
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..=WINDOW / 2].iter().map(|c| c.norm()).collect());
    }
    Spectrogram {
        sample_rate: audio.sample_rate,
        frames,
    }
}

struct FrameStats {
    weight: f64,
    centroid: f64,
    rolloff: f64,
    flatness: f64,
}

fn frame_stats(spec: &Spectrogram) -> Vec<FrameStats> {
    spec.frames
        .iter()
        .filter_map(|mag| {
            let total: f64 = mag.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let centroid = mag.iter().enumerate().map(|(k, m)| spec.bin_hz(k) * m).sum::<f64>() / total;
            let mut acc = 0.0;
            let mut rolloff = spec.bin_hz(mag.len() - 1);
            for (k, m) in mag.iter().enumerate() {
                acc += m;
                if acc >= 0.85 * total {
                    rolloff = spec.bin_hz(k);
                    break;
                }
            }
            let power: Vec<f64> = mag.iter().map(|m| m * m + 1e-20).collect();
            let log_mean = power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64;
            let mean = power.iter().sum::<f64>() / power.len() as f64;
            Some(FrameStats {
                weight: total,
                centroid,
                rolloff,
                flatness: log_mean.exp() / mean,
            })
        })
        .collect()
}

/// Magnitude-weighted mean over frames of the per-frame centroid
/// `Σ f·|X(f)| / Σ |X(f)|`.
pub fn spectral_centroid(audio: &AudioClip) -> Result<f64> {
    centroid_from(&frame_stats(&stft(audio)))
}

fn centroid_from(stats: &[FrameStats]) -> Result<f64> {
    let w: f64 = stats.iter().map(|s| s.weight).sum();
    if stats.is_empty() || w <= 0.0 {
        return Err(Error::Silent);
    }
    Ok(stats.iter().map(|s| s.weight * s.centroid).sum::<f64>() / w)
}

/// Positive spectral flux per hop; the first frame has zero flux.
pub fn onset_envelope(spec: &Spectrogram) -> Vec<f64> {
    let mut env = vec![0.0; spec.frames.len()];
    for t in 1..spec.frames.len() {
        env[t] = spec.frames[t]
            .iter()
            .zip(&spec.frames[t - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    env
}

/// Local maxima of the onset envelope above `mean + std`, at least 50 ms
/// apart.
pub fn detect_onsets(env: &[f64], frame_rate: f64) -> Vec<usize> {
    if env.len() < 3 {
        return Vec::new();
    }
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let sd = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + sd;
    let min_gap = (0.05 * frame_rate).ceil() as usize;
    let mut onsets: Vec<usize> = Vec::new();
    for t in 1..env.len() - 1 {
        if env[t] > threshold && env[t] >= env[t - 1] && env[t] > env[t + 1] {
            match onsets.last() {
                Some(&last) if t - last < min_gap => {
                    if env[t] > env[last] {
                        *onsets.last_mut().unwrap() = t;
                    }
                }
                _ => onsets.push(t),
            }
        }
    }
    onsets
}

/// The eight-dimensional audio descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub centroid_mean: f64,
    pub centroid_std: f64,
    pub rolloff85: f64,
    pub zero_cross_rate: f64,
    pub onset_rate: f64,
    pub rms: f64,
    pub spectral_flatness: f64,
    pub bpm_estimate: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 8] = [
        "centroid_mean",
        "centroid_std",
        "rolloff85",
        "zero_cross_rate",
        "onset_rate",
        "rms",
        "spectral_flatness",
        "bpm_estimate",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.centroid_mean,
            self.centroid_std,
            self.rolloff85,
            self.zero_cross_rate,
            self.onset_rate,
            self.rms,
            self.spectral_flatness,
            self.bpm_estimate,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            centroid_mean: a[0],
            centroid_std: a[1],
            rolloff85: a[2],
            zero_cross_rate: a[3],
            onset_rate: a[4],
            rms: a[5],
            spectral_flatness: a[6],
            bpm_estimate: a[7],
        }
    }
}

pub(crate) fn spectral_features(audio: &AudioClip, spec: &Spectrogram) -> Result<[f64; 7]> {
    if audio.is_silent() {
        return Err(Error::Silent);
    }
    let stats = frame_stats(spec);
    let centroid_mean = centroid_from(&stats)?;
    let w: f64 = stats.iter().map(|s| s.weight).sum();
    let centroid_std = (stats
        .iter()
        .map(|s| s.weight * (s.centroid - centroid_mean).powi(2))
        .sum::<f64>()
        / w)
        .sqrt();
    let rolloff85 = stats.iter().map(|s| s.weight * s.rolloff).sum::<f64>() / w;
    let spectral_flatness = stats.iter().map(|s| s.weight * s.flatness).sum::<f64>() / w;
    let x = &audio.samples;
    let crossings = x
        .windows(2)
        .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
        .count();
    let secs = audio.duration_secs();
    let zero_cross_rate = crossings as f64 / secs;
    let rms = (x.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let onsets = detect_onsets(&onset_envelope(spec), spec.frame_rate());
    let onset_rate = (onsets.len() + 1) as f64 / secs;
    Ok([
        centroid_mean,
        centroid_std,
        rolloff85,
        zero_cross_rate,
        onset_rate,
        rms,
        spectral_flatness,
    ])
}
