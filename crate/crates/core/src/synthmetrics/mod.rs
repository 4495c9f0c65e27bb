//! Audio rendering of symbolic clips and the metrics computed on it: tempo,
//! spectral centroid, an eight-feature descriptor and the Fréchet distance
//! between Gaussian fits of descriptor sets.

mod audio;
mod bpm;
mod spectral;
mod stats;

pub use audio::{midi_to_hz, render_audio, rolloff_exponent, write_wav, AudioClip, NUM_HARMONICS, PEAK, SAMPLE_RATE};
pub use bpm::{estimate_bpm_audio, estimate_bpm_symbolic, BPM_MAX, BPM_MIN, MIN_AUDIO_SECS};
pub use spectral::{detect_onsets, onset_envelope, spectral_centroid, stft, FeatureVector, Spectrogram, HOP, WINDOW};
pub use stats::{frechet_distance, gaussian_stats, gaussian_stats_rows, GaussianStats};

pub use crate::linalg::psd_sqrt;

use crate::corpus::NoteEvent;
use crate::error::Result;

/// The descriptor of one rendered clip. The tempo entry is the audio
/// estimate, or the symbolic one when the audio is too short or shows no
/// periodicity.
pub fn extract_features(audio: &AudioClip, notes: &[NoteEvent]) -> Result<FeatureVector> {
    let spec = stft(audio);
    let s = spectral::spectral_features(audio, &spec)?;
    let bpm = match estimate_bpm_audio(audio) {
        Ok(b) => b,
        Err(_) => estimate_bpm_symbolic(notes).unwrap_or(0.0),
    };
    Ok(FeatureVector::from_array([s[0], s[1], s[2], s[3], s[4], s[5], s[6], bpm]))
}
