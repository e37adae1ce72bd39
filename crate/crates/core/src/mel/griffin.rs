//! Griffin-Lim waveform reconstruction from Mel-spectrograms.
//!
//! The Mel matrix is mapped back to a linear power spectrum with a clamped
//! pseudo-inverse of the filterbank, then the phase is recovered by iterating
//! STFT/ISTFT projections with zero initial phase. This is a deterministic
//! classical stand-in for a neural vocoder; it keeps the generation path
//! runnable end to end.

use rustfft::num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::linalg::{invert, Mat};

use super::{
    istft, mel_filterbank, stft_complex, MelConfig, MelError, MelSpectrogram, Normalization,
    DB_RANGE,
};

/// Map stored values to dB. Min-max normalized clips are assumed to span the
/// canonical [max - 80, max] dB window with max pinned at 0 dB; the choice
/// only affects overall gain.
fn to_db(value: f32, normalization: Normalization) -> f64 {
    match normalization {
        Normalization::RawDb => value as f64,
        Normalization::MinmaxUnit => (value as f64 + 1.0) / 2.0 * DB_RANGE - DB_RANGE,
    }
}

/// Moore-Penrose right inverse B^T (B B^T)^-1, with a small ridge retry when
/// the Gram matrix is singular.
fn filterbank_pinv(weights: &Mat<f64>) -> Result<Mat<f64>, MelError> {
    let gram = weights.matmul(&weights.transpose());
    let gram_inv = match invert(&gram) {
        Some(inv) => inv,
        None => {
            let mut ridged = gram.clone();
            for i in 0..ridged.rows() {
                let v = ridged.get(i, i) + 1e-8;
                ridged.set(i, i, v);
            }
            invert(&ridged).ok_or_else(|| {
                MelError::InvalidConfig("mel filterbank Gram matrix is singular".into())
            })?
        }
    };
    Ok(weights.transpose().matmul(&gram_inv))
}

/// Invert a Mel-spectrogram to a waveform with `iterations` Griffin-Lim
/// rounds. Output length is (frames - 1) * hop_length samples.
pub fn griffin_lim_invert(
    spec: &MelSpectrogram,
    config: &MelConfig,
    iterations: usize,
) -> Result<AudioBuffer, MelError> {
    if iterations == 0 {
        return Err(MelError::ZeroIterations);
    }
    if !spec.is_finite() {
        return Err(MelError::NonFinite);
    }
    if spec.bands() != config.n_mels {
        return Err(MelError::InvalidConfig(format!(
            "spectrogram has {} bands, config expects {}",
            spec.bands(),
            config.n_mels
        )));
    }

    let fb = mel_filterbank(config)?;
    let pinv = filterbank_pinv(&fb.weights)?; // n_bins x n_mels
    let n_bins = config.n_bins();
    let frames = spec.frames();

    // Per-frame linear magnitudes via the clamped pseudo-inverse.
    let mut magnitude: Vec<Vec<f64>> = Vec::with_capacity(frames);
    let mut mel_power = vec![0.0f64; config.n_mels];
    for t in 0..frames {
        for (m, p) in mel_power.iter_mut().enumerate() {
            *p = 10f64.powf(to_db(spec.get(t, m), spec.normalization()) / 10.0);
        }
        let linear = pinv.matvec(&mel_power);
        magnitude.push(linear.iter().map(|&p| p.max(0.0).sqrt()).collect());
    }

    // Zero-phase start keeps the whole reconstruction deterministic.
    let mut estimate: Vec<Vec<Complex64>> = magnitude
        .iter()
        .map(|row| row.iter().map(|&m| Complex64::new(m, 0.0)).collect())
        .collect();

    for _ in 0..iterations {
        let time = istft(&estimate, config);
        let time_f32: Vec<f32> = time.iter().map(|&x| x as f32).collect();
        let reproj = stft_complex(&time_f32, config);
        for t in 0..frames {
            for k in 0..n_bins {
                let c = reproj[t][k];
                let mag = magnitude[t][k];
                let norm = c.norm();
                estimate[t][k] = if norm > 1e-12 {
                    c / norm * mag
                } else {
                    Complex64::new(mag, 0.0)
                };
            }
        }
    }
    let signal = istft(&estimate, config);

    // Keep the AudioBuffer range invariant without altering spectral shape.
    let peak = signal.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let samples: Vec<f32> = signal.iter().map(|&x| (x * gain) as f32).collect();
    Ok(AudioBuffer::new(samples, config.sample_rate_hz))
}
