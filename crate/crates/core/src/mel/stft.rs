//! Short-time Fourier analysis/synthesis used by the spectrogram ops and the
//! Griffin-Lim inverter. Frames follow the center-padded convention: the
//! signal is reflection-padded by fft_size/2 on each side and the frame count
//! is 1 + floor(len / hop).

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::MelConfig;

/// Periodic Hann window of length `n`.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect an out-of-range index back into [0, len).
fn reflect(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = idx.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

pub(crate) fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Complex STFT frames (frames x (fft/2 + 1)) of a mono signal.
pub(crate) fn stft_complex(samples: &[f32], config: &MelConfig) -> Vec<Vec<Complex64>> {
    let fft_size = config.fft_size;
    let hop = config.hop_length;
    let pad = fft_size / 2;
    let n = samples.len();
    let n_bins = fft_size / 2 + 1;
    let frames = frame_count(n, hop);

    let window = hann_window(fft_size);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);

    let sample_at = |j: isize| -> f64 {
        if j >= 0 && (j as usize) < n {
            samples[j as usize] as f64
        } else {
            samples[reflect(j, n)] as f64
        }
    };

    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex64::default(); fft_size];
    for t in 0..frames {
        let start = t as isize * hop as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(sample_at(start + i as isize) * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_bins].to_vec());
    }
    out
}

/// Inverse STFT by windowed overlap-add with squared-window normalization.
/// Returns (frames - 1) * hop samples, matching the analysis padding.
pub(crate) fn istft(frames: &[Vec<Complex64>], config: &MelConfig) -> Vec<f64> {
    let fft_size = config.fft_size;
    let hop = config.hop_length;
    let pad = fft_size / 2;
    let n_frames = frames.len();
    if n_frames == 0 {
        return Vec::new();
    }
    let n_bins = fft_size / 2 + 1;

    let window = hann_window(fft_size);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(fft_size);

    let total = fft_size + (n_frames - 1) * hop;
    let mut acc = vec![0.0f64; total];
    let mut wsq = vec![0.0f64; total];
    let mut buf = vec![Complex64::default(); fft_size];

    for (t, frame) in frames.iter().enumerate() {
        debug_assert_eq!(frame.len(), n_bins);
        // Rebuild the full Hermitian spectrum from the positive bins.
        for k in 0..n_bins {
            buf[k] = frame[k];
        }
        for k in n_bins..fft_size {
            buf[k] = frame[fft_size - k].conj();
        }
        ifft.process(&mut buf);
        let offset = t * hop;
        for i in 0..fft_size {
            let x = buf[i].re / fft_size as f64;
            acc[offset + i] += x * window[i];
            wsq[offset + i] += window[i] * window[i];
        }
    }

    let out_len = (n_frames - 1) * hop;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let j = i + pad;
        let w = wsq[j];
        out.push(if w > 1e-9 { acc[j] / w } else { 0.0 });
    }
    out
}
