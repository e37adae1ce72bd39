//! Mel-spectrogram extraction and approximate inversion.
//!
//! Audio is analyzed with a center-padded Hann STFT (fft 1024, hop 256 by
//! default), projected onto 80 triangular Mel filters (HTK mel curve,
//! Slaney-style area normalization), compressed to dB with an 80 dB dynamic
//! range, min-max normalized to [-1, 1] per clip, and padded/truncated to a
//! fixed frame count. `griffin_lim_invert` provides the reverse path back to
//! a waveform.

mod format;
mod griffin;
mod stft;

pub use format::{load_mels, mels_from_bytes, mels_to_bytes, save_mels};
pub use griffin::griffin_lim_invert;

use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::linalg::Mat;

pub(crate) use stft::{istft, stft_complex};

/// dB dynamic range kept below the per-clip maximum.
pub const DB_RANGE: f64 = 80.0;
/// Power floor applied before taking logs.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MelError {
    #[error("sample rate mismatch: config expects {expected} Hz, buffer is {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },
    #[error("empty audio buffer")]
    EmptyBuffer,
    #[error("invalid mel config: {0}")]
    InvalidConfig(String),
    #[error("mel band {band} has no nonzero filter weight; n_mels too large for fft resolution")]
    FilterResolution { band: usize },
    #[error("griffin-lim requires at least one iteration")]
    ZeroIterations,
    #[error("spectrogram contains non-finite values")]
    NonFinite,
    #[error("malformed MELS stream: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Analysis parameters. Defaults match the pipeline's canonical settings:
/// 22.05 kHz, fft 1024, hop 256, 80 bands, 896 target frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub fft_size: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub target_frames: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 22050,
            fft_size: 1024,
            hop_length: 256,
            n_mels: 80,
            target_frames: 896,
            fmin_hz: 0.0,
            fmax_hz: 11025.0,
        }
    }
}

impl MelConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<(), MelError> {
        if self.hop_length == 0 || self.hop_length > self.fft_size {
            return Err(MelError::InvalidConfig(format!(
                "hop_length {} must be in 1..=fft_size {}",
                self.hop_length, self.fft_size
            )));
        }
        if self.n_mels == 0 {
            return Err(MelError::InvalidConfig("n_mels must be >= 1".into()));
        }
        if self.target_frames == 0 {
            return Err(MelError::InvalidConfig("target_frames must be >= 1".into()));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(MelError::InvalidConfig(format!(
                "need 0 <= fmin {} < fmax {} <= nyquist {nyquist}",
                self.fmin_hz, self.fmax_hz
            )));
        }
        Ok(())
    }
}

/// How the stored values are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    RawDb,
    MinmaxUnit,
}

impl Normalization {
    pub fn tag(self) -> u8 {
        match self {
            Normalization::RawDb => 0,
            Normalization::MinmaxUnit => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Normalization::RawDb),
            1 => Some(Normalization::MinmaxUnit),
            _ => None,
        }
    }
}

/// frames x bands matrix of Mel values, row-major, single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    frames: usize,
    bands: usize,
    normalization: Normalization,
}

impl MelSpectrogram {
    pub fn new(
        values: Vec<f32>,
        frames: usize,
        bands: usize,
        normalization: Normalization,
    ) -> Self {
        assert_eq!(values.len(), frames * bands, "mel value length mismatch");
        Self {
            values,
            frames,
            bands,
            normalization,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.bands..(t + 1) * self.bands]
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.values[t * self.bands + f]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filterbank: `n_mels` x `n_bins` weights plus the filter
/// center frequencies in Hz.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Mat<f64>,
    pub centers_hz: Vec<f64>,
}

/// Build the filterbank for `config`: triangles equally spaced on the mel
/// scale between fmin and fmax, each scaled by 2 / (band width in Hz).
pub fn mel_filterbank(config: &MelConfig) -> Result<MelFilterbank, MelError> {
    config.validate()?;
    let n_bins = config.n_bins();
    let mel_lo = hz_to_mel(config.fmin_hz);
    let mel_hi = hz_to_mel(config.fmax_hz);
    let n = config.n_mels;

    let hz_pts: Vec<f64> = (0..=n + 1)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n + 1) as f64))
        .collect();

    let bin_hz = config.sample_rate_hz as f64 / config.fft_size as f64;
    let mut weights = Mat::zeros(n, n_bins);
    for m in 0..n {
        let lower = hz_pts[m];
        let center = hz_pts[m + 1];
        let upper = hz_pts[m + 2];
        let norm = 2.0 / (upper - lower);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                weights.set(m, k, w * norm);
                any = true;
            }
        }
        if !any {
            return Err(MelError::FilterResolution { band: m });
        }
    }

    Ok(MelFilterbank {
        weights,
        centers_hz: hz_pts[1..=n].to_vec(),
    })
}

/// Magnitude-squared STFT: frames x (fft/2 + 1), Hann window, reflection
/// center padding, frame count 1 + floor(len / hop).
pub fn stft_power(buffer: &AudioBuffer, config: &MelConfig) -> Result<Mat<f64>, MelError> {
    config.validate()?;
    if buffer.sample_rate_hz != config.sample_rate_hz {
        return Err(MelError::SampleRateMismatch {
            expected: config.sample_rate_hz,
            actual: buffer.sample_rate_hz,
        });
    }
    if buffer.is_empty() {
        return Err(MelError::EmptyBuffer);
    }
    let frames = stft_complex(&buffer.samples, config);
    let n_bins = config.n_bins();
    let mut power = Mat::zeros(frames.len(), n_bins);
    for (t, frame) in frames.iter().enumerate() {
        let row = power.row_mut(t);
        for (p, c) in row.iter_mut().zip(frame) {
            *p = c.norm_sqr();
        }
    }
    Ok(power)
}

/// Mel power in dB: filterbank applied per frame, 10*log10 with a 1e-10
/// power floor, then clamped to (per-clip max - 80 dB).
pub fn mel_spectrogram(
    buffer: &AudioBuffer,
    config: &MelConfig,
) -> Result<MelSpectrogram, MelError> {
    let power = stft_power(buffer, config)?;
    let fb = mel_filterbank(config)?;
    let frames = power.rows();
    let bands = config.n_mels;

    let mut db = vec![0.0f64; frames * bands];
    let mut max_db = f64::NEG_INFINITY;
    for t in 0..frames {
        let spectrum = power.row(t);
        for m in 0..bands {
            let mel_p = crate::linalg::dot(fb.weights.row(m), spectrum);
            let v = 10.0 * mel_p.max(POWER_FLOOR).log10();
            db[t * bands + m] = v;
            if v > max_db {
                max_db = v;
            }
        }
    }
    let floor = max_db - DB_RANGE;
    let values: Vec<f32> = db.iter().map(|&v| v.max(floor) as f32).collect();
    Ok(MelSpectrogram::new(
        values,
        frames,
        bands,
        Normalization::RawDb,
    ))
}

/// Affine min-max map onto [-1, 1]; a constant input maps to all -1.
pub fn normalize_unit(spec: &MelSpectrogram) -> Result<MelSpectrogram, MelError> {
    if !spec.is_finite() {
        return Err(MelError::NonFinite);
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in spec.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let values = if hi > lo {
        let scale = 2.0 / (hi - lo) as f64;
        spec.values()
            .iter()
            .map(|&v| (((v - lo) as f64 * scale) - 1.0) as f32)
            .collect()
    } else {
        vec![-1.0f32; spec.values().len()]
    };
    Ok(MelSpectrogram::new(
        values,
        spec.frames(),
        spec.bands(),
        Normalization::MinmaxUnit,
    ))
}

/// Pad with zero rows or truncate at the end so the result has exactly
/// `target_frames` rows.
pub fn fix_length(spec: &MelSpectrogram, target_frames: usize) -> MelSpectrogram {
    let bands = spec.bands();
    let mut values = Vec::with_capacity(target_frames * bands);
    let keep = spec.frames().min(target_frames);
    values.extend_from_slice(&spec.values()[..keep * bands]);
    values.resize(target_frames * bands, 0.0);
    MelSpectrogram::new(values, target_frames, bands, spec.normalization())
}
