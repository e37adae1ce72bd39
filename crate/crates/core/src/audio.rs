//! WAV reading/writing and sample-rate conversion.
//!
//! The pipeline works on mono float samples in [-1, 1]; multi-channel files
//! are downmixed by arithmetic mean on load. Only RIFF/WAVE containers with
//! PCM16 (fmt tag 0x0001) or IEEE float32 (0x0003) data are accepted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed RIFF/WAVE container: {0}")]
    Malformed(String),
    #[error("unsupported codec: fmt tag {tag:#06x} ({bits} bits/sample)")]
    UnsupportedCodec { tag: u16, bits: u16 },
    #[error("empty audio buffer")]
    EmptyBuffer,
    #[error("target sample rate must be positive")]
    ZeroTargetRate,
}

/// Mono PCM signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn io_err(path: &Path, source: std::io::Error) -> AudioError {
    AudioError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a WAV file into a mono [`AudioBuffer`].
///
/// PCM16 samples are scaled by 1/32768; multi-channel frames are averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)
        .map_err(|_| AudioError::Malformed("file too short for RIFF header".into()))?;
    if &tag != b"RIFF" {
        return Err(AudioError::Malformed("missing RIFF magic".into()));
    }
    let _riff_size = r
        .read_u32::<LittleEndian>()
        .map_err(|_| AudioError::Malformed("truncated RIFF size".into()))?;
    r.read_exact(&mut tag)
        .map_err(|_| AudioError::Malformed("truncated WAVE tag".into()))?;
    if &tag != b"WAVE" {
        return Err(AudioError::Malformed("missing WAVE tag".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;

    // Scan chunks until both fmt and data have been seen.
    loop {
        if r.read_exact(&mut tag).is_err() {
            break;
        }
        let size = r
            .read_u32::<LittleEndian>()
            .map_err(|_| AudioError::Malformed("truncated chunk size".into()))?
            as usize;
        match &tag {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Malformed("fmt chunk shorter than 16 bytes".into()));
                }
                let mut buf = vec![0u8; size];
                r.read_exact(&mut buf)
                    .map_err(|_| AudioError::Malformed("truncated fmt chunk".into()))?;
                let fmt_tag = u16::from_le_bytes([buf[0], buf[1]]);
                let channels = u16::from_le_bytes([buf[2], buf[3]]);
                let rate = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]);
                let bits = u16::from_le_bytes([buf[14], buf[15]]);
                fmt = Some((fmt_tag, channels, rate, bits));
            }
            b"data" => {
                let mut buf = vec![0u8; size];
                r.read_exact(&mut buf)
                    .map_err(|_| AudioError::Malformed("truncated data chunk".into()))?;
                data = Some(buf);
            }
            _ => {
                // Skip unknown chunks (LIST, fact, ...), honoring word alignment.
                let skip = size + (size & 1);
                let mut remaining = skip;
                let mut scratch = [0u8; 4096];
                while remaining > 0 {
                    let n = remaining.min(scratch.len());
                    r.read_exact(&mut scratch[..n])
                        .map_err(|_| AudioError::Malformed("truncated chunk body".into()))?;
                    remaining -= n;
                }
                continue;
            }
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (fmt_tag, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::Malformed("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Malformed("no data chunk".into()))?;
    if channels == 0 {
        return Err(AudioError::Malformed("zero channel count".into()));
    }
    if rate == 0 {
        return Err(AudioError::Malformed("zero sample rate".into()));
    }

    let interleaved: Vec<f32> = match (fmt_tag, bits) {
        (0x0001, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (0x0003, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        (tag, bits) => return Err(AudioError::UnsupportedCodec { tag, bits }),
    };

    let ch = channels as usize;
    let frames = interleaved.len() / ch;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0f64;
        for c in 0..ch {
            acc += interleaved[f * ch + c] as f64;
        }
        samples.push((acc / ch as f64).clamp(-1.0, 1.0) as f32);
    }

    Ok(AudioBuffer::new(samples, rate))
}

/// Write a mono WAV file with the canonical 44-byte header.
pub fn write_wav(
    buffer: &AudioBuffer,
    path: impl AsRef<Path>,
    format: WavFormat,
) -> Result<(), AudioError> {
    if buffer.is_empty() {
        return Err(AudioError::EmptyBuffer);
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);

    let (fmt_tag, bits): (u16, u16) = match format {
        WavFormat::Pcm16 => (0x0001, 16),
        WavFormat::Float32 => (0x0003, 32),
    };
    let bytes_per_sample = (bits / 8) as u32;
    let data_len = buffer.len() as u32 * bytes_per_sample;
    let byte_rate = buffer.sample_rate_hz * bytes_per_sample;
    let block_align = bytes_per_sample as u16;

    let wv = |e: std::io::Error| io_err(path, e);
    w.write_all(b"RIFF").map_err(wv)?;
    w.write_u32::<LittleEndian>(36 + data_len).map_err(wv)?;
    w.write_all(b"WAVE").map_err(wv)?;
    w.write_all(b"fmt ").map_err(wv)?;
    w.write_u32::<LittleEndian>(16).map_err(wv)?;
    w.write_u16::<LittleEndian>(fmt_tag).map_err(wv)?;
    w.write_u16::<LittleEndian>(1).map_err(wv)?;
    w.write_u32::<LittleEndian>(buffer.sample_rate_hz).map_err(wv)?;
    w.write_u32::<LittleEndian>(byte_rate).map_err(wv)?;
    w.write_u16::<LittleEndian>(block_align).map_err(wv)?;
    w.write_u16::<LittleEndian>(bits).map_err(wv)?;
    w.write_all(b"data").map_err(wv)?;
    w.write_u32::<LittleEndian>(data_len).map_err(wv)?;

    match format {
        WavFormat::Pcm16 => {
            for &s in &buffer.samples {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_i16::<LittleEndian>(q).map_err(wv)?;
            }
        }
        WavFormat::Float32 => {
            for &s in &buffer.samples {
                w.write_f32::<LittleEndian>(s).map_err(wv)?;
            }
        }
    }
    w.flush().map_err(wv)?;
    Ok(())
}

/// Zeroth-order modified Bessel function of the first kind (series form).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for m in 1..64 {
        term *= (half / m as f64) * (half / m as f64);
        sum += term;
        if term < sum * 1e-15 {
            break;
        }
    }
    sum
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let pu = std::f64::consts::PI * u;
        pu.sin() / pu
    }
}

const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 64;

/// Resample to `target_hz` with a Kaiser-windowed sinc interpolator.
///
/// Output length is round(len * target / source); samples are hard-clipped
/// to [-1, 1] afterwards. Equal rates are a no-op.
pub fn resample(buffer: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::ZeroTargetRate);
    }
    if buffer.is_empty() {
        return Err(AudioError::EmptyBuffer);
    }
    if target_hz == buffer.sample_rate_hz {
        return Ok(buffer.clone());
    }

    let src = buffer.sample_rate_hz as f64;
    let dst = target_hz as f64;
    let ratio = dst / src;
    let out_len = ((buffer.len() as f64) * ratio).round() as usize;

    // Downsampling stretches the kernel so the cutoff tracks the new Nyquist.
    let half = if ratio >= 1.0 {
        (TAPS_PER_PHASE / 2) as f64
    } else {
        (TAPS_PER_PHASE / 2) as f64 / ratio
    };
    let cutoff = 0.5 * ratio.min(1.0);
    let i0_beta = bessel_i0(KAISER_BETA);

    let input = &buffer.samples;
    let n_in = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let k_lo = (center - half).ceil() as isize;
        let k_hi = (center + half).floor() as isize;
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for k in k_lo..=k_hi {
            let x = k as f64 - center;
            let u = x / half;
            let arg = 1.0 - u * u;
            if arg < 0.0 {
                continue;
            }
            let w = bessel_i0(KAISER_BETA * arg.sqrt()) / i0_beta;
            let h = 2.0 * cutoff * sinc(2.0 * cutoff * x) * w;
            wsum += h;
            if k >= 0 && k < n_in {
                acc += h * input[k as usize] as f64;
            }
        }
        let v = if wsum.abs() > 1e-12 { acc / wsum } else { 0.0 };
        out.push(v.clamp(-1.0, 1.0) as f32);
    }

    Ok(AudioBuffer::new(out, target_hz))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize, amp: f32) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
            })
            .collect();
        AudioBuffer::new(samples, rate)
    }

    /// Naive DFT magnitude argmax over positive bins, independent of rustfft.
    fn dft_peak_bin(samples: &[f32]) -> usize {
        let n = samples.len();
        let mut best = (0usize, -1.0f64);
        for bin in 0..n / 2 {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for (i, &s) in samples.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (bin * i) as f64 / n as f64;
                re += s as f64 * ph.cos();
                im += s as f64 * ph.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (bin, mag);
            }
        }
        best.0
    }

    #[test]
    fn pcm16_scaling_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        // Hand-build a PCM16 file holding [16384, -32768].
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&16384i16.to_le_bytes());
        bytes.extend_from_slice(&(-32768i16).to_le_bytes());
        std::fs::write(&path, bytes).unwrap();

        let buf = read_wav(&path).unwrap();
        assert_eq!(buf.samples, vec![0.5, -1.0]);
        assert_eq!(buf.sample_rate_hz, 22050);
    }

    #[test]
    fn stereo_downmix_is_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        // Stereo float32 frame [1.0, 0.0] -> mono 0.5.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 8).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&176400u32.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();

        let buf = read_wav(&path).unwrap();
        assert_eq!(buf.samples, vec![0.5]);
    }

    #[test]
    fn unsupported_codec_names_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mp3.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&0x0055u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&22050u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();

        match read_wav(&path) {
            Err(AudioError::UnsupportedCodec { tag, .. }) => assert_eq!(tag, 0x0055),
            other => panic!("expected unsupported codec, got {other:?}"),
        }
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let buf = AudioBuffer::new(vec![0.25, -0.125, 0.7071, -0.999], 22050);
        write_wav(&buf, &path, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn pcm16_round_trip_within_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p16.wav");
        let buf = AudioBuffer::new(vec![0.3], 22050);
        write_wav(&buf, &path, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[0] - 0.3).abs() <= 1.0 / 32768.0);
    }

    #[test]
    fn empty_buffer_write_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let buf = AudioBuffer::new(vec![], 22050);
        assert!(matches!(
            write_wav(&buf, &path, WavFormat::Float32),
            Err(AudioError::EmptyBuffer)
        ));
    }

    #[test]
    fn resample_identity_when_rates_equal() {
        let buf = sine(440.0, 22050, 2205, 0.9);
        let out = resample(&buf, 22050).unwrap();
        assert_eq!(out, buf);
    }

    #[test]
    fn resample_length_arithmetic() {
        let buf = AudioBuffer::new(vec![0.0; 44100], 44100);
        let out = resample(&buf, 22050).unwrap();
        assert_eq!(out.len(), 22050);
        assert_eq!(out.sample_rate_hz, 22050);
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        // 440 Hz at 44100 Hz, quarter second; after 2x decimation the
        // dominant DFT bin must stay within one bin of 440 Hz.
        let buf = sine(440.0, 44100, 11025, 0.8);
        let out = resample(&buf, 22050).unwrap();
        let peak = dft_peak_bin(&out.samples);
        let expected = (440.0 * out.len() as f64 / 22050.0).round() as usize;
        assert!(
            (peak as isize - expected as isize).abs() <= 1,
            "peak bin {peak}, expected {expected}"
        );
    }

    #[test]
    fn resample_upsamples_too() {
        let buf = sine(440.0, 22050, 5512, 0.8);
        let out = resample(&buf, 44100).unwrap();
        assert_eq!(out.len(), 11024);
        let peak = dft_peak_bin(&out.samples);
        let expected = (440.0 * out.len() as f64 / 44100.0).round() as usize;
        assert!((peak as isize - expected as isize).abs() <= 1);
    }

    #[test]
    fn resample_output_stays_in_range() {
        let buf = sine(440.0, 44100, 4410, 1.0);
        let out = resample(&buf, 22050).unwrap();
        assert!(out.samples.iter().all(|s| s.abs() <= 1.0));
    }
}
