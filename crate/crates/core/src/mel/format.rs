//! MELS v1 spectrogram container: magic "MELS", u8 version, u32 LE frame
//! count, u32 LE band count, u8 normalization tag, then frames x bands
//! float32 LE values in row-major order.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MelError, MelSpectrogram, Normalization};

const MAGIC: &[u8; 4] = b"MELS";
const VERSION: u8 = 1;

pub fn mels_to_bytes(spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + spec.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.write_u32::<LittleEndian>(spec.frames() as u32).unwrap();
    out.write_u32::<LittleEndian>(spec.bands() as u32).unwrap();
    out.push(spec.normalization().tag());
    for &v in spec.values() {
        out.write_f32::<LittleEndian>(v).unwrap();
    }
    out
}

pub fn mels_from_bytes(bytes: &[u8]) -> Result<MelSpectrogram, MelError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| MelError::Format("stream shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(MelError::Format("bad magic, expected MELS".into()));
    }
    let version = r
        .read_u8()
        .map_err(|_| MelError::Format("missing version byte".into()))?;
    if version != VERSION {
        return Err(MelError::Format(format!("unsupported version {version}")));
    }
    let frames = r
        .read_u32::<LittleEndian>()
        .map_err(|_| MelError::Format("truncated frame count".into()))? as usize;
    let bands = r
        .read_u32::<LittleEndian>()
        .map_err(|_| MelError::Format("truncated band count".into()))? as usize;
    let tag = r
        .read_u8()
        .map_err(|_| MelError::Format("missing normalization tag".into()))?;
    let normalization = Normalization::from_tag(tag)
        .ok_or_else(|| MelError::Format(format!("unknown normalization tag {tag}")))?;

    let mut values = vec![0.0f32; frames * bands];
    for (i, v) in values.iter_mut().enumerate() {
        *v = r.read_f32::<LittleEndian>().map_err(|_| {
            MelError::Format(format!(
                "truncated at value {i} of {} (byte offset {})",
                frames * bands,
                14 + i * 4
            ))
        })?;
    }
    Ok(MelSpectrogram::new(values, frames, bands, normalization))
}

pub fn save_mels(spec: &MelSpectrogram, path: impl AsRef<Path>) -> Result<(), MelError> {
    let path = path.as_ref();
    std::fs::write(path, mels_to_bytes(spec)).map_err(|e| MelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_mels(path: impl AsRef<Path>) -> Result<MelSpectrogram, MelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    mels_from_bytes(&bytes)
}
