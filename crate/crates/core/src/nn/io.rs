//! Model file serialization.
//!
//! Little-endian layout: magic `BIMG`, format version u32, classes u32,
//! init seed u64, normalization flag u8, then the eight parameter tensors
//! in fixed layer order, each as rank u32, dims u32 x rank, payload f32 x
//! product(dims). The file ends with a CRC32 (IEEE) of all preceding bytes.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{ModelSpec, ModelWeights, Tensor};
use thiserror::Error;

pub const MODEL_MAGIC: [u8; 4] = *b"BIMG";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// Serialize to bytes, f32 payloads, trailing CRC32.
pub fn model_to_bytes(model: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 4 + 128);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.classes() as u32).to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.push(model.normalized as u8);
    for tensor in model.tensors() {
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelWeights) -> Result<(), ModelIoError> {
    let mut f = File::create(path)?;
    f.write_all(&model_to_bytes(model))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelIoError::Malformed("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse and validate a serialized model: magic, version, CRC, and that
/// every tensor shape matches the fixed architecture for the stored class
/// count.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelWeights, ModelIoError> {
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    if bytes.len() < 21 + 4 {
        return Err(ModelIoError::Malformed("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(ModelIoError::CrcMismatch { stored, computed });
    }

    let mut cur = Cursor { buf: body, pos: 4 };
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }
    let classes = cur.u32()? as usize;
    let seed = cur.u64()?;
    let normalized = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(ModelIoError::Malformed(format!("bad normalization flag {b}"))),
    };
    let spec = ModelSpec::new(classes)
        .map_err(|_| ModelIoError::Malformed(format!("bad class count {classes}")))?;

    let mut tensors = Vec::with_capacity(8);
    for expected_shape in spec.layer_shapes() {
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        if dims != expected_shape {
            return Err(ModelIoError::Malformed(format!(
                "layer shape {dims:?} does not match architecture {expected_shape:?}"
            )));
        }
        let len: usize = dims.iter().product();
        let payload = cur.take(len * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(
            Tensor::new(dims, data)
                .map_err(|e| ModelIoError::Malformed(e.to_string()))?,
        );
    }
    if cur.pos != body.len() {
        return Err(ModelIoError::Malformed(format!(
            "{} trailing bytes",
            body.len() - cur.pos
        )));
    }
    Ok(ModelWeights::from_parts(classes, seed, normalized, tensors))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelWeights, ModelIoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

/// CRC32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, e) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *e = c;
        }
        t
    });
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}
