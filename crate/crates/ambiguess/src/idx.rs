//! IDX containers: unsigned-byte images and labels, and 32-bit float
//! probability rows (type code 0x0D). All header integers and float
//! payloads are big-endian.

use std::fs;
use std::path::Path;

use ambiguess_core::Tensor;
use thiserror::Error;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_PROBS: u32 = 0x0000_0D02;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("IDX format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
}

fn format_err(offset: usize, message: impl Into<String>) -> IdxError {
    IdxError::Format {
        offset,
        message: message.into(),
    }
}

/// Decoded IDX payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxArray {
    U8 { shape: Vec<usize>, data: Vec<u8> },
    F32 { shape: Vec<usize>, data: Vec<f32> },
}

impl IdxArray {
    pub fn shape(&self) -> &[usize] {
        match self {
            IdxArray::U8 { shape, .. } | IdxArray::F32 { shape, .. } => shape,
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let (kind, rank) = (bytes[2], bytes[3] as usize);
    let elem = match kind {
        0x08 => 1,
        0x0D => 4,
        other => return Err(format_err(2, format!("unsupported IDX type code 0x{other:02X}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(format_err(bytes.len(), "truncated dimension table"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for k in 0..rank {
        let at = 4 + 4 * k;
        let d = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        count = count.checked_mul(d).ok_or_else(|| format_err(at, "dimension product overflows"))?;
        shape.push(d);
    }
    let payload = count.checked_mul(elem).ok_or_else(|| format_err(header, "payload size overflows"))?;
    if bytes.len() - header < payload {
        return Err(format_err(bytes.len(), format!("truncated payload: expected {payload} bytes after offset {header}")));
    }
    if bytes.len() - header > payload {
        return Err(format_err(header + payload, "trailing bytes after payload"));
    }
    let body = &bytes[header..];
    Ok(match kind {
        0x08 => IdxArray::U8 {
            shape,
            data: body.to_vec(),
        },
        _ => IdxArray::F32 {
            shape,
            data: body.chunks_exact(4).map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes"))).collect(),
        },
    })
}

pub fn encode(array: &IdxArray) -> Vec<u8> {
    let (kind, shape) = match array {
        IdxArray::U8 { shape, .. } => (0x08u8, shape),
        IdxArray::F32 { shape, .. } => (0x0Du8, shape),
    };
    let mut out = vec![0, 0, kind, shape.len() as u8];
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    match array {
        IdxArray::U8 { data, .. } => out.extend_from_slice(data),
        IdxArray::F32 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_be_bytes())),
    }
    out
}

fn magic_of(array: &IdxArray) -> u32 {
    let (kind, rank) = match array {
        IdxArray::U8 { shape, .. } => (0x08, shape.len()),
        IdxArray::F32 { shape, .. } => (0x0D, shape.len()),
    };
    (kind << 8) | rank as u32
}

pub fn read(path: &Path) -> Result<IdxArray, IdxError> {
    let bytes = fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write(path: &Path, array: &IdxArray) -> Result<(), IdxError> {
    fs::write(path, encode(array)).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn expect_magic(array: &IdxArray, magic: u32) -> Result<(), IdxError> {
    let got = magic_of(array);
    if got != magic {
        return Err(format_err(0, format!("expected magic 0x{magic:08X}, found 0x{got:08X}")));
    }
    Ok(())
}

/// Loads any supported IDX file as a tensor: images are scaled by 1/255,
/// labels become their integer values, probability rows are widened.
pub fn load_idx(path: &Path) -> Result<Tensor, IdxError> {
    let array = read(path)?;
    let shape = array.shape().to_vec();
    let data: Vec<f64> = match (&array, magic_of(&array)) {
        (IdxArray::U8 { data, .. }, MAGIC_IMAGES) => data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        (IdxArray::U8 { data, .. }, MAGIC_LABELS) => data.iter().map(|&b| f64::from(b)).collect(),
        (IdxArray::F32 { data, .. }, MAGIC_PROBS) => data.iter().map(|&v| f64::from(v)).collect(),
        (_, magic) => return Err(format_err(0, format!("unsupported magic 0x{magic:08X}"))),
    };
    Tensor::new(shape, data).map_err(|e| format_err(4, e.to_string()))
}

/// `[N × rows × cols]` images in `[0, 1]`.
pub fn load_images(path: &Path) -> Result<Tensor, IdxError> {
    let array = read(path)?;
    expect_magic(&array, MAGIC_IMAGES)?;
    let IdxArray::U8 { shape, data } = array else { unreachable!() };
    Tensor::new(shape, data.iter().map(|&b| f64::from(b) / 255.0).collect()).map_err(|e| format_err(4, e.to_string()))
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>, IdxError> {
    let array = read(path)?;
    expect_magic(&array, MAGIC_LABELS)?;
    let IdxArray::U8 { data, .. } = array else { unreachable!() };
    Ok(data.into_iter().map(usize::from).collect())
}

/// `[N × C]` probability rows.
pub fn load_probs(path: &Path) -> Result<Tensor, IdxError> {
    let array = read(path)?;
    expect_magic(&array, MAGIC_PROBS)?;
    let IdxArray::F32 { shape, data } = array else { unreachable!() };
    Tensor::new(shape, data.into_iter().map(f64::from).collect()).map_err(|e| format_err(4, e.to_string()))
}

/// Pixel values are multiplied by 255 and rounded.
pub fn images_to_idx(images: &Tensor) -> IdxArray {
    let n = images.rows();
    let side = (images.row_len() as f64).sqrt() as usize;
    IdxArray::U8 {
        shape: vec![n, side, side],
        data: images.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    }
}

pub fn labels_to_idx(labels: &[usize]) -> IdxArray {
    IdxArray::U8 {
        shape: vec![labels.len()],
        data: labels.iter().map(|&l| l as u8).collect(),
    }
}

/// Probabilities are narrowed to 32-bit floats.
pub fn probs_to_idx(probs: &Tensor) -> IdxArray {
    IdxArray::F32 {
        shape: vec![probs.rows(), probs.row_len()],
        data: probs.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn save_images(path: &Path, images: &Tensor) -> Result<(), IdxError> {
    write(path, &images_to_idx(images))
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<(), IdxError> {
    write(path, &labels_to_idx(labels))
}

pub fn save_probs(path: &Path, probs: &Tensor) -> Result<(), IdxError> {
    write(path, &probs_to_idx(probs))
}
