//! `.dft` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "DFTN"
//! version u32      1
//! dtype   u8       0 = f32, 1 = f64
//! ndim    u8       1..=4
//! dims    ndim × u64
//! payload product(dims) × dtype size, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Tensor};

pub const MAGIC: [u8; 4] = *b"DFTN";
pub const VERSION: u32 = 1;
pub const MAX_DIMS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DftHeader {
    pub version: u32,
    pub dtype: DType,
    pub dims: Vec<usize>,
}

impl DftHeader {
    pub fn byte_len(&self) -> usize {
        4 + 4 + 1 + 1 + 8 * self.dims.len()
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() > MAX_DIMS {
        return Err(Error::Dimension(format!(
            ".dft holds at most {MAX_DIMS} dims, tensor has {:?}",
            t.dims()
        )));
    }
    let header = DftHeader {
        version: VERSION,
        dtype: t.dtype(),
        dims: t.dims().to_vec(),
    };
    let mut out = Vec::with_capacity(header.byte_len() + header.payload_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype().code());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parse only the header; `path` is used for error messages.
pub fn decode_header(bytes: &[u8], path: &Path) -> Result<DftHeader> {
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let corrupt = |message: String| Error::Corruption {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 10 {
        return Err(corrupt(format!("{} bytes is shorter than any header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| format(format!("unknown dtype code {}", bytes[8])))?;
    let ndim = bytes[9] as usize;
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(format(format!("ndim {ndim} outside 1..={MAX_DIMS}")));
    }
    let dims_end = 10 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(corrupt("header truncated inside dims".into()));
    }
    let dims = bytes[10..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect::<Vec<_>>();
    if dims.contains(&0) {
        return Err(format(format!("zero extent in dims {dims:?}")));
    }
    Ok(DftHeader {
        version,
        dtype,
        dims,
    })
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let header = decode_header(bytes, path)?;
    let payload = &bytes[header.byte_len()..];
    let want = header
        .dims
        .iter()
        .try_fold(header.dtype.size(), |acc, &d| acc.checked_mul(d));
    if want != Some(payload.len()) {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            message: format!(
                "dims {:?} need {} payload bytes, found {}",
                header.dims,
                want.map_or_else(|| "overflowing".to_string(), |w| w.to_string()),
                payload.len()
            ),
        });
    }
    let data = match header.dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(header.dims, data, header.dtype)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Header plus summary statistics, as printed by `vidtok dump`.
pub fn describe(path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    let data = t.data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let preview: Vec<f64> = data.iter().take(8).copied().collect();
    Ok(serde_json::json!({
        "file": path.display().to_string(),
        "version": VERSION,
        "dtype": t.dtype(),
        "dims": t.dims(),
        "elements": data.len(),
        "min": min,
        "max": max,
        "mean": mean,
        "std": var.sqrt(),
        "finite": t.is_finite(),
        "preview": preview,
    }))
}
