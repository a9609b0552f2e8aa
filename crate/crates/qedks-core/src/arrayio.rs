//! Binary array files with a fixed 64-byte header, plus CSV mirrors.
//!
//! Layout (all little-endian):
//!   bytes  0..8   magic "QEDKSARR"
//!   bytes  8..12  format version (u32, currently 1)
//!   bytes 12..16  dtype (u32): 0 = float64, 1 = complex128
//!   bytes 16..20  number of dimensions (u32, at most 4)
//!   bytes 20..52  dims as u64 (unused slots zero)
//!   bytes 52..64  reserved, zero
//! followed by the row-major payload. The writer is fully deterministic so
//! repeated runs produce byte-identical artifacts.

use crate::error::{CoreError, Result};
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"QEDKSARR";
pub const VERSION: u32 = 1;
pub const MAX_NDIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    C128,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    C128(Vec<Complex64>),
}

/// A dense row-major array of up to four dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::check(&dims, data.len())?;
        Ok(Array {
            dims,
            data: ArrayData::F64(data),
        })
    }

    pub fn c128(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        Self::check(&dims, data.len())?;
        Ok(Array {
            dims,
            data: ArrayData::C128(data),
        })
    }

    fn check(dims: &[usize], len: usize) -> Result<()> {
        if dims.is_empty() || dims.len() > MAX_NDIM {
            return Err(CoreError::ArrayFormat(format!(
                "ndim {} outside 1..={MAX_NDIM}",
                dims.len()
            )));
        }
        let expect: usize = dims.iter().product();
        if expect != len {
            return Err(CoreError::ArrayFormat(format!(
                "dims {dims:?} imply {expect} entries, got {len}"
            )));
        }
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            ArrayData::F64(_) => DType::F64,
            ArrayData::C128(_) => DType::C128,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ArrayData::F64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn header(arr: &Array) -> [u8; 64] {
    let mut h = [0u8; 64];
    h[0..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    let dt: u32 = match arr.dtype() {
        DType::F64 => 0,
        DType::C128 => 1,
    };
    h[12..16].copy_from_slice(&dt.to_le_bytes());
    h[16..20].copy_from_slice(&(arr.dims.len() as u32).to_le_bytes());
    for (i, &d) in arr.dims.iter().enumerate() {
        h[20 + 8 * i..28 + 8 * i].copy_from_slice(&(d as u64).to_le_bytes());
    }
    h
}

pub fn write_array(path: &Path, arr: &Array) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&header(arr))?;
    match &arr.data {
        ArrayData::F64(v) => {
            for x in v {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        ArrayData::C128(v) => {
            for z in v {
                f.write_all(&z.re.to_le_bytes())?;
                f.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array> {
    let mut f = std::fs::File::open(path)?;
    let mut h = [0u8; 64];
    f.read_exact(&mut h)
        .map_err(|_| CoreError::ArrayFormat("file shorter than the 64-byte header".into()))?;
    if &h[0..8] != MAGIC {
        return Err(CoreError::ArrayFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(h[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::ArrayFormat(format!(
            "unsupported version {version}"
        )));
    }
    let dt = u32::from_le_bytes(h[12..16].try_into().unwrap());
    let ndim = u32::from_le_bytes(h[16..20].try_into().unwrap()) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(CoreError::ArrayFormat(format!("bad ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        dims.push(u64::from_le_bytes(h[20 + 8 * i..28 + 8 * i].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let mut body = Vec::new();
    f.read_to_end(&mut body)?;
    let word = |k: usize| -> Result<f64> {
        let bytes: [u8; 8] = body
            .get(8 * k..8 * k + 8)
            .ok_or_else(|| CoreError::ArrayFormat("payload truncated".into()))?
            .try_into()
            .unwrap();
        Ok(f64::from_le_bytes(bytes))
    };
    match dt {
        0 => {
            if body.len() != 8 * count {
                return Err(CoreError::ArrayFormat(format!(
                    "payload {} bytes, expected {}",
                    body.len(),
                    8 * count
                )));
            }
            let mut v = Vec::with_capacity(count);
            for k in 0..count {
                v.push(word(k)?);
            }
            Array::f64(dims, v)
        }
        1 => {
            if body.len() != 16 * count {
                return Err(CoreError::ArrayFormat(format!(
                    "payload {} bytes, expected {}",
                    body.len(),
                    16 * count
                )));
            }
            let mut v = Vec::with_capacity(count);
            for k in 0..count {
                v.push(Complex64::new(word(2 * k)?, word(2 * k + 1)?));
            }
            Array::c128(dims, v)
        }
        other => Err(CoreError::ArrayFormat(format!("unknown dtype {other}"))),
    }
}

/// CSV mirror: one row per leading-dimension slice, remaining dimensions
/// flattened row-major. Complex entries are written as re+imj.
pub fn write_csv_mirror(path: &Path, arr: &Array) -> Result<()> {
    let rows = arr.dims[0];
    let cols = arr.len() / rows.max(1);
    let mut out = String::new();
    for r in 0..rows {
        let mut fields = Vec::with_capacity(cols);
        for c in 0..cols {
            let k = r * cols + c;
            match &arr.data {
                ArrayData::F64(v) => fields.push(format!("{:.17e}", v[k])),
                ArrayData::C128(v) => {
                    fields.push(format!("{:.17e}{:+.17e}j", v[k].re, v[k].im))
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
