//! The `PWT1` tensor container and 8-bit PGM previews.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PWT1" | dtype u32 | ndim u32 | dims u64 * ndim | meta_len u64 | meta JSON | payload
//! ```
//!
//! dtype codes are 1 = f32, 2 = f64, 3 = u8. The payload is row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"PWT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array with a JSON metadata blob.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
    pub meta: Value,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData, meta: Value) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::IncompatibleDimensions(format!("dims {dims:?} hold {n} values, data has {}", data.len())));
        }
        Ok(Self { dims, data, meta })
    }

    pub fn from_grid(grid: &Grid<f64>, meta: Value) -> Self {
        Self { dims: vec![grid.rows(), grid.cols()], data: TensorData::F64(grid.data().to_vec()), meta }
    }

    pub fn from_mask(mask: &Grid<bool>, meta: Value) -> Self {
        let data = mask.data().iter().map(|&b| b as u8).collect();
        Self { dims: vec![mask.rows(), mask.cols()], data: TensorData::U8(data), meta }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Reads a 2D tensor as a grid of f64.
    pub fn to_grid(&self) -> Result<Grid<f64>> {
        match self.dims[..] {
            [r, c] => Ok(Grid::from_vec(r, c, self.to_f64()).expect("dims checked at construction")),
            _ => Err(Error::IncompatibleDimensions(format!("expected a 2D tensor, got dims {:?}", self.dims))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(32 + meta.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.data.dtype() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("missing PWT1 magic"));
        }
        let code = r.u32()?;
        let dtype = DType::from_code(code).ok_or_else(|| bad(&format!("unknown dtype code {code}")))?;
        let ndim = r.u32()? as usize;
        if ndim > 16 {
            return Err(bad(&format!("implausible rank {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflows"))?);
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| bad("metadata length overflows"))?;
        let meta_bytes = r.take(meta_len)?;
        let meta: Value = if meta_len == 0 {
            Value::Null
        } else {
            serde_json::from_slice(meta_bytes).map_err(|e| bad(&format!("metadata is not JSON: {e}")))?
        };
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
        let (n, payload_len) = n.ok_or_else(|| bad("payload size overflows"))?;
        let payload = r.take(payload_len)?;
        if r.pos != bytes.len() {
            return Err(bad(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::F64 => TensorData::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        debug_assert_eq!(data.len(), n);
        Ok(Self { dims, data, meta })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn bad(msg: &str) -> Error {
    Error::BadTensorHeader(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(&format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Maps a dB image linearly from `[-dynamic_range, 0]` to `[0, 255]`.
pub fn db_to_gray(img: &Grid<f64>, dynamic_range_db: f64) -> Grid<u8> {
    img.map(|v| {
        let u = ((v + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0);
        (u * 255.0).round() as u8
    })
}

pub fn pgm_bytes(gray: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", gray.cols(), gray.rows()).into_bytes();
    out.extend_from_slice(gray.data());
    out
}

pub fn write_pgm(path: impl AsRef<Path>, gray: &Grid<u8>) -> Result<()> {
    write_atomic(path.as_ref(), &pgm_bytes(gray))
}

/// Parses a binary (P5) 8-bit PGM.
pub fn read_pgm(bytes: &[u8]) -> Result<Grid<u8>> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::InvalidInput("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad PGM field {s:?}")));
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(Error::InvalidInput("only 8-bit binary PGM is supported".into()));
    }
    let (cols, rows) = (num(&fields[1])?, num(&fields[2])?);
    let data = bytes.get(pos..pos + rows * cols).ok_or_else(|| Error::InvalidInput("truncated PGM payload".into()))?;
    Ok(Grid::from_vec(rows, cols, data.to_vec()).expect("length checked"))
}
