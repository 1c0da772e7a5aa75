//! The `.pks` container: a directory with `manifest.json` and one raw
//! little-endian blob per array.
//!
//! ```json
//! {
//!   "version": 1,
//!   "shape": [18, 8, 8, 64],
//!   "arrays": { "samples": { "file": "samples.bin", "shape": [18, 8, 8, 64], "dtype": "c64le" } },
//!   "meta": { ... },
//!   "traj": { ... }
//! }
//! ```
//!
//! dtypes: `c64le` (f32 real/imag interleaved), `c128le` (f64 pairs),
//! `f32le`, `f64le`, `u8`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    C64(Vec<Complex32>),
    C128(Vec<C64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> &'static str {
        match self {
            ArrayData::C64(_) => "c64le",
            ArrayData::C128(_) => "c128le",
            ArrayData::F32(_) => "f32le",
            ArrayData::F64(_) => "f64le",
            ArrayData::U8(_) => "u8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::C64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elem_size(dtype: &str) -> Option<usize> {
        Some(match dtype {
            "c64le" => 8,
            "c128le" => 16,
            "f32le" => 4,
            "f64le" => 8,
            "u8" => 1,
            _ => return None,
        })
    }

    /// Complex data in the narrowest dtype that represents it exactly.
    pub fn complex(values: &[C64]) -> Self {
        let exact = values.iter().all(|v| (v.re as f32) as f64 == v.re && (v.im as f32) as f64 == v.im);
        if exact {
            ArrayData::C64(values.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect())
        } else {
            ArrayData::C128(values.to_vec())
        }
    }

    pub fn to_complex(&self) -> Option<Vec<C64>> {
        match self {
            ArrayData::C64(v) => Some(v.iter().map(|c| C64::new(c.re as f64, c.im as f64)).collect()),
            ArrayData::C128(v) => Some(v.clone()),
            _ => None,
        }
    }

    pub fn to_f64(&self) -> Option<Vec<f64>> {
        match self {
            ArrayData::F32(v) => Some(v.iter().map(|&x| x as f64).collect()),
            ArrayData::F64(v) => Some(v.clone()),
            _ => None,
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * Self::elem_size(self.dtype()).unwrap_or(1));
        match self {
            ArrayData::C64(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            ArrayData::C128(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    fn decode(dtype: &str, bytes: &[u8]) -> Result<Self> {
        let f32s = |b: &[u8]| -> Vec<f32> { b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect() };
        let f64s = |b: &[u8]| -> Vec<f64> { b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect() };
        Ok(match dtype {
            "c64le" => ArrayData::C64(f32s(bytes).chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect()),
            "c128le" => ArrayData::C128(f64s(bytes).chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()),
            "f32le" => ArrayData::F32(f32s(bytes)),
            "f64le" => ArrayData::F64(f64s(bytes)),
            "u8" => ArrayData::U8(bytes.to_vec()),
            other => return Err(Error::Manifest(format!("unknown dtype `{other}`"))),
        })
    }

    fn all_finite(&self) -> bool {
        match self {
            ArrayData::C64(v) => v.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
            ArrayData::C128(v) => v.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
            ArrayData::F32(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::F64(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::U8(_) => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayEntry {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {n} elements, data has {}", data.len())));
        }
        Ok(ArrayEntry { shape, data })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayRecord {
    file: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    shape: Vec<usize>,
    arrays: BTreeMap<String, ArrayRecord>,
    #[serde(default)]
    meta: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traj: Option<serde_json::Value>,
}

/// In-memory image of a `.pks` directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub shape: Vec<usize>,
    pub arrays: BTreeMap<String, ArrayEntry>,
    pub meta: serde_json::Value,
    pub traj: Option<serde_json::Value>,
}

impl Container {
    pub fn insert(&mut self, name: &str, entry: ArrayEntry) {
        self.arrays.insert(name.to_string(), entry);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.get(name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = BTreeMap::new();
        for (name, entry) in &self.arrays {
            if !entry.data.all_finite() {
                return Err(Error::NonFinite(format!("array `{name}`")));
            }
            let file = format!("{name}.bin");
            let path = dir.join(&file);
            fs::write(&path, entry.data.encode()).map_err(|e| Error::io(&path, e))?;
            records.insert(
                name.clone(),
                ArrayRecord {
                    file,
                    shape: entry.shape.clone(),
                    dtype: entry.data.dtype().to_string(),
                },
            );
        }
        let manifest = Manifest {
            version: VERSION,
            shape: self.shape.clone(),
            arrays: records,
            meta: self.meta.clone(),
            traj: self.traj.clone(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if text.trim().is_empty() {
            return Err(Error::Manifest(format!("{} is empty", path.display())));
        }
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest.version != VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", manifest.version)));
        }
        let mut arrays = BTreeMap::new();
        for (name, rec) in manifest.arrays {
            let elem =
                ArrayData::elem_size(&rec.dtype).ok_or_else(|| Error::Manifest(format!("unknown dtype `{}` for `{name}`", rec.dtype)))?;
            if rec.file.contains(['/', '\\']) || rec.file.starts_with('.') {
                return Err(Error::Manifest(format!("array file `{}` escapes the container", rec.file)));
            }
            let blob_path = dir.join(&rec.file);
            let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
            let expected = rec.shape.iter().product::<usize>() * elem;
            if bytes.len() != expected {
                return Err(Error::PayloadMismatch {
                    name,
                    expected,
                    found: bytes.len(),
                });
            }
            let data = ArrayData::decode(&rec.dtype, &bytes)?;
            if !data.all_finite() {
                return Err(Error::NonFinite(format!("array `{name}`")));
            }
            arrays.insert(name, ArrayEntry { shape: rec.shape, data });
        }
        Ok(Container {
            shape: manifest.shape,
            arrays,
            meta: manifest.meta,
            traj: manifest.traj,
        })
    }
}
