//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SSMTCKPT"                      8-byte magic
//! u32 version                     currently 1
//! u32 n, n bytes                  metadata, UTF-8 `key = value` lines
//! u32 count                       number of arrays
//! per array:
//!   u32 n, n bytes                name
//!   u8  width                     4 (f32) or 8 (f64)
//!   u32 ndim, ndim × u64          shape
//!   product(shape) × width bytes  values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamTree, Real};

pub const MAGIC: &[u8; 8] = b"SSMTCKPT";
pub const VERSION: u32 = 1;

/// Values as stored on disk. f32 data widened to f64 converts back exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredArray {
    pub width: u8,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    /// in file order
    pub arrays: Vec<(String, StoredArray)>,
}

impl Checkpoint {
    pub fn from_params<T: Real, P: ParamTree<T>>(params: &P, meta: BTreeMap<String, String>) -> Self {
        let arrays = params
            .named()
            .into_iter()
            .map(|(name, a)| {
                (
                    name,
                    StoredArray {
                        width: T::WIDTH,
                        shape: a.shape().to_vec(),
                        data: a.to_f64_vec(),
                    },
                )
            })
            .collect();
        Self { meta, arrays }
    }

    pub fn num_params(&self) -> usize {
        self.arrays.iter().map(|(_, a)| a.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&StoredArray> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Copies every stored array into the matching parameter. Names and
    /// shapes must agree one to one.
    pub fn load_into<T: Real, P: ParamTree<T>>(&self, params: &mut P) -> Result<()> {
        let mut targets = params.named_mut();
        if targets.len() != self.arrays.len() {
            return Err(Error::format(format!(
                "checkpoint has {} arrays, model expects {}",
                self.arrays.len(),
                targets.len()
            )));
        }
        for (name, dst) in targets.iter_mut() {
            let src = self
                .get(name)
                .ok_or_else(|| Error::format(format!("checkpoint lacks array {name}")))?;
            if src.shape != dst.shape() {
                return Err(Error::dim(format!(
                    "{name}: stored shape {:?}, model shape {:?}",
                    src.shape,
                    dst.shape()
                )));
            }
            for (d, &s) in dst.data_mut().iter_mut().zip(&src.data) {
                *d = T::lit(s);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        put_bytes(&mut out, meta.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            put_bytes(&mut out, name.as_bytes());
            out.push(a.width);
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &a.data {
                if a.width == 4 {
                    (v as f32).write_le(&mut out);
                } else {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::format("metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad metadata line {line:?}")))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::format("array name is not UTF-8"))?;
            let width = r.take(1)?[0];
            if width != 4 && width != 8 {
                return Err(Error::format(format!("{name}: unknown value width {width}")));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * width as usize)?;
            let data = if width == 4 {
                raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect()
            } else {
                raw.chunks_exact(8).map(f64::read_le).collect()
            };
            arrays.push((name, StoredArray { width, shape, data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after last array"));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// The stored arrays as `f64` dense arrays, for inspection.
    pub fn dense(&self, name: &str) -> Option<DenseArray<f64>> {
        self.get(name)
            .map(|a| DenseArray::new(&a.shape, a.data.clone()).expect("stored shape"))
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint truncated"))?;
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
