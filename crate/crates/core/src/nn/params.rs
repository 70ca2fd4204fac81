use std::io::{Read, Write};
use std::path::Path;

use rustc_hash::FxHashMap;

use super::tensor::{DType, Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors with a gradient buffer of the same shape each.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: FxHashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: FxHashMap::default(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.grads.push(Tensor::zeros(value.rows, value.cols));
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.values[id]
    }

    pub fn grad(&self, id: usize) -> &Tensor<T> {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.grads[id]
    }

    /// Simultaneous mutable access to a value and its gradient.
    pub fn value_and_grad_mut(&mut self, id: usize) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.values[id], &self.grads[id])
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data.fill(T::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = T::from_f64(max_norm / norm);
            for g in &mut self.grads {
                for v in &mut g.data {
                    *v *= s;
                }
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.all_finite())
    }

    /// Element-type conversion, gradients reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            let data = v.data.iter().map(|x| U::from_f64(x.as_f64())).collect();
            out.add(n.clone(), Tensor::from_vec(v.rows, v.cols, data));
        }
        out
    }

    /// Copies values by name; every parameter must be present with its shape.
    pub fn load_from(&mut self, arrays: &[NamedArray]) -> Result<()> {
        for a in arrays {
            let Some(id) = self.id(&a.name) else { continue };
            let v = &mut self.values[id];
            if a.shape != [v.rows, v.cols] {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} does not match {:?}",
                    a.name,
                    a.shape,
                    v.shape()
                )));
            }
            for (d, s) in v.data.iter_mut().zip(&a.data) {
                *d = T::from_f64(*s);
            }
        }
        for n in &self.names {
            if !arrays.iter().any(|a| &a.name == n) {
                return Err(Error::Checkpoint(format!("missing parameter {n}")));
            }
        }
        Ok(())
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| NamedArray::from_tensor(n.clone(), v))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.values)
    }
}

/// One entry of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64; f32 arrays round-trip exactly.
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor<T: Real>(name: String, t: &Tensor<T>) -> Self {
        NamedArray {
            name,
            dtype: T::DTYPE,
            shape: vec![t.rows, t.cols],
            data: t.to_f64_vec(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let (r, c) = match self.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            [] => (1, 1),
            _ => return Err(Error::Checkpoint(format!("{}: rank {} unsupported", self.name, self.shape.len()))),
        };
        Ok(Tensor::from_vec(r, c, self.data.iter().map(|x| T::from_f64(*x)).collect()))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"PCNAV1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint contents: a JSON metadata block plus named arrays.
///
/// Layout (little-endian): magic, `u32` version, `u32` metadata length and
/// UTF-8 JSON, `u32` entry count, then a manifest of
/// `(u16 name length, name, u8 dtype, u8 rank, u64 dims…)` and finally each
/// array's elements in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            buf.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(a.name.as_bytes());
            buf.push(a.dtype.code());
            buf.push(a.shape.len() as u8);
            for d in &a.shape {
                buf.extend_from_slice(&(*d as u64).to_le_bytes());
            }
        }
        for a in &self.arrays {
            match a.dtype {
                DType::F32 => a.data.iter().for_each(|x| (*x as f32).write_le(&mut buf)),
                DType::F64 => a.data.iter().for_each(|x| x.write_le(&mut buf)),
            }
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(6)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = cur.u32()? as usize;
        let meta = serde_json::from_slice(cur.take(meta_len)?)?;
        let n = cur.u32()? as usize;
        let mut manifest = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let dtype = DType::from_code(cur.take(1)?[0])
                .ok_or_else(|| Error::Checkpoint(format!("{name}: unknown element type")))?;
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            manifest.push((name, dtype, shape));
        }
        let mut arrays = Vec::with_capacity(manifest.len());
        for (name, dtype, shape) in manifest {
            let count: usize = shape.iter().product();
            let raw = cur.take(count.checked_mul(dtype.size()).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
            };
            arrays.push(NamedArray { name, dtype, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
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
