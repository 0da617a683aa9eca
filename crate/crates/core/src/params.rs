//! Named parameter storage, initialization, and the checkpoint format.
//!
//! A checkpoint is an 8-byte little-endian header length, a JSON header
//! listing every tensor's name, element type, shape and byte range, and then
//! the little-endian tensor data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of the truncated-normal initializer for weight matrices.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

/// Draws from N(0, std²) truncated to ±2·std by rejection.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break x;
            }
        })
        .collect()
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn add_trunc_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let t = Tensor::from_f64(shape, &trunc_normal(rng, n, INIT_STD))?;
        self.add(name, t)
    }

    /// Standard-normal draws scaled by `std`, untruncated.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("normal init: {e}")))?;
        let data: Vec<f64> = (0..shape.iter().product()).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::from_f64(shape, &data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.add(name, Tensor::ones(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim("param set", format!("{:?} -> {:?}", self.values[id.0].shape(), value.shape())));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let width = (T::BITS / 8) as usize;
        let dtype = if T::BITS == 32 { "f32" } else { "f64" };
        let mut header = BTreeMap::new();
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.values) {
            let end = offset + t.len() * width;
            header.insert(
                name.clone(),
                HeaderEntry { dtype: dtype.to_string(), shape: t.shape().to_vec(), offsets: [offset, end] },
            );
            offset = end;
        }
        let json = serde_json::to_vec(&header)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.values {
            for &v in t.data() {
                if T::BITS == 32 {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                } else {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Overwrites every parameter of this store from a checkpoint. Names and
    /// shapes must match; the stored element width may differ.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        self.read_from(&mut f)
    }

    pub fn read_from<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&json)?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let entry = header.get(name).ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if entry.shape != value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint shape {:?} for `{name}`, expected {:?}",
                    entry.shape,
                    value.shape()
                )));
            }
            let [start, end] = entry.offsets;
            let bytes = data.get(start..end).ok_or_else(|| Error::Data(format!("truncated checkpoint at `{name}`")))?;
            let vals: Vec<T> = match entry.dtype.as_str() {
                "f32" => {
                    bytes.chunks_exact(4).map(|b| T::cst(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect()
                }
                "f64" => bytes.chunks_exact(8).map(|b| T::cst(f64::from_le_bytes(b.try_into().unwrap()))).collect(),
                other => return Err(Error::Data(format!("unknown dtype `{other}`"))),
            };
            if vals.len() != value.len() {
                return Err(Error::Data(format!("byte range of `{name}` does not match its shape")));
            }
            value.data_mut().copy_from_slice(&vals);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offsets: [usize; 2],
}
