use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::ad::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter arrays in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f64>) {
        let name = name.into();
        match self.index(&name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name);
                self.values.push(value);
            }
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.index(name).map(|i| &mut self.values[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<f64>] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// All scalars concatenated in storage order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Scalar `k` of the flattened view, as (array, offset).
    pub fn locate(&self, mut k: usize) -> Option<(usize, usize)> {
        for (i, t) in self.values.iter().enumerate() {
            if k < t.len() {
                return Some((i, k));
            }
            k -= t.len();
        }
        None
    }

    /// Leaves on the tape, one per array; `trainable` selects gradient
    /// tracking.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| {
                let t = Tensor::from_f64(v);
                if trainable {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        Bound { names: self.names.clone(), vars }
    }

    pub fn write_to(&self, w: &mut impl Write, metadata: &serde_json::Value) -> Result<()> {
        let meta = serde_json::to_vec(metadata)?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, metadata: &serde_json::Value) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out, metadata)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<(Params, serde_json::Value)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut meta = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut meta)?;
        let metadata = serde_json::from_slice(&meta)?;
        let n = read_u32(r)? as usize;
        let mut params = Params::new();
        for _ in 0..n {
            let mut name = vec![0u8; read_u32(r)? as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for x in &mut data {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            params.insert(name, Tensor::new(rows, cols, data)?);
        }
        Ok((params, metadata))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Tape leaves for a [`Params`] set.
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        Bound { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }
}

/// Uniform in ±1/√fan_in.
pub(crate) fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor<f64> {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-b..=b)).collect();
    Tensor { rows, cols, data }
}
