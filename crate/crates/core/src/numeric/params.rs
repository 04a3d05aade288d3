use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::tape::Tape;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GNNCKPT1";

#[derive(Clone, Debug)]
struct Param {
    value: DenseMatrix,
    grad: DenseMatrix,
}

/// Named learnable matrices plus the seeded generator used to initialize them.
///
/// Names are unique and shapes are fixed at registration. Iteration order is
/// lexicographic by name, which keeps checkpoints and updates deterministic.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Registers `name` with uniform init in `[-1/sqrt(rows), 1/sqrt(rows)]`,
    /// where `rows` is the fan-in of a right-multiplied weight.
    ///
    /// Re-registering an existing name with the same shape is a no-op; a
    /// different shape is an error.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if let Some(p) = self.params.get(name) {
            return check_shape(name, p.value.shape(), (rows, cols));
        }
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, DenseMatrix::from_raw(rows, cols, data))
    }

    /// Registers `name` with all-zero entries (biases).
    pub fn register_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if let Some(p) = self.params.get(name) {
            return check_shape(name, p.value.shape(), (rows, cols));
        }
        self.insert(name, DenseMatrix::zeros(rows, cols))
    }

    /// Registers `name` with an explicit value.
    pub fn insert(&mut self, name: &str, value: DenseMatrix) -> Result<()> {
        if let Some(p) = self.params.get(name) {
            check_shape(name, p.value.shape(), value.shape())?;
        }
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        self.params.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str) -> Result<&DenseMatrix> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&DenseMatrix> {
        self.params
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Overwrites a value; the shape must match.
    pub fn set_value(&mut self, name: &str, value: DenseMatrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        check_shape(name, p.value.shape(), value.shape())?;
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Result<&mut DenseMatrix> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = DenseMatrix::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// Adds the gradients of every parameter bound on `tape`.
    pub fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        for (name, var) in tape.params() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            p.grad.add_assign(&tape.grad(var));
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite_grad(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|(_, p)| !p.grad.as_slice().iter().all(|g| g.is_finite()))
            .map(|(k, _)| k.as_str())
    }

    pub(crate) fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            for g in p.grad.as_mut_slice() {
                *g *= factor;
            }
        }
    }

    /// Plain gradient descent: `value -= lr * grad`.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let updated = p.value.zip_with(&p.grad, "sgd_step", |v, g| v - lr * g)?;
            if !updated.is_finite() {
                return Err(Error::NonFinite(format!("update of parameter `{name}`")));
            }
            p.value = updated;
        }
        Ok(())
    }

    /// Copies every value from `other`; names and shapes must agree exactly.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for name in self.params.keys() {
            if !other.contains(name) {
                return Err(Error::UnknownParam(name.clone()));
            }
        }
        for (name, p) in &other.params {
            let mine = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            check_shape(name, mine.value.shape(), p.value.shape())?;
            mine.value = p.value.clone();
        }
        Ok(())
    }

    /// Binary checkpoint: magic, count, then per parameter the name, shape
    /// and little-endian `f64` values. Round trips are bit-exact.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, p) in &self.params {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
            for v in p.value.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a binary checkpoint. The returned store is seeded with `0`;
    /// its generator is only used for registering new parameters.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse {
                what: "checkpoint",
                detail: "bad magic header".into(),
            });
        }
        let mut store = ParamStore::new(0);
        let count = read_u64(&mut r)?;
        for _ in 0..count {
            let len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Parse {
                what: "checkpoint",
                detail: e.to_string(),
            })?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            if store.contains(&name) {
                return Err(Error::Parse {
                    what: "checkpoint",
                    detail: format!("duplicate parameter `{name}`"),
                });
            }
            store.insert(&name, DenseMatrix::from_vec(rows, cols, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }

    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<JsonParam> = self
            .params
            .iter()
            .map(|(name, p)| JsonParam {
                name: name.clone(),
                shape: [p.value.rows(), p.value.cols()],
                values: p.value.as_slice().to_vec(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&entries)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<JsonParam> = serde_json::from_str(text)?;
        let mut store = ParamStore::new(0);
        for e in entries {
            let value = DenseMatrix::from_vec(e.shape[0], e.shape[1], e.values)?;
            store.insert(&e.name, value)?;
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonParam {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn check_shape(name: &str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ParamShape {
            name: name.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}
