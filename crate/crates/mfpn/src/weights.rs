//! Named parameter storage, initialization, SGD, and a binary file format.
//!
//! Parameters live in a `BTreeMap` so every walk over them — initialization,
//! the optimizer step, serialization — happens in sorted name order, which
//! keeps runs reproducible and the weight file canonical.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor};

const MAGIC: &[u8; 4] = b"MFPW";
const VERSION: u32 = 1;

/// Declares one parameter: its name and dimensions. Rank-4 entries are
/// convolution weights `(c_out, c_in, k, k)`; rank-1 entries are biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub dims: Vec<usize>,
}

impl WeightSpec {
    pub fn new(name: impl Into<String>, dims: &[usize]) -> WeightSpec {
        WeightSpec {
            name: name.into(),
            dims: dims.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Weight + bias pair for one convolution, named `{prefix}.w` / `{prefix}.b`.
pub fn conv_spec(prefix: &str, c_in: usize, c_out: usize, k: usize) -> [WeightSpec; 2] {
    [
        WeightSpec::new(format!("{prefix}.w"), &[c_out, c_in, k, k]),
        WeightSpec::new(format!("{prefix}.b"), &[c_out]),
    ]
}

/// One stored parameter.
#[derive(Clone, Debug)]
pub struct Param {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    fn zeros(dims: &[usize]) -> Param {
        let n = dims.iter().product();
        Param {
            dims: dims.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            trainable: true,
        }
    }
}

/// All parameters of a model, keyed by name.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    params: BTreeMap<String, Param>,
}

impl WeightStore {
    pub fn new() -> WeightStore {
        WeightStore::default()
    }

    /// Insert every spec (zero-filled), then run Glorot initialization.
    pub fn from_layout(layout: &[WeightSpec], seed: u64) -> WeightStore {
        let mut store = WeightStore::new();
        for spec in layout {
            store.insert_zeros(&spec.name, &spec.dims);
        }
        store.init_glorot(seed);
        store
    }

    pub fn insert_zeros(&mut self, name: &str, dims: &[usize]) {
        self.params.insert(name.to_string(), Param::zeros(dims));
    }

    /// Uniform Glorot fill for rank-4 entries, zeros for rank-1 entries.
    /// One RNG streams over the parameters in sorted name order, so the full
    /// initialization is a function of the seed alone.
    pub fn init_glorot(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for param in self.params.values_mut() {
            if param.dims.len() == 4 {
                let k2 = param.dims[2] * param.dims[3];
                let fan_out = param.dims[0] * k2;
                let fan_in = param.dims[1] * k2;
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut param.values {
                    *v = rng.gen_range(-bound..bound);
                }
            } else {
                param.values.fill(0.0);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    /// Bind a stored parameter into a graph as a named leaf. Rank-4 dims map
    /// directly to the tensor shape; rank-1 biases become `(1, c, 1, 1)`.
    pub fn tensor(&self, g: &mut Graph, name: &str) -> Result<Tensor> {
        let param = self
            .params
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        let shape = match param.dims.as_slice() {
            [a, b, c, d] => Shape::new(*a, *b, *c, *d),
            [c] => Shape::new(1, *c, 1, 1),
            other => {
                return Err(Error::WeightShape {
                    name: name.to_string(),
                    dims: other.to_vec(),
                    expected: "rank 1 or rank 4".to_string(),
                })
            }
        };
        g.named_leaf(name, shape, param.values.clone())
    }

    /// Pull gradients of this store's named leaves out of `g`, adding them to
    /// the stored gradients.
    pub fn absorb_grads(&mut self, g: &Graph) -> Result<()> {
        for (name, grad) in g.param_grads() {
            let param = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
            if param.grad.len() != grad.len() {
                return Err(Error::WeightShape {
                    name: name.to_string(),
                    dims: param.dims.clone(),
                    expected: format!("{} gradient values", grad.len()),
                });
            }
            for (a, gi) in param.grad.iter_mut().zip(grad) {
                *a += *gi;
            }
        }
        Ok(())
    }

    /// Plain gradient descent on every trainable parameter.
    pub fn sgd_step(&mut self, lr: f64) {
        for param in self.params.values_mut() {
            if !param.trainable {
                continue;
            }
            for (v, g) in param.values.iter_mut().zip(&param.grad) {
                *v -= lr * *g;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for param in self.params.values_mut() {
            param.grad.fill(0.0);
        }
    }

    /// Serialize to the MFPW byte format. Entries appear in sorted name
    /// order and floats keep their exact bits, so the encoding is canonical.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, param) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(param.dims.len() as u32).to_le_bytes());
            for &d in &param.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &param.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WeightStore> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::WeightFile("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::WeightFile(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::WeightFile("name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let numel: usize = dims.iter().product();
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(r.f64()?);
            }
            let grad = vec![0.0; numel];
            if params
                .insert(
                    name.clone(),
                    Param {
                        dims,
                        values,
                        grad,
                        trainable: true,
                    },
                )
                .is_some()
            {
                return Err(Error::WeightFile(format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFile(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(WeightStore { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightStore> {
        let bytes = std::fs::read(path)?;
        WeightStore::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::WeightFile("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
