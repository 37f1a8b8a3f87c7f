use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;

use super::{Gradients, Tape, Tensor, TensorError, Var};

const CHECKPOINT_MAGIC: &[u8; 4] = b"RDKC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    /// Xavier-uniform `rows × cols` weight.
    pub fn add_xavier<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(rows, cols, data).expect("sized by construction"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W, metadata: &str) -> Result<(), TensorError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(metadata.len() as u32).to_le_bytes())?;
        w.write_all(metadata.as_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| TensorError::Checkpoint(format!("parameter name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&2u32.to_le_bytes())?;
            for d in value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the store and its metadata block.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Self, String), TensorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata = String::from_utf8(meta).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
            let ndim = read_u32(&mut r)?;
            if ndim != 2 {
                return Err(TensorError::Checkpoint(format!("{name}: expected 2 dims, got {ndim}")));
            }
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.add(name, Tensor::new(rows, cols, data)?);
        }
        Ok((store, metadata))
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        if other.len() != self.len() {
            return Err(TensorError::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for id in other.ids() {
            let name = other.name(id);
            let target = self.find(name).ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter {name}")))?;
            if self.get(target).shape() != other.get(id).shape() {
                return Err(TensorError::Checkpoint(format!(
                    "{name}: shape {:?} != {:?}",
                    other.get(id).shape(),
                    self.get(target).shape()
                )));
            }
            self.values[target.0] = Arc::clone(&other.values[id.0]);
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// A tape plus lazily bound parameters for one forward pass.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: HashMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { tape: Tape::new(), store, bound: HashMap::new() }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var, TensorError> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.tape.shared_leaf(Arc::clone(&self.store.values[id.0]))?;
        self.bound.insert(id, v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.tape.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Per-parameter gradients, zero-filled for parameters the pass never touched.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.store
            .ids()
            .map(|id| {
                let shape = self.store.get(id).shape();
                match self.bound.get(&id) {
                    Some(&v) => grads.get_or_zeros(v, shape),
                    None => Tensor::zeros(shape[0], shape[1]),
                }
            })
            .collect()
    }

    pub fn linear(&mut self, layer: &Linear, x: Var) -> Result<Var, TensorError> {
        let w = self.param(layer.weight)?;
        let b = self.param(layer.bias)?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    pub fn norm(&mut self, norm: &Norm, x: Var) -> Result<Var, TensorError> {
        let g = self.param(norm.gamma)?;
        let b = self.param(norm.beta)?;
        self.tape.layer_norm(x, g, b)
    }
}

/// Affine map `x · W + b` with `W: d_in × d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), d_in, d_out, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, d_out));
        Self { weight, bias }
    }
}

/// Layer-norm affine parameters.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, d, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, d));
        Self { gamma, beta }
    }
}
