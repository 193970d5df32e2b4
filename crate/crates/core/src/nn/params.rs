//! Named parameter tensors with gradient slots and optimizer state, plus
//! non-trainable buffers (batch-norm running statistics).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Adam first moment.
    pub m: Matrix,
    /// Adam second moment.
    pub v: Matrix,
}

impl Param {
    fn new(name: String, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name,
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    params: Vec<Param>,
    buffers: Vec<Buffer>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

/// Glorot/Xavier uniform bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.param_id(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Adds a `rows × cols` tensor drawn uniformly from `±glorot_bound`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = glorot_bound(fan_in, fan_out);
        let value = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn save_checkpoint(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            meta,
            params: self.clone(),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ckpt)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the parameters and the stored metadata.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, serde_json::Value)> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        for p in &ckpt.params.params {
            let shape = p.value.shape();
            if p.grad.shape() != shape || p.m.shape() != shape || p.v.shape() != shape {
                return Err(Error::Checkpoint(format!("inconsistent shapes for {}", p.name)));
            }
        }
        Ok((ckpt.params, ckpt.meta))
    }
}

const CHECKPOINT_FORMAT: &str = "sccnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    meta: serde_json::Value,
    params: ModelParams,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_init_is_bounded_and_seeded() {
        let mut a = ModelParams::new();
        let mut b = ModelParams::new();
        let ia = a.add_glorot("w", 16, 32, 16, 32, &mut ChaCha8Rng::seed_from_u64(3));
        b.add_glorot("w", 16, 32, 16, 32, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let bound = glorot_bound(16, 32);
        assert!(a.param(ia).value.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ModelParams::new();
        let id = p.add("w", Matrix::from_rows(&[[1.5, -2.0]]));
        p.param_mut(id).m[(0, 1)] = 0.25;
        p.add_buffer("running_mean", vec![0.1, 0.2]);
        p.step = 7;
        let dir = std::env::temp_dir().join(format!("sccnn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        p.save_checkpoint(&path, serde_json::json!({"variant": "test"}))
            .unwrap();
        let (q, meta) = ModelParams::load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta["variant"], "test");
        std::fs::write(
            &path,
            r#"{"format":"other","version":1,"meta":null,"params":{"params":[],"buffers":[],"step":0}}"#,
        )
        .unwrap();
        assert!(ModelParams::load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
