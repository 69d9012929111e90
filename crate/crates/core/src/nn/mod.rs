//! Parameter storage and the small set of layers the networks are built from.

mod encoder;
mod layers;
mod optim;

pub use encoder::{stack_frames, ChunkConvEncoder, EncoderConfig};
pub use layers::{Embedding, Linear, Lstm};
pub use optim::{clip_global_norm, Adam, Optimizer, OptimizerKind, Sgd};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter tensors of one network, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Parameters of one store placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Serialized form of a tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`.
    pub fn add_normal<R: rand::Rng>(&mut self, rng: &mut R, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let n = shape.iter().product();
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..n).map(|_| scale * crate::rng::normal(rng)).collect();
        self.add(name, Tensor::from_parts(shape, values))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Pushes every tensor onto `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Flat copy of every scalar, in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::BadLength {
                shape: vec![self.num_scalars()],
                expected: self.num_scalars(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn to_records(&self) -> BTreeMap<String, TensorRecord> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every tensor from `records`; names and shapes must match.
    pub fn load_records(&mut self, records: &BTreeMap<String, TensorRecord>) -> Result<()> {
        if records.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.names.len(),
                records.len()
            )));
        }
        for (name, tensor) in self.names.iter().zip(&mut self.tensors) {
            let rec = records
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if rec.shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    rec.shape,
                    tensor.shape()
                )));
            }
            *tensor = Tensor::new(rec.shape.clone(), rec.values.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_and_records() {
        let mut rng = crate::rng::seeded(1);
        let mut store = ParamStore::new();
        store.add_normal(&mut rng, "a", vec![2, 3], 2);
        store.add_zeros("b", vec![3]);
        let flat = store.flatten();
        assert_eq!(flat.len(), 9);
        let mut other = store.clone();
        other.set_flat(&[1.0; 9]).unwrap();
        other.set_flat(&flat).unwrap();
        assert_eq!(other, store);

        let records = store.to_records();
        let mut loaded = store.clone();
        loaded.tensors_mut()[0].values_mut()[0] = 42.0;
        loaded.load_records(&records).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(store.id("b"), Some(ParamId(1)));
    }
}
