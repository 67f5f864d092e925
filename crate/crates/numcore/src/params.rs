//! Named parameter sets with gradient accumulators and trainability flags.
//!
//! Iteration order is the sorted name order (BTreeMap), which keeps optimizer
//! sweeps and checkpoints deterministic across runs and platforms.

use std::collections::BTreeMap;

use crate::error::NumError;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// A collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    map: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), Param { value, grad: None, trainable: true });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.map.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, NumError> {
        self.map
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumError::UnknownParameter { name: name.to_string() })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sorted iteration over (name, param).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Set trainability from a predicate on the parameter name.
    pub fn set_trainable_by(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, param) in self.map.iter_mut() {
            param.trainable = pred(name);
        }
    }

    /// Total scalar entries across all parameters.
    pub fn num_entries(&self) -> usize {
        self.map.values().map(|p| p.value.numel()).sum()
    }

    /// Scalar entries across trainable parameters only.
    pub fn num_trainable_entries(&self) -> usize {
        self.map
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Reset gradients: trainable parameters get zero tensors, frozen ones
    /// get `None`.
    pub fn zero_grads(&mut self) {
        for param in self.map.values_mut() {
            param.grad = if param.trainable {
                Some(Tensor::zeros(param.value.shape()))
            } else {
                None
            };
        }
    }

    /// Add `grad` into the accumulator for `name`. Frozen parameters ignore
    /// the update.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<(), NumError> {
        let param = self
            .map
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParameter { name: name.to_string() })?;
        if !param.trainable {
            return Ok(());
        }
        if grad.shape() != param.value.shape() {
            return Err(NumError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: param.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let acc = param
            .grad
            .get_or_insert_with(|| Tensor::zeros(param.value.shape()));
        let dst = acc.data_mut();
        for (d, s) in dst.iter_mut().zip(grad.data()) {
            *d += s;
        }
        Ok(())
    }

    /// Scale all present gradients by `c` (used for batch averaging).
    pub fn scale_grads(&mut self, c: f64) {
        for param in self.map.values_mut() {
            if let Some(g) = &mut param.grad {
                for v in g.data_mut() {
                    *v *= c;
                }
            }
        }
    }

    /// FNV-1a checksum over names, shapes and raw little-endian payloads.
    /// Bit-identical parameter sets produce identical checksums.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x100_0000_01b3);
            }
        };
        for (name, param) in &self.map {
            eat(name.as_bytes());
            for &d in param.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in param.value.data() {
                eat(&v.to_le_bytes());
            }
        }
        hash
    }

    /// Checksum restricted to names matching a prefix.
    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        let mut subset = ParamSet::new();
        for (name, param) in &self.map {
            if name.starts_with(prefix) {
                subset.insert(name.clone(), param.value.clone());
            }
        }
        subset.checksum()
    }
}
