use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: DenseTensor,
    grad: DenseTensor,
    m: DenseTensor,
    v: DenseTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Named trainable tensors with gradient slots and Adam state, plus
/// non-trainable buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "StoreRecord", into = "StoreRecord")]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
    step: u64,
    buffers: BTreeMap<String, DenseTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: DenseTensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let zeros = DenseTensor::zeros(value.shape());
        self.params.push(Param {
            name: name.clone(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &DenseTensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseTensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseTensor {
        &self.params[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &DenseTensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn buffer(&self, name: &str) -> Option<&DenseTensor> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.buffers.insert(name.into(), value);
    }

    /// Bias-corrected Adam update, then zeroes every gradient slot.
    /// Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, learning_rate: f64, cfg: AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.data().iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let (value, grad, m, v) = (p.value.data_mut(), p.grad.data(), p.m.data_mut(), p.v.data_mut());
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// Copies parameter values and buffers from `other`, which must have the
    /// same parameter names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id(&p.name)
                .ok_or_else(|| Error::contract(format!("missing parameter {}", p.name)))?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        self.buffers = other.buffers.clone();
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: DenseTensor,
}

#[derive(Serialize, Deserialize)]
struct StoreRecord {
    step: u64,
    params: Vec<NamedTensor>,
    buffers: BTreeMap<String, DenseTensor>,
}

impl From<ParamStore> for StoreRecord {
    fn from(s: ParamStore) -> Self {
        Self {
            step: s.step,
            params: s
                .params
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name,
                    tensor: p.value,
                })
                .collect(),
            buffers: s.buffers,
        }
    }
}

impl From<StoreRecord> for ParamStore {
    fn from(r: StoreRecord) -> Self {
        let mut store = ParamStore {
            step: r.step,
            buffers: r.buffers,
            ..Default::default()
        };
        for p in r.params {
            // Names in a serialized store were unique when written.
            let _ = store.add(p.name, p.tensor);
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", DenseTensor::scalar(value)).unwrap();
        s.accumulate_grad(id, &DenseTensor::scalar(grad));
        (s, id)
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(1.0, 1.0);
        s.adam_step(0.01, AdamConfig::default()).unwrap();
        let moved = 1.0 - s.value(id).data()[0];
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        assert!((moved - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.grad(id).data(), &[0.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let (mut s, id) = scalar_store(2.5, 0.0);
        s.adam_step(0.05, AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).data(), &[2.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = scalar_store(2.5, f64::NAN);
        let err = s.adam_step(0.01, AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(m) if m.contains('w')), "{err}");
        assert_eq!(s.value(id).data(), &[2.5]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a", DenseTensor::scalar(0.0)).unwrap();
        assert!(s.add("a", DenseTensor::scalar(1.0)).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_values_and_buffers() {
        let mut s = ParamStore::new();
        s.add("a", DenseTensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
        s.set_buffer("bn.mean", DenseTensor::filled(&[3], 0.25));
        let json = serde_json::to_string(&s).unwrap();
        let back: ParamStore = serde_json::from_str(&json).unwrap();
        let id = back.id("a").unwrap();
        assert_eq!(back.value(id).data(), &[1.0, -2.0]);
        assert_eq!(back.grad(id).data(), &[0.0, 0.0]);
        assert_eq!(back.buffer("bn.mean"), s.buffer("bn.mean"));
    }
}
