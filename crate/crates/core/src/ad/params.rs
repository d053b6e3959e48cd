//! Named parameter storage: weights, gradient accumulators, Adam moments,
//! and the JSON checkpoint format (shapes + base64 little-endian doubles).

use super::tape::{Gradients, Tape, TensorId};
use super::tensor::Tensor;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("unknown parameter {0}")]
    Missing(String),
    #[error("parameter {name}: payload holds {got} doubles, shape {shape:?} needs {want}")]
    PayloadMismatch { name: String, shape: [usize; 2], want: usize, got: usize },
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint base64 error in {name}: {source}")]
    Base64 { name: String, source: base64::DecodeError },
}

#[derive(Debug, Clone)]
struct Param {
    value: Tensor,
    grad: Tensor,
    adam_m: Tensor,
    adam_v: Tensor,
}

/// All learnable weights of a model, addressable by name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    adam_step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let [r, c] = value.shape();
        let zero = Tensor::zeros(r, c);
        self.entries.insert(
            name.into(),
            Param { value, grad: zero.clone(), adam_m: zero.clone(), adam_v: zero },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries.get(name).map(|p| &p.value).ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ParamError> {
        self.entries.get_mut(name).map(|p| &mut p.value).ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries.get(name).map(|p| &p.grad).ok_or_else(|| ParamError::Missing(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// One Adam update with bias correction and decoupled weight decay;
    /// gradients are zeroed afterwards.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) {
        self.adam_step += 1;
        let t = self.adam_step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in self.entries.values_mut() {
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            let w = p.value.data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * w[i]);
            }
            p.grad.data_mut().fill(0.0);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    shape: [usize; 2],
    data_b64: String,
}

impl ParamStore {
    /// Serialize weights as `name -> {shape, base64 little-endian doubles}`.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, CheckpointEntry> = self
            .entries
            .iter()
            .map(|(name, p)| {
                let mut bytes = Vec::with_capacity(p.value.len() * 8);
                for &x in p.value.data() {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
                (name.as_str(), CheckpointEntry { shape: p.value.shape(), data_b64: B64.encode(bytes) })
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, ParamError> {
        let map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(json)?;
        let mut store = ParamStore::new();
        for (name, entry) in map {
            let bytes = B64
                .decode(entry.data_b64.as_bytes())
                .map_err(|source| ParamError::Base64 { name: name.clone(), source })?;
            let want = entry.shape[0] * entry.shape[1];
            if bytes.len() != want * 8 {
                return Err(ParamError::PayloadMismatch {
                    name,
                    shape: entry.shape,
                    want,
                    got: bytes.len() / 8,
                });
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(name, Tensor::from_vec(entry.shape[0], entry.shape[1], data));
        }
        Ok(store)
    }
}

/// Binds a [`ParamStore`] to a [`Tape`] for one forward/backward pass:
/// parameters become leaves on first use, and `harvest` pushes the leaf
/// adjoints back into the store's gradient accumulators.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: HashMap<String, TensorId>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session { tape: Tape::new(), store, bound: HashMap::new() }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Leaf node for the named parameter (bound once per session).
    pub fn param(&mut self, name: &str) -> TensorId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|_| panic!("missing parameter {name}"))
            .clone();
        let id = self.tape.leaf(value);
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.tape.leaf(value)
    }

    /// Run the reverse pass and return the gradient of every bound
    /// parameter, sorted by name. The session borrow can end before the
    /// gradients are pushed back into a mutable store.
    pub fn parameter_grads(&self, loss: TensorId) -> Vec<(String, Tensor)> {
        let grads = self.tape.backward(loss);
        self.collect_grads(&grads)
    }

    pub fn collect_grads(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .bound
            .iter()
            .filter_map(|(name, &id)| grads.get(id).map(|g| (name.clone(), g.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

impl ParamStore {
    /// Add one backward pass's parameter gradients into the accumulators.
    pub fn accumulate_grads(&mut self, grads: &[(String, Tensor)]) {
        for (name, g) in grads {
            self.entries
                .get_mut(name.as_str())
                .unwrap_or_else(|| panic!("missing parameter {name}"))
                .grad
                .add_assign(g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_and_zero_decay_leave_weights_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        store.adam_step(1e-3, 0.9, 0.999, 1e-8, 0.0);
        assert_eq!(store.get("w").unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        // with constant gradient g, bias-corrected m_hat = g and
        // v_hat = g^2, so the first update is lr * g/(|g| + eps) ~ lr
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0));
        store.entries.get_mut("w").unwrap().grad = Tensor::scalar(0.25);
        store.adam_step(5e-4, 0.9, 0.999, 1e-8, 0.0);
        let w = store.get("w").unwrap().at(0, 0);
        assert!((w + 5e-4).abs() < 1e-10, "w = {w}");
        // gradients zeroed afterwards
        assert_eq!(store.grad("w").unwrap().at(0, 0), 0.0);
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let loss_of = |w: &Tensor| w.data().iter().map(|&x| x * x).sum::<f64>();
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let w = store.get("w").unwrap().clone();
            let loss = loss_of(&w);
            assert!(loss < last + 1e-12, "loss must not increase: {loss} after {last}");
            last = loss;
            store.entries.get_mut("w").unwrap().grad = w.map(|x| 2.0 * x);
            store.adam_step(0.05, 0.9, 0.999, 1e-8, 0.0);
        }
        assert!(last < 1.0, "final loss {last}");
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_vec(2, 2, vec![0.1, -0.2, 1.0 / 3.0, f64::MIN_POSITIVE]));
        store.insert("b", Tensor::scalar(-1.75));
        let back = ParamStore::from_json(&store.to_json()).unwrap();
        assert_eq!(store.get("a.w").unwrap(), back.get("a.w").unwrap());
        assert_eq!(store.get("b").unwrap(), back.get("b").unwrap());
    }

    #[test]
    fn checkpoint_rejects_payload_mismatch() {
        let json = r#"{"w": {"shape": [1, 2], "data_b64": "AAAAAAAA8D8="}}"#;
        assert!(matches!(ParamStore::from_json(json), Err(ParamError::PayloadMismatch { .. })));
    }
}
