use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Named tensors in insertion order, with freeze flags and optimizer state.
///
/// Buffers (batch-norm running statistics) live here too so that a snapshot
/// captures the full model state; they are never touched by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
    buffers: BTreeSet<String>,
    frozen: BTreeSet<String>,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            buffers: BTreeSet::new(),
            frozen: BTreeSet::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a trainable tensor.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        self.buffers.remove(&name);
        self.moments.remove(&name);
        self.put(name, tensor);
    }

    /// Insert or replace a non-trainable state tensor.
    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        self.moments.remove(&name);
        self.buffers.insert(name.clone());
        self.put(name, tensor);
    }

    fn put(&mut self, name: String, tensor: Tensor<T>) {
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = tensor,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, tensor));
            }
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        let i = self.index.remove(name)?;
        let (_, t) = self.entries.remove(i);
        for (j, (n, _)) in self.entries.iter().enumerate().skip(i) {
            self.index.insert(n.clone(), j);
        }
        self.buffers.remove(name);
        self.frozen.remove(name);
        self.moments.remove(name);
        Some(t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    /// Like [`ParamStore::get`] but a missing name is an error.
    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_buffer(&self, name: &str) -> bool {
        self.buffers.contains(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Replace the frozen set. Optimizer state of newly frozen entries is
    /// discarded.
    pub fn set_frozen<I, S>(&mut self, names: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for n in names {
            let n = n.into();
            if !self.contains(&n) {
                return Err(Error::Missing(format!("cannot freeze unknown parameter `{n}`")));
            }
            set.insert(n);
        }
        self.moments.retain(|k, _| !set.contains(k));
        self.frozen = set;
        Ok(())
    }

    /// Whether the optimizer updates this entry.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.contains(name) && !self.is_buffer(name) && !self.is_frozen(name)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.names().filter(|n| self.is_trainable(n)).map(str::to_string).collect()
    }

    /// Total element count of trainable entries.
    pub fn count_trainable(&self) -> usize {
        self.iter().filter(|(n, _)| self.is_trainable(n)).map(|(_, t)| t.numel()).sum()
    }

    /// Total element count of all non-buffer entries.
    pub fn count_parameters(&self) -> usize {
        self.iter().filter(|(n, _)| !self.is_buffer(n)).map(|(_, t)| t.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.moments
    }

    pub fn reset_optimizer(&mut self) {
        self.moments.clear();
        self.step = 0;
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.clear_grad();
        }
    }

    /// One Adam update with bias correction on trainable entries.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, t) in &self.entries {
            if self.is_trainable(name) && t.grad().is_none() {
                return Err(Error::Missing(format!("gradient for trainable parameter `{name}`")));
            }
        }
        self.step += 1;
        let t_step = self.step as i32;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let c1 = 1.0 - b1.powi(t_step);
        let c2 = 1.0 - b2.powi(t_step);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (lr, eps) = (T::of(cfg.lr), T::of(cfg.epsilon));
        let (c1t, c2t) = (T::of(c1), T::of(c2));

        for (name, tensor) in &mut self.entries {
            if self.buffers.contains(name.as_str()) || self.frozen.contains(name.as_str()) {
                continue;
            }
            let n = tensor.numel();
            let state = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            let grad = tensor.grad.take().expect("checked above");
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                state.m[i] = b1t * state.m[i] + ob1 * g;
                state.v[i] = b2t * state.v[i] + ob2 * g * g;
                let m_hat = state.m[i] / c1t;
                let v_hat = state.v[i] / c2t;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }

    /// Element-wise conversion of every entry; optimizer state is dropped.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
            buffers: self.buffers.clone(),
            frozen: self.frozen.clone(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// True when every tensor value matches `other` bit for bit.
    pub fn values_bit_equal(&self, other: &ParamStore<T>) -> bool {
        self.len() == other.len()
            && self.iter().all(|(n, t)| {
                other.get(n).is_some_and(|o| {
                    o.shape() == t.shape()
                        && o.data().iter().zip(t.data()).all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
                })
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::full(&[2], 1.0));
        p.insert("b", Tensor::full(&[3], 2.0));
        p.insert_buffer("b.running", Tensor::full(&[3], 0.5));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = store();
        let before = p.clone();
        for name in ["a", "b"] {
            let n = p.get(name).unwrap().numel();
            p.get_mut(name).unwrap().set_grad(vec![0.0; n]).unwrap();
        }
        p.adam_step(&AdamConfig::default()).unwrap();
        assert!(p.values_bit_equal(&before));
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn single_step_moves_by_learning_rate() {
        let mut p = ParamStore::<f32>::new();
        p.insert("theta", Tensor::scalar(0.0));
        p.get_mut("theta").unwrap().set_grad(vec![1.0]).unwrap();
        p.adam_step(&AdamConfig::default()).unwrap();
        let theta = p.get("theta").unwrap().data()[0];
        // m_hat / sqrt(v_hat) = 1, so theta = -lr / (1 + eps)
        assert!((theta + 0.001).abs() < 1e-9, "{theta}");
    }

    #[test]
    fn frozen_entries_are_bit_identical_and_stateless() {
        let mut p = store();
        p.set_frozen(["a"]).unwrap();
        p.get_mut("a").unwrap().set_grad(vec![5.0, -3.0]).unwrap();
        p.get_mut("b").unwrap().set_grad(vec![1.0; 3]).unwrap();
        let before = p.get("a").unwrap().clone();
        p.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(p.get("a").unwrap().data(), before.data());
        assert!(!p.moments().contains_key("a"));
        assert!(p.moments().contains_key("b"));
        assert!(!p.moments().contains_key("b.running"));
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = store();
        p.get_mut("a").unwrap().set_grad(vec![1.0; 2]).unwrap();
        let err = p.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`b`"));
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn freezing_unknown_name_fails() {
        let mut p = store();
        assert!(p.set_frozen(["nope"]).is_err());
    }

    #[test]
    fn remove_keeps_order_of_the_rest() {
        let mut p = store();
        p.remove("a");
        let names: Vec<_> = p.names().collect();
        assert_eq!(names, ["b", "b.running"]);
        assert!(p.get("b.running").is_some());
    }

    #[test]
    fn counts_exclude_buffers_and_frozen() {
        let mut p = store();
        assert_eq!(p.count_parameters(), 5);
        assert_eq!(p.count_trainable(), 5);
        p.set_frozen(["b"]).unwrap();
        assert_eq!(p.count_trainable(), 2);
    }
}
