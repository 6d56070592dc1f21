use indexmap::IndexMap;
use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    steps: u64,
}

/// Named trainable tensors plus their Adam state, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    slots: IndexMap<String, Slot>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        let zeros = Tensor::zeros(value.shape());
        self.slots.insert(
            name,
            Slot {
                value,
                first_moment: zeros.clone(),
                second_moment: zeros,
                steps: 0,
            },
        );
        Ok(())
    }

    /// Inserts a tensor drawn uniformly from `[-a, a]` with `a = 1/sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn value_at(&self, index: usize) -> &Tensor {
        &self.slots[index].value
    }

    pub fn name_at(&self, index: usize) -> &str {
        self.slots.get_index(index).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn steps(&self, name: &str) -> Option<u64> {
        self.slots.get(name).map(|s| s.steps)
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.slots.get(name).map(|s| (&s.first_moment, &s.second_moment))
    }
}

/// Gradients aligned index-by-index with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self::new(
            (0..store.len())
                .map(|i| Tensor::zeros(store.value_at(i).shape()))
                .collect(),
        )
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn by_name<'a>(&'a self, store: &ParameterStore, name: &str) -> Option<&'a Tensor> {
        store.index_of(name).map(|i| &self.tensors[i])
    }

    /// Elementwise accumulation; shapes must already agree.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::shape(
                "grads",
                format!("{} vs {} tensors", self.tensors.len(), other.tensors.len()),
            ));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.same_shape(b, "grads")?;
            a.add_assign(b);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParameterStore, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
    if grads.tensors.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradients for {} parameters", grads.tensors.len(), store.len()),
        ));
    }
    for ((name, slot), g) in store.slots.iter().zip(&grads.tensors) {
        if slot.value.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{name}` is {:?}, gradient is {:?}", slot.value.shape(), g.shape()),
            ));
        }
    }
    for (slot, g) in store.slots.values_mut().zip(&grads.tensors) {
        slot.steps += 1;
        let t = slot.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = slot.first_moment.data_mut();
        let v = slot.second_moment.data_mut();
        let p = slot.value.data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
