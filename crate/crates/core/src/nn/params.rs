use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

/// Named, ordered parameter tensors. Two stores built by the same
/// constructor share layout, which is what target networks rely on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), tensor });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a `rows x cols` matrix drawn from `U(-sqrt(1/fan_in), sqrt(1/fan_in))`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("sized above"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    /// Copies every tensor whose name and shape also exist in `source`.
    /// Returns how many tensors were copied.
    pub fn load_matching(&mut self, source: &ParamStore) -> usize {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(src) = source.entries.iter().find(|s| s.name == e.name && s.tensor.shape() == e.tensor.shape()) {
                e.tensor = src.tensor.clone();
                copied += 1;
            }
        }
        copied
    }

    /// `self := tau * source + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, source: &ParamStore, tau: f64) -> Result<()> {
        if !self.same_layout(source) {
            return Err(Error::shape("soft_update", "parameter layouts differ"));
        }
        for (t, s) in self.entries.iter_mut().zip(&source.entries) {
            for (tv, &sv) in t.tensor.data_mut().iter_mut().zip(s.tensor.data()) {
                *tv = tau * sv + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamStore`]. Parameters a computation never
/// touched have no entry; [`Gradients::get`] reports them as zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn touched(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn get(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.touched(id).cloned().unwrap_or_else(|| Tensor::zeros_like(store.get(id)))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.grads[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|t| t.scale_in_place(s));
    }

    /// Drops gradients for parameters where `keep` is false.
    pub fn retain(&mut self, keep: impl Fn(ParamId) -> bool) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            if !keep(ParamId(i)) {
                *g = None;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().flatten().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::filled(2, 2, v));
        s.add("b", Tensor::filled(1, 3, v));
        s
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let online = store(1.0);
        for (tau, expected) in [(1.0, 1.0), (0.0, 0.0), (0.005, 0.005)] {
            let mut target = store(0.0);
            target.soft_update_from(&online, tau).unwrap();
            assert!(target.entries().iter().all(|e| e.tensor.data().iter().all(|&v| v == expected)));
        }
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(3, 3));
        assert!(other.soft_update_from(&online, 0.5).is_err());
    }

    #[test]
    fn untouched_gradients_read_as_zero() {
        let s = store(1.0);
        let mut g = Gradients::new(s.len());
        g.accumulate(ParamId(0), &Tensor::filled(2, 2, 1.0));
        g.accumulate(ParamId(0), &Tensor::filled(2, 2, 1.0));
        assert_eq!(g.get(ParamId(0), &s).data(), &[2.0; 4]);
        assert_eq!(g.get(ParamId(1), &s).data(), &[0.0; 3]);
        assert!(g.touched(ParamId(1)).is_none());
    }
}
