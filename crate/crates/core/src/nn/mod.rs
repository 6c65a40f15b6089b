//! Tiny transformer encoder with adapter-bearing attention projections,
//! AAM-Softmax loss, reverse-mode gradients and Adam.

mod loss;
mod model;
mod optim;
mod slot;

use std::collections::BTreeMap;

use crate::mat::Matrix;

pub use loss::{aam_loss, AamConfig, AamOutput};
pub use model::{
    attention_forward, AttentionCache, EncoderLayer, ForwardCache, LayerCheckpoint, Model, ModelCheckpoint,
    ModelDims, Position,
};
pub use optim::Adam;
pub use slot::{LinearSlot, SlotCheckpoint, SlotSource};

/// Gradients keyed by parameter path, e.g. `layers.0.wq.B_U`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Matrix>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `s · grad` into the entry `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, s: f64, grad: &Matrix) {
        match self.0.get_mut(name) {
            Some(g) => g.axpy(s, grad),
            None => {
                self.0.insert(name.to_string(), grad.scale(s));
            }
        }
    }

    pub fn insert(&mut self, name: String, grad: Matrix) {
        self.0.insert(name, grad);
    }

    /// Folds every entry of `other`, scaled by `s`, into `self`.
    pub fn merge_scaled(&mut self, s: f64, other: &Gradients) {
        for (k, g) in &other.0 {
            self.accumulate(k, s, g);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |m, g| m.max(g.max_abs()))
    }
}
