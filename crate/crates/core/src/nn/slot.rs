use serde::{Deserialize, Serialize};

use crate::adapters::{Adapter, AdapterCheckpoint, ParamCount};
use crate::error::{Error, Result};
use crate::mat::Matrix;

use super::Gradients;

#[derive(Clone, Debug, PartialEq)]
pub enum SlotSource {
    Dense { weight: Matrix, trainable: bool },
    Adapted(Adapter),
}

/// A bias-free linear map `y = x·Wᵀ` whose weight is either a dense matrix
/// or the effective weight of an adapter. The effective matrix is cached and
/// must be refreshed after parameter updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSlot {
    source: SlotSource,
    effective: Matrix,
}

impl LinearSlot {
    pub fn dense(weight: Matrix, trainable: bool) -> Self {
        let effective = weight.clone();
        LinearSlot { source: SlotSource::Dense { weight, trainable }, effective }
    }

    pub fn adapted(adapter: Adapter) -> Self {
        let effective = adapter.effective_weight();
        LinearSlot { source: SlotSource::Adapted(adapter), effective }
    }

    pub fn source(&self) -> &SlotSource {
        &self.source
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        match &self.source {
            SlotSource::Adapted(a) => Some(a),
            SlotSource::Dense { .. } => None,
        }
    }

    /// The matrix the forward pass uses.
    pub fn weight(&self) -> &Matrix {
        &self.effective
    }

    /// `(out, in)`.
    pub fn shape(&self) -> (usize, usize) {
        self.effective.shape()
    }

    pub fn refresh(&mut self) {
        if let SlotSource::Adapted(a) = &self.source {
            self.effective = a.effective_weight();
        } else if let SlotSource::Dense { weight, .. } = &self.source {
            self.effective = weight.clone();
        }
    }

    pub fn set_trainable(&mut self, flag: bool) {
        if let SlotSource::Dense { trainable, .. } = &mut self.source {
            *trainable = flag;
        }
    }

    pub fn has_trainables(&self) -> bool {
        match &self.source {
            SlotSource::Dense { trainable, .. } => *trainable,
            SlotSource::Adapted(a) => a.kind().has_deltas(),
        }
    }

    /// Replaces an adapter by its merged dense matrix (frozen).
    pub fn merged(&self) -> LinearSlot {
        match &self.source {
            SlotSource::Adapted(a) => LinearSlot::dense(a.merge(), false),
            SlotSource::Dense { .. } => self.clone(),
        }
    }

    pub fn param_count(&self) -> ParamCount {
        match &self.source {
            SlotSource::Dense { weight, trainable } => {
                let n = weight.data().len();
                if *trainable {
                    ParamCount { trainable: n, frozen: 0 }
                } else {
                    ParamCount { trainable: 0, frozen: n }
                }
            }
            SlotSource::Adapted(a) => a.param_count(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.matmul_t(&self.effective)
    }

    /// Returns `∂L/∂x` and records parameter gradients under `prefix.<name>`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, prefix: &str, grads: &mut Gradients) -> Result<Matrix> {
        if dy.cols() != self.effective.rows() || x.cols() != self.effective.cols() || x.rows() != dy.rows() {
            return Err(Error::Shape(format!(
                "{prefix}: stale cache, input {}x{} / output grad {}x{} against weight {}x{}",
                x.rows(),
                x.cols(),
                dy.rows(),
                dy.cols(),
                self.effective.rows(),
                self.effective.cols()
            )));
        }
        if self.has_trainables() {
            let g = dy.t_matmul(x);
            match &self.source {
                SlotSource::Dense { .. } => grads.accumulate(&format!("{prefix}.weight"), 1.0, &g),
                SlotSource::Adapted(a) => {
                    for (name, pg) in a.backward(&g)? {
                        grads.accumulate(&format!("{prefix}.{name}"), 1.0, &pg);
                    }
                }
            }
        }
        Ok(dy.matmul(&self.effective))
    }

    pub fn params(&self) -> Vec<(String, &Matrix)> {
        match &self.source {
            SlotSource::Dense { weight, trainable: true } => vec![("weight".to_string(), weight)],
            SlotSource::Dense { .. } => Vec::new(),
            SlotSource::Adapted(a) => a.trainables().into_iter().map(|(n, m)| (n.to_string(), m)).collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        match &mut self.source {
            SlotSource::Dense { weight, trainable: true } => vec![("weight".to_string(), weight)],
            SlotSource::Dense { .. } => Vec::new(),
            SlotSource::Adapted(a) => a.trainables_mut().into_iter().map(|(n, m)| (n.to_string(), m)).collect(),
        }
    }

    pub fn to_checkpoint(&self) -> SlotCheckpoint {
        match &self.source {
            SlotSource::Dense { weight, trainable } => SlotCheckpoint::Dense { weight: weight.clone(), trainable: *trainable },
            SlotSource::Adapted(a) => SlotCheckpoint::Adapter(a.to_checkpoint()),
        }
    }

    pub fn from_checkpoint(ck: &SlotCheckpoint) -> Result<LinearSlot> {
        Ok(match ck {
            SlotCheckpoint::Dense { weight, trainable } => LinearSlot::dense(weight.clone(), *trainable),
            SlotCheckpoint::Adapter(a) => LinearSlot::adapted(Adapter::from_checkpoint(a)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotCheckpoint {
    Dense { weight: Matrix, trainable: bool },
    Adapter(AdapterCheckpoint),
}
