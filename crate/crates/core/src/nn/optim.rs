use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mat::Matrix;

use super::Gradients;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates for `name`, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&Matrix, &Matrix)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Applies one update to every parameter. Each parameter needs a gradient
    /// of the same shape.
    pub fn step(&mut self, params: Vec<(String, &mut Matrix)>, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, p) in &params {
            match grads.get(name) {
                None => return Err(Error::Shape(format!("no gradient for parameter {name}"))),
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::Shape(format!(
                        "gradient for {name} is {}x{}, parameter is {}x{}",
                        g.rows(),
                        g.cols(),
                        p.rows(),
                        p.cols()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let g = grads.get(&name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Matrix::zeros(g.rows(), g.cols()), Matrix::zeros(g.rows(), g.cols())));
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let mhat = *mi / c1;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let vhat = *vi / c2;
                pd[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
