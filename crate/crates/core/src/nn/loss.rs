use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, norm, Matrix};

/// Additive angular margin softmax: target logit `scale·cos(θ_y + margin)`,
/// other logits `scale·cos θ_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AamConfig {
    /// Radians.
    pub margin: f64,
    pub scale: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        AamConfig { margin: 0.2, scale: 30.0 }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!("AAM margin {} outside [0, pi/2)", self.margin)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("AAM scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AamOutput {
    pub loss: f64,
    pub grad_embedding: Vec<f64>,
    /// Same shape as the classifier (C×d).
    pub grad_classifier: Matrix,
}

/// Cross-entropy over AAM logits, with gradients through both L2
/// normalizations and the angular margin.
pub fn aam_loss(embedding: &[f64], label: usize, classifier: &Matrix, cfg: &AamConfig) -> Result<AamOutput> {
    let (c, d) = classifier.shape();
    if embedding.len() != d {
        return Err(Error::Shape(format!("embedding has {} dims, classifier is {c}x{d}", embedding.len())));
    }
    if label >= c {
        return Err(Error::Range(format!("label {label} with {c} classes")));
    }
    let e_norm = norm(embedding);
    if e_norm <= 0.0 || !e_norm.is_finite() {
        return Err(Error::Numeric(format!("embedding norm is {e_norm}")));
    }
    let e_hat: Vec<f64> = embedding.iter().map(|x| x / e_norm).collect();
    let mut w_hat = Matrix::zeros(c, d);
    let mut w_norms = Vec::with_capacity(c);
    for j in 0..c {
        let nj = norm(classifier.row(j));
        if nj <= 0.0 || nj.is_nan() {
            return Err(Error::Numeric(format!("classifier row {j} has zero norm")));
        }
        w_norms.push(nj);
        for (o, x) in w_hat.row_mut(j).iter_mut().zip(classifier.row(j)) {
            *o = x / nj;
        }
    }
    let cos: Vec<f64> = (0..c).map(|j| dot(&e_hat, w_hat.row(j)).clamp(-1.0, 1.0)).collect();

    let (sin_m, cos_m) = cfg.margin.sin_cos();
    let cy = cos[label];
    let sin_y = (1.0 - cy * cy).max(0.0).sqrt();
    // cos(θ + m) and its derivative with respect to cos θ
    let target = cy * cos_m - sin_y * sin_m;
    let dtarget = if cfg.margin == 0.0 {
        1.0
    } else {
        cos_m + sin_m * cy / sin_y.max(1e-12)
    };

    let logits: Vec<f64> =
        (0..c).map(|j| cfg.scale * if j == label { target } else { cos[j] }).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];

    // ∂L/∂cos_j
    let dcos: Vec<f64> = (0..c)
        .map(|j| {
            let p = exps[j] / sum;
            let dlogit = if j == label { p - 1.0 } else { p };
            cfg.scale * dlogit * if j == label { dtarget } else { 1.0 }
        })
        .collect();

    let mut de_hat = vec![0.0; d];
    let mut grad_classifier = Matrix::zeros(c, d);
    for j in 0..c {
        for (g, w) in de_hat.iter_mut().zip(w_hat.row(j)) {
            *g += dcos[j] * w;
        }
        // ∂L/∂ŵ_j = dcos_j · ê, then back through ŵ_j = w_j / ‖w_j‖
        let proj = dcos[j] * dot(&e_hat, w_hat.row(j));
        let row = grad_classifier.row_mut(j);
        for t in 0..d {
            row[t] = (dcos[j] * e_hat[t] - proj * w_hat[(j, t)]) / w_norms[j];
        }
    }
    let proj = dot(&de_hat, &e_hat);
    let grad_embedding = de_hat.iter().zip(&e_hat).map(|(g, u)| (g - proj * u) / e_norm).collect();

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("AAM loss is {loss}")));
    }
    Ok(AamOutput { loss, grad_embedding, grad_classifier })
}
