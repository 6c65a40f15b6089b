//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectralft::adapters::{init_adapter, Adapter, AdapterConfig, AdapterKind};
use spectralft::eval::{DcfParams, Trial};
use spectralft::nn::{AamConfig, Gradients, Model, ModelDims, Position};
use spectralft::Matrix;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::random_normal(rows, cols, rng)
}

/// Below this norm, gradients are compared absolutely: central differences
/// of a nearly flat loss are dominated by rounding, not by the derivative.
pub const REL_FLOOR: f64 = 1e-3;

/// ‖a − b‖ / max(‖a‖, ‖b‖, REL_FLOOR).
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.frobenius_norm().max(b.frobenius_norm()).max(REL_FLOOR);
    a.sub(b).frobenius_norm() / scale
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smooth test objective on an effective weight: `Σ G⊙W + ½‖W‖²`.
pub fn weight_objective(w: &Matrix, g: &Matrix) -> f64 {
    w.hadamard(g).data().iter().sum::<f64>() + 0.5 * w.frobenius_norm().powi(2)
}

pub fn weight_objective_grad(w: &Matrix, g: &Matrix) -> Matrix {
    g.add(w)
}

/// Central differences of `f` over every entry of the `idx`-th trainable.
pub fn adapter_fd(adapter: &Adapter, idx: usize, f: impl Fn(&Adapter) -> f64) -> Matrix {
    let (rows, cols) = adapter.trainables()[idx].1.shape();
    Matrix::from_fn(rows, cols, |i, j| {
        let mut plus = adapter.clone();
        plus.trainables_mut()[idx].1[(i, j)] += FD_STEP;
        let mut minus = adapter.clone();
        minus.trainables_mut()[idx].1[(i, j)] -= FD_STEP;
        (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
    })
}

/// Moves every trainable of `adapter` away from its initialization.
pub fn perturb_adapter(adapter: &mut Adapter, rng: &mut ChaCha8Rng, amount: f64) {
    for (_, m) in adapter.trainables_mut() {
        let noise = Matrix::random_normal(m.rows(), m.cols(), rng);
        m.axpy(amount, &noise);
    }
}

pub fn random_adapter(kind: AdapterKind, rng: &mut ChaCha8Rng) -> Adapter {
    let (m, n) = if kind.uses_svd() {
        (rng.random_range(2..=10), rng.random_range(2..=10))
    } else {
        (rng.random_range(1..=10), rng.random_range(1..=10))
    };
    let min = m.min(n);
    let (rank, k) = if kind.uses_svd() {
        let k = rng.random_range(2..=min);
        (rng.random_range(1..k), k)
    } else {
        (rng.random_range(1..=min), 0)
    };
    let w = randn(m, n, rng);
    let cfg = AdapterConfig { kind, rank, k, alpha: rng.random_range(0.5..4.0), seed: rng.random() };
    let mut a = init_adapter(&w, &cfg).unwrap();
    perturb_adapter(&mut a, rng, 0.5);
    a
}

/// Central differences of the batch loss over every trainable model parameter.
pub fn model_fd(model: &Model, batch: &[(&Matrix, usize)], aam: &AamConfig) -> Gradients {
    let mut out = Gradients::new();
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    for (p, name) in names.iter().enumerate() {
        let (rows, cols) = model.params()[p].1.shape();
        let g = Matrix::from_fn(rows, cols, |i, j| {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[p].1[(i, j)] += delta;
                m.refresh();
                m.batch_loss(batch, aam).unwrap().0
            };
            (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
        });
        out.insert(name.clone(), g);
    }
    out
}

pub fn small_dims(heads: usize) -> ModelDims {
    ModelDims { d_in: 6, d: 8, h: 12, layers: 2, heads, classes: 5 }
}

/// A frozen random backbone with the given adapter attached at `positions`
/// in every layer and deltas moved off zero.
pub fn adapted_model(kind: AdapterKind, positions: &[Position], heads: usize, seed: u64) -> Model {
    let mut model = Model::random(small_dims(heads), seed).unwrap();
    model.set_backbone_trainable(false);
    let mut r = rng(seed ^ 0x5eed);
    for layer in 0..model.layers.len() {
        for (i, &pos) in positions.iter().enumerate() {
            let cfg = AdapterConfig { kind, rank: 2, k: 4, alpha: 2.0, seed: seed + (layer * 3 + i) as u64 };
            model.attach_adapter(layer, pos, &cfg).unwrap();
        }
    }
    for (_, m) in model.params_mut() {
        let noise = Matrix::random_normal(m.rows(), m.cols(), &mut r);
        m.axpy(0.3, &noise);
    }
    model.refresh();
    model
}

/// W_eff·x evaluated through the factors, never forming W_eff.
pub fn live_matvec(a: &Adapter, x: &[f64]) -> Vec<f64> {
    let lowrank = |b: &Matrix, am: &Matrix, s: f64, x: &[f64]| -> Vec<f64> {
        b.matvec(&am.matvec(x)).into_iter().map(|v| v * s).collect()
    };
    let add = |p: Vec<f64>, q: Vec<f64>| -> Vec<f64> { p.iter().zip(&q).map(|(a, b)| a + b).collect() };
    match a {
        Adapter::Lora(l) => add(l.base().matvec(x), lowrank(&l.delta.b, &l.delta.a, l.delta.scale(), x)),
        Adapter::Dora(d) => {
            let dir = d.base().add(&d.delta.product());
            let norms = dir.column_norms();
            let xs: Vec<f64> = (0..x.len()).map(|j| x[j] * d.magnitude[(0, j)] / norms[j]).collect();
            add(d.base().matvec(&xs), lowrank(&d.delta.b, &d.delta.a, d.delta.scale(), &xs))
        }
        Adapter::Spectral(s) | Adapter::SpectralPlusMinor { spectral: s, .. } => {
            let t = s.base();
            // (V_p + s·B_V·A_V)ᵀ x
            let vtx = add(t.v_p.transpose().matvec(x), {
                let bv_t_x = s.delta_v.b.transpose().matvec(x);
                s.delta_v.a.transpose().matvec(&bv_t_x).into_iter().map(|v| v * s.delta_v.scale()).collect()
            });
            let scaled: Vec<f64> = vtx.iter().zip(&t.sigma_p).map(|(v, sg)| v * sg).collect();
            let y = add(t.u_p.matvec(&scaled), lowrank(&s.delta_u.b, &s.delta_u.a, s.delta_u.scale(), &scaled));
            match a {
                Adapter::SpectralPlusMinor { minor, .. } => add(y, minor.matvec(x)),
                _ => y,
            }
        }
        Adapter::TruncatedFrozen(t) => {
            let vtx = t.v_p.transpose().matvec(x);
            t.u_p.matvec(&vtx.iter().zip(&t.sigma_p).map(|(v, s)| v * s).collect::<Vec<_>>())
        }
        Adapter::FullFrozen(w) => w.matvec(x),
    }
}

// ---- metric oracles ----

/// Candidate thresholds: each distinct score and one just above the maximum.
fn candidate_thresholds(trials: &[Trial]) -> Vec<f64> {
    let mut t: Vec<f64> = trials.iter().map(|t| t.score).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let top = *t.last().unwrap();
    t.push(top.next_up());
    t
}

/// Error rates at threshold `theta` by direct counting.
pub fn rates_at(trials: &[Trial], theta: f64) -> (f64, f64) {
    let nt = trials.iter().filter(|t| t.is_target).count();
    let nn = trials.len() - nt;
    let misses = trials.iter().filter(|t| t.is_target && t.score < theta).count();
    let false_alarms = trials.iter().filter(|t| !t.is_target && t.score >= theta).count();
    (misses as f64 / nt as f64, false_alarms as f64 / nn as f64)
}

/// Exhaustive EER: scan every candidate threshold, interpolate at the first
/// sign change of FRR − FAR.
pub fn oracle_eer(trials: &[Trial]) -> f64 {
    let thetas = candidate_thresholds(trials);
    let rates: Vec<(f64, f64)> = thetas.iter().map(|&th| rates_at(trials, th)).collect();
    for i in 0..rates.len() {
        let (frr, far) = rates[i];
        if frr == far {
            return frr;
        }
        if frr > far {
            let (frr0, far0) = rates[i - 1];
            let d0 = frr0 - far0;
            let d1 = frr - far;
            let w = -d0 / (d1 - d0);
            return frr0 + w * (frr - frr0);
        }
    }
    panic!("no crossing");
}

pub fn oracle_min_dcf(trials: &[Trial], p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    candidate_thresholds(trials)
        .into_iter()
        .map(|th| {
            let (miss, fa) = rates_at(trials, th);
            (p.c_miss * miss * p.p_target + p.c_fa * fa * (1.0 - p.p_target)) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// Trial set with both classes present; scores drawn from a small grid so ties occur.
pub fn random_trials(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Trial> {
    let n = rng.random_range(2..=max_len);
    let levels = rng.random_range(2..=n.max(2) * 2);
    let mut trials: Vec<Trial> = (0..n)
        .map(|_| {
            let is_target = rng.random_bool(0.4);
            let shift = if is_target { levels as f64 * 0.2 } else { 0.0 };
            let raw = rng.random_range(0..levels) as f64 + shift;
            Trial { score: raw / levels as f64, is_target }
        })
        .collect();
    trials[0].is_target = true;
    trials[1].is_target = false;
    trials
}

// ---- straight-line encoder oracle ----

fn mm_t(x: &[Vec<f64>], w: &Matrix) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| (0..w.rows()).map(|o| (0..w.cols()).map(|i| row[i] * w[(o, i)]).sum()).collect())
        .collect()
}

/// Single-pass re-implementation of attention with explicit loops.
pub fn oracle_attention(x: &[Vec<f64>], wq: &Matrix, wk: &Matrix, wv: &Matrix, wo: &Matrix, heads: usize) -> Vec<Vec<f64>> {
    let t = x.len();
    let d = wq.rows();
    let dh = d / heads;
    let (q, k, v) = (mm_t(x, wq), mm_t(x, wk), mm_t(x, wv));
    let mut z = vec![vec![0.0; d]; t];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in cols.clone() {
                z[i][c] = (0..t).map(|j| e[j] / s * v[j][c]).sum();
            }
        }
    }
    let proj = mm_t(&z, wo);
    (0..t).map(|i| (0..d).map(|c| proj[i][c] + x[i][c]).collect()).collect()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Whole-encoder oracle: projection, attention + FFN blocks, mean pooling.
pub fn oracle_embed(model: &Model, frames: &Matrix) -> Vec<f64> {
    let mut x = mm_t(&rows_of(frames), model.input_proj.weight());
    for layer in &model.layers {
        let x1 = oracle_attention(&x, layer.wq.weight(), layer.wk.weight(), layer.wv.weight(), layer.wo.weight(), layer.heads);
        let hidden: Vec<Vec<f64>> =
            mm_t(&x1, layer.ffn1.weight()).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        let f = mm_t(&hidden, layer.ffn2.weight());
        x = x1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
    }
    let t = x.len() as f64;
    (0..x[0].len()).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / t).collect()
}
