mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use spectralft::adapters::{init_adapter, init_adapter_with_cache, Adapter, AdapterConfig, AdapterKind, SvdCache};
use spectralft::mat::{reconstruct, svd, truncate_svd};
use spectralft::nn::{Adam, Gradients};
use spectralft::Matrix;

/// Adam on the smooth weight objective for `steps` steps.
fn train_adapter(a: &mut Adapter, g: &Matrix, steps: usize) {
    let mut adam = Adam::new();
    for _ in 0..steps {
        let w = a.effective_weight();
        let mut grads = Gradients::new();
        for (name, gr) in a.backward(&weight_objective_grad(&w, g)).unwrap() {
            grads.insert(name.to_string(), gr);
        }
        let params = a.trainables_mut().into_iter().map(|(n, m)| (n.to_string(), m)).collect();
        adam.step(params, &grads, 1e-2).unwrap();
    }
}

/// Everything an adapter must never update.
fn frozen_snapshot(a: &Adapter) -> Vec<Matrix> {
    match a {
        Adapter::Lora(l) => vec![l.base().clone()],
        Adapter::Dora(d) => vec![d.base().clone()],
        Adapter::Spectral(s) => {
            let t = s.base();
            vec![t.u_p.clone(), Matrix::row_vector(&t.sigma_p), t.v_p.clone()]
        }
        Adapter::SpectralPlusMinor { spectral, minor } => {
            let t = spectral.base();
            vec![t.u_p.clone(), Matrix::row_vector(&t.sigma_p), t.v_p.clone(), minor.clone()]
        }
        Adapter::TruncatedFrozen(t) => vec![t.u_p.clone(), Matrix::row_vector(&t.sigma_p), t.v_p.clone()],
        Adapter::FullFrozen(w) => vec![w.clone()],
    }
}

#[test]
fn merged_weights_match_live_adapters_after_training() {
    let mut r = rng(11);
    for kind in AdapterKind::ALL {
        for case in 0..5 {
            let mut a = random_adapter(kind, &mut r);
            let before = frozen_snapshot(&a);
            let (m, n) = a.shape();
            let g = randn(m, n, &mut r);
            train_adapter(&mut a, &g, 120);
            assert_eq!(frozen_snapshot(&a), before, "{kind} case {case}: frozen factors changed");
            let merged = a.merge();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
                let d = max_abs_diff(&merged.matvec(&x), &live_matvec(&a, &x));
                assert!(d < 1e-12, "{kind} case {case}: merged vs live {d:e}");
            }
        }
    }
}

#[test]
fn merge_of_frozen_and_initial_adapters() {
    let mut r = rng(12);
    let w = randn(7, 5, &mut r);
    let full = init_adapter(&w, &AdapterConfig { kind: AdapterKind::FullFrozen, rank: 0, k: 0, alpha: 0.0, seed: 0 }).unwrap();
    assert_eq!(full.merge(), w);
    let spec = init_adapter(&w, &AdapterConfig { kind: AdapterKind::Spectral, rank: 1, k: 3, alpha: 1.0, seed: 0 }).unwrap();
    let Adapter::Spectral(s) = &spec else { unreachable!() };
    assert_eq!(spec.merge(), reconstruct(s.base()));
}

#[test]
fn init_identity_for_every_variant() {
    let mut r = rng(13);
    for _ in 0..20 {
        let (m, n) = (r.random_range(2..=12), r.random_range(2..=12));
        let w = randn(m, n, &mut r);
        let min = m.min(n);
        let k = r.random_range(2..=min);
        let cfg = |kind| AdapterConfig { kind, rank: 1, k, alpha: 1.6, seed: 3 };
        let lora = init_adapter(&w, &cfg(AdapterKind::Lora)).unwrap();
        assert_eq!(lora.effective_weight(), w);

        let dora = init_adapter(&w, &cfg(AdapterKind::Dora)).unwrap();
        assert!(rel_err(&dora.effective_weight(), &w) < 1e-14);

        let f = svd(&w).unwrap();
        let wp = reconstruct(&truncate_svd(&f, k).unwrap());
        let spec = init_adapter(&w, &cfg(AdapterKind::Spectral)).unwrap();
        assert_eq!(spec.effective_weight(), wp);
        let trunc = init_adapter(&w, &cfg(AdapterKind::TruncatedFrozen)).unwrap();
        assert_eq!(spec.effective_weight(), trunc.effective_weight());

        let plus = init_adapter(&w, &cfg(AdapterKind::SpectralPlusMinor)).unwrap();
        let e = plus.effective_weight().sub(&w).frobenius_norm() / w.frobenius_norm();
        assert!(e < 1e-10, "plus-minor {e:e}");

        let lossless = init_adapter(&w, &AdapterConfig { k: min, ..cfg(AdapterKind::Spectral) }).unwrap();
        let e = lossless.effective_weight().sub(&w).frobenius_norm() / w.frobenius_norm();
        assert!(e < 1e-10, "lossless spectral {e:e}");
    }
}

#[test]
fn lora_all_ones_example() {
    let w = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
    let mut a = init_adapter(&w, &AdapterConfig { kind: AdapterKind::Lora, rank: 1, k: 0, alpha: 1.0, seed: 0 }).unwrap();
    for (_, m) in a.trainables_mut() {
        *m = Matrix::filled(m.rows(), m.cols(), 1.0);
    }
    assert_eq!(a.effective_weight(), w.add(&Matrix::filled(2, 3, 1.0)));
}

#[test]
fn zero_upstream_gradient_and_lora_init_gradients() {
    let mut r = rng(14);
    for kind in [AdapterKind::Lora, AdapterKind::Dora, AdapterKind::Spectral, AdapterKind::SpectralPlusMinor] {
        let a = random_adapter(kind, &mut r);
        let (m, n) = a.shape();
        for (_, gr) in a.backward(&Matrix::zeros(m, n)).unwrap() {
            assert_eq!(gr.max_abs(), 0.0);
        }
    }
    let w = randn(6, 5, &mut r);
    let a = init_adapter(&w, &AdapterConfig { kind: AdapterKind::Lora, rank: 2, k: 0, alpha: 2.0, seed: 1 }).unwrap();
    let grads = a.backward(&randn(6, 5, &mut r)).unwrap();
    assert!(grads[0].1.max_abs() > 0.0, "dL/dB vanished");
    assert_eq!(grads[1].1.max_abs(), 0.0, "dL/dA should vanish at B = 0");
}

#[test]
fn same_seed_same_initialization() {
    let mut r = rng(15);
    let w = randn(8, 6, &mut r);
    for kind in AdapterKind::ALL {
        let cfg = AdapterConfig { kind, rank: 2, k: 4, alpha: 1.0, seed: 99 };
        assert_eq!(init_adapter(&w, &cfg).unwrap(), init_adapter(&w, &cfg).unwrap());
    }
}

fn counts(kind: AdapterKind, m: usize, n: usize, r: usize, k: usize) -> (usize, usize) {
    match kind {
        AdapterKind::Lora => (r * (m + n), m * n),
        AdapterKind::Dora => (r * (m + n) + n, m * n),
        AdapterKind::Spectral => (r * (m + k) + r * (n + k), k * (m + n + 1)),
        AdapterKind::SpectralPlusMinor => (r * (m + k) + r * (n + k), k * (m + n + 1) + m * n),
        AdapterKind::TruncatedFrozen => (0, k * (m + n + 1)),
        AdapterKind::FullFrozen => (0, m * n),
    }
}

#[test]
fn parameter_counts_follow_formulas() {
    let mut g = rng(16);
    let cache = SvdCache::new();
    for _ in 0..30 {
        let (m, n) = (g.random_range(2..=20), g.random_range(2..=20));
        let w = randn(m, n, &mut g);
        let k = g.random_range(2..=m.min(n));
        let r = g.random_range(1..k);
        for kind in AdapterKind::ALL {
            let a = init_adapter_with_cache(&w, &AdapterConfig { kind, rank: r, k, alpha: 1.0, seed: 0 }, &cache).unwrap();
            let pc = a.param_count();
            assert_eq!((pc.trainable, pc.frozen), counts(kind, m, n, r, k), "{kind} {m}x{n} r={r} k={k}");
            let actual: usize = a.trainables().iter().map(|(_, m)| m.data().len()).sum();
            assert_eq!(actual, pc.trainable);
        }
    }
}

#[test]
fn reference_parameter_counts() {
    let mut g = rng(17);
    let w = randn(64, 64, &mut g);
    let lora = init_adapter(&w, &AdapterConfig { kind: AdapterKind::Lora, rank: 16, k: 0, alpha: 1.6, seed: 0 }).unwrap();
    assert_eq!(lora.param_count().trainable, 2048);
    let spec = init_adapter(&w, &AdapterConfig { kind: AdapterKind::Spectral, rank: 16, k: 32, alpha: 1.6, seed: 0 }).unwrap();
    assert_eq!(spec.param_count().trainable, 3072);
    assert_eq!(counts(AdapterKind::Spectral, 1024, 1024, 16, 256).0, 40960);
}

#[test]
fn svd_cache_reuses_factors() {
    let mut g = rng(18);
    let cache = SvdCache::new();
    let w = randn(9, 7, &mut g);
    let a = cache.get_or_compute(&w).unwrap();
    let b = cache.get_or_compute(&w.clone()).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    assert_eq!(cache.computed(), 1);
    cache.get_or_compute(&w.scale(2.0)).unwrap();
    assert_eq!(cache.computed(), 2);
}

#[test]
fn checkpoints_round_trip_after_training() {
    let mut r = rng(19);
    for kind in AdapterKind::ALL {
        let mut a = random_adapter(kind, &mut r);
        let (m, n) = a.shape();
        train_adapter(&mut a, &randn(m, n, &mut r), 5);
        let json = serde_json::to_string(&a.to_checkpoint()).unwrap();
        let back = Adapter::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.effective_weight(), a.effective_weight(), "{kind}");
        assert_eq!(back.param_count(), a.param_count());
    }
}

fn with_doubled_alpha(a: &Adapter) -> Adapter {
    let mut ck = a.to_checkpoint();
    ck.alpha *= 2.0;
    for name in ["B", "B_U", "B_V"] {
        if let Some(m) = ck.matrices.get_mut(name) {
            *m = m.scale(0.5);
        }
    }
    Adapter::from_checkpoint(&ck).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_equivalence(seed in any::<u64>(), which in 0usize..4) {
        let kind = [AdapterKind::Lora, AdapterKind::Dora, AdapterKind::Spectral, AdapterKind::SpectralPlusMinor][which];
        let a = random_adapter(kind, &mut rng(seed));
        let b = with_doubled_alpha(&a);
        let d = a.effective_weight().sub(&b.effective_weight()).max_abs();
        prop_assert!(d <= 1e-12, "{} {:e}", kind, d);
    }

    #[test]
    fn effective_weight_is_finite_and_shaped(seed in any::<u64>(), which in 0usize..6) {
        let a = random_adapter(AdapterKind::ALL[which], &mut rng(seed));
        let w = a.effective_weight();
        prop_assert_eq!(w.shape(), a.shape());
        prop_assert!(w.is_finite());
    }
}

#[test]
fn spectral_hand_expansion() {
    // U_p = I, σ = (2, 1), V_p = I, ΔU = [[0, 0], [0.1, 0]]
    let u = Matrix::identity(2);
    let delta_u = Matrix::from_rows(&[&[0.0, 0.0], &[0.1, 0.0]]);
    let expected = Matrix::from_rows(&[&[2.0, 0.0], &[0.2, 1.0]]);
    let w = spectralft::mat::spectral_product(&u.add(&delta_u), &[2.0, 1.0], &Matrix::identity(2));
    assert!(w.sub(&expected).max_abs() < 1e-15);
    // the same through a live adapter whose ΔU = s·B_U·A_U
    let base = Matrix::diag(&[2.0, 1.0]);
    let mut a = init_adapter(&base, &AdapterConfig { kind: AdapterKind::Spectral, rank: 1, k: 2, alpha: 1.0, seed: 0 }).unwrap();
    {
        let mut t = a.trainables_mut();
        *t[0].1 = Matrix::from_rows(&[&[0.0], &[0.1]]);
        *t[1].1 = Matrix::from_rows(&[&[1.0, 0.0]]);
        *t[2].1 = Matrix::zeros(2, 1);
    }
    assert!(a.effective_weight().sub(&expected).max_abs() < 1e-15);
}
