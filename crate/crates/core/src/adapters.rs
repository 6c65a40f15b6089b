//! LoRA, DoRA and spectral adapters over a frozen weight matrix, plus the
//! frozen baselines used in subspace ablations.
//!
//! All adapters share the `(out, in)` weight convention of the encoder:
//! a weight `W ∈ R^{m×n}` maps an `n`-dimensional input to `m` outputs.
//!
//! * LoRA: `W0 + s·B·A`, `B ∈ R^{m×r}`, `A ∈ R^{r×n}`.
//! * DoRA: column `j` of `W0 + s·B·A`, rescaled to length `magnitude[j]`.
//! * Spectral: `(U_p + s·B_U·A_U)·diag(σ_p)·(V_p + s·B_V·A_V)ᵀ` where
//!   `U_p, σ_p, V_p` are the top-`k` singular triplets of the frozen weight.
//!
//! with `s = alpha / r`. `B`-type matrices start at zero and `A`-type
//! matrices are standard normal, so every adapter starts exactly at its
//! frozen base.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{self, spectral_product, Matrix, SvdFactors, TruncatedSvd};

/// DoRA columns shorter than this fall back to the first basis direction.
pub const DORA_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdapterKind {
    Lora,
    Dora,
    Spectral,
    SpectralPlusMinor,
    TruncatedFrozen,
    FullFrozen,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 6] = [
        AdapterKind::Lora,
        AdapterKind::Dora,
        AdapterKind::Spectral,
        AdapterKind::SpectralPlusMinor,
        AdapterKind::TruncatedFrozen,
        AdapterKind::FullFrozen,
    ];

    /// Whether the variant carries trainable low-rank deltas.
    pub fn has_deltas(self) -> bool {
        matches!(self, AdapterKind::Lora | AdapterKind::Dora | AdapterKind::Spectral | AdapterKind::SpectralPlusMinor)
    }

    /// Whether the variant is built from a truncated SVD and therefore uses `k`.
    pub fn uses_svd(self) -> bool {
        matches!(self, AdapterKind::Spectral | AdapterKind::SpectralPlusMinor | AdapterKind::TruncatedFrozen)
    }

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Lora => "Lora",
            AdapterKind::Dora => "Dora",
            AdapterKind::Spectral => "Spectral",
            AdapterKind::SpectralPlusMinor => "SpectralPlusMinor",
            AdapterKind::TruncatedFrozen => "TruncatedFrozen",
            AdapterKind::FullFrozen => "FullFrozen",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdapterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown adapter tag {s:?}")))
    }
}

/// `s·B·A` with `s = alpha / rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankDelta {
    pub b: Matrix,
    pub a: Matrix,
    pub rank: usize,
    pub alpha: f64,
}

impl LowRankDelta {
    /// `B = 0` (p×r), `A ~ N(0, 1)` (r×q).
    pub fn new(p: usize, q: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        LowRankDelta { b: Matrix::zeros(p, rank), a: Matrix::random_normal(rank, q, rng), rank, alpha }
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn product(&self) -> Matrix {
        self.b.matmul(&self.a).scale(self.scale())
    }

    /// Gradients of `L` with respect to `B` and `A` given `∂L/∂(s·B·A)`.
    fn backward(&self, grad: &Matrix) -> (Matrix, Matrix) {
        let s = self.scale();
        (grad.matmul_t(&self.a).scale(s), self.b.t_matmul(grad).scale(s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    w0: Matrix,
    pub delta: LowRankDelta,
}

impl LoraAdapter {
    pub fn base(&self) -> &Matrix {
        &self.w0
    }

    pub fn effective_weight(&self) -> Matrix {
        self.w0.add(&self.delta.product())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoraAdapter {
    w0: Matrix,
    pub delta: LowRankDelta,
    /// 1×n, one entry per column.
    pub magnitude: Matrix,
}

impl DoraAdapter {
    pub fn base(&self) -> &Matrix {
        &self.w0
    }

    fn direction(&self) -> Matrix {
        self.w0.add(&self.delta.product())
    }

    pub fn effective_weight(&self) -> Matrix {
        let d = self.direction();
        let norms = d.column_norms();
        let (m, n) = d.shape();
        let mut out = Matrix::zeros(m, n);
        for j in 0..n {
            let mag = self.magnitude[(0, j)];
            if norms[j] < DORA_NORM_FLOOR {
                log::warn!("DoRA column {j} has near-zero norm {:e}; using e1 as its direction", norms[j]);
                out[(0, j)] = mag;
                continue;
            }
            let f = mag / norms[j];
            for i in 0..m {
                out[(i, j)] = d[(i, j)] * f;
            }
        }
        out
    }

    fn backward(&self, g: &Matrix) -> Vec<(&'static str, Matrix)> {
        let d = self.direction();
        let norms = d.column_norms();
        let (m, n) = d.shape();
        let mut grad_d = Matrix::zeros(m, n);
        let mut grad_mag = Matrix::zeros(1, n);
        for j in 0..n {
            if norms[j] < DORA_NORM_FLOOR {
                // constant direction e1
                grad_mag[(0, j)] = g[(0, j)];
                continue;
            }
            let nj = norms[j];
            let mut proj = 0.0;
            for i in 0..m {
                proj += g[(i, j)] * d[(i, j)];
            }
            proj /= nj;
            grad_mag[(0, j)] = proj;
            let f = self.magnitude[(0, j)] / nj;
            for i in 0..m {
                let dir = d[(i, j)] / nj;
                grad_d[(i, j)] = f * (g[(i, j)] - proj * dir);
            }
        }
        let (gb, ga) = self.delta.backward(&grad_d);
        vec![("B", gb), ("A", ga), ("magnitude", grad_mag)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralAdapter {
    base: Arc<TruncatedSvd>,
    pub delta_u: LowRankDelta,
    pub delta_v: LowRankDelta,
}

impl SpectralAdapter {
    pub fn base(&self) -> &TruncatedSvd {
        &self.base
    }

    pub fn k(&self) -> usize {
        self.base.k
    }

    pub fn orig_shape(&self) -> (usize, usize) {
        self.base.orig_shape()
    }

    fn adapted_factors(&self) -> (Matrix, Matrix) {
        let u = self.base.u_p.add(&self.delta_u.product());
        let v = self.base.v_p.add(&self.delta_v.product());
        (u, v)
    }

    pub fn effective_weight(&self) -> Matrix {
        let (u, v) = self.adapted_factors();
        spectral_product(&u, &self.base.sigma_p, &v)
    }

    fn backward(&self, g: &Matrix) -> Vec<(&'static str, Matrix)> {
        let (u, v) = self.adapted_factors();
        let sigma = &self.base.sigma_p;
        let grad_u = g.matmul(&v).scale_columns(sigma);
        let grad_v = g.t_matmul(&u).scale_columns(sigma);
        let (gbu, gau) = self.delta_u.backward(&grad_u);
        let (gbv, gav) = self.delta_v.backward(&grad_v);
        vec![("B_U", gbu), ("A_U", gau), ("B_V", gbv), ("A_V", gav)]
    }
}

/// An adapted (or deliberately frozen) weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Adapter {
    Lora(LoraAdapter),
    Dora(DoraAdapter),
    Spectral(SpectralAdapter),
    /// Spectral adapter on the principal part plus the frozen minor part
    /// `W_m = W − U_p·Σ_p·V_pᵀ`.
    SpectralPlusMinor { spectral: SpectralAdapter, minor: Matrix },
    /// `U_p·Σ_p·V_pᵀ` with nothing trainable.
    TruncatedFrozen(Arc<TruncatedSvd>),
    /// The original weight, untouched.
    FullFrozen(Matrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub frozen: usize,
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, rhs: ParamCount) -> ParamCount {
        ParamCount { trainable: self.trainable + rhs.trainable, frozen: self.frozen + rhs.frozen }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub rank: usize,
    /// Principal-column count; ignored by LoRA, DoRA and FullFrozen.
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Builds an adapter over `w` using the process-wide SVD cache.
pub fn init_adapter(w: &Matrix, cfg: &AdapterConfig) -> Result<Adapter> {
    init_adapter_with_cache(w, cfg, SvdCache::global())
}

pub fn init_adapter_with_cache(w: &Matrix, cfg: &AdapterConfig, cache: &SvdCache) -> Result<Adapter> {
    let (m, n) = w.shape();
    let min_dim = m.min(n);
    let AdapterConfig { kind, rank, k, alpha, seed } = *cfg;
    if kind.has_deltas() && !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive and finite, got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        AdapterKind::Lora | AdapterKind::Dora => {
            if rank == 0 || rank > min_dim {
                return Err(Error::Config(format!("rank {rank} must lie in 1..={min_dim} for a {m}x{n} weight")));
            }
            let delta = LowRankDelta::new(m, n, rank, alpha, &mut rng);
            if kind == AdapterKind::Lora {
                Ok(Adapter::Lora(LoraAdapter { w0: w.clone(), delta }))
            } else {
                let magnitude = Matrix::row_vector(&w.column_norms());
                Ok(Adapter::Dora(DoraAdapter { w0: w.clone(), delta, magnitude }))
            }
        }
        AdapterKind::Spectral | AdapterKind::SpectralPlusMinor => {
            if rank == 0 || rank >= k || k > min_dim {
                return Err(Error::Config(format!(
                    "spectral adapters need 1 <= r < k <= min(m, n); got r={rank}, k={k}, weight {m}x{n}"
                )));
            }
            let factors = cache.get_or_compute(w)?;
            let base = Arc::new(mat::truncate_svd(&factors, k)?);
            let delta_u = LowRankDelta::new(m, k, rank, alpha, &mut rng);
            let delta_v = LowRankDelta::new(n, k, rank, alpha, &mut rng);
            let spectral = SpectralAdapter { base, delta_u, delta_v };
            if kind == AdapterKind::Spectral {
                Ok(Adapter::Spectral(spectral))
            } else {
                let minor = w.sub(&spectral.base.reconstruct());
                Ok(Adapter::SpectralPlusMinor { spectral, minor })
            }
        }
        AdapterKind::TruncatedFrozen => {
            if k == 0 || k > min_dim {
                return Err(Error::Config(format!("k = {k} must lie in 1..={min_dim}")));
            }
            let factors = cache.get_or_compute(w)?;
            Ok(Adapter::TruncatedFrozen(Arc::new(mat::truncate_svd(&factors, k)?)))
        }
        AdapterKind::FullFrozen => Ok(Adapter::FullFrozen(w.clone())),
    }
}

impl Adapter {
    pub fn kind(&self) -> AdapterKind {
        match self {
            Adapter::Lora(_) => AdapterKind::Lora,
            Adapter::Dora(_) => AdapterKind::Dora,
            Adapter::Spectral(_) => AdapterKind::Spectral,
            Adapter::SpectralPlusMinor { .. } => AdapterKind::SpectralPlusMinor,
            Adapter::TruncatedFrozen(_) => AdapterKind::TruncatedFrozen,
            Adapter::FullFrozen(_) => AdapterKind::FullFrozen,
        }
    }

    /// `(m, n)` of the effective weight.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Adapter::Lora(a) => a.w0.shape(),
            Adapter::Dora(a) => a.w0.shape(),
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => a.orig_shape(),
            Adapter::TruncatedFrozen(t) => t.orig_shape(),
            Adapter::FullFrozen(w) => w.shape(),
        }
    }

    pub fn effective_weight(&self) -> Matrix {
        match self {
            Adapter::Lora(a) => a.effective_weight(),
            Adapter::Dora(a) => a.effective_weight(),
            Adapter::Spectral(a) => a.effective_weight(),
            Adapter::SpectralPlusMinor { spectral, minor } => spectral.effective_weight().add(minor),
            Adapter::TruncatedFrozen(t) => t.reconstruct(),
            Adapter::FullFrozen(w) => w.clone(),
        }
    }

    /// Folds the adapter into a plain dense matrix for inference.
    pub fn merge(&self) -> Matrix {
        self.effective_weight()
    }

    pub fn param_count(&self) -> ParamCount {
        let (m, n) = self.shape();
        match self {
            Adapter::Lora(a) => ParamCount { trainable: a.delta.rank * (m + n), frozen: m * n },
            Adapter::Dora(a) => ParamCount { trainable: a.delta.rank * (m + n) + n, frozen: m * n },
            Adapter::Spectral(a) => spectral_count(a),
            Adapter::SpectralPlusMinor { spectral, .. } => {
                let c = spectral_count(spectral);
                ParamCount { trainable: c.trainable, frozen: c.frozen + m * n }
            }
            Adapter::TruncatedFrozen(t) => ParamCount { trainable: 0, frozen: t.k * (m + n + 1) },
            Adapter::FullFrozen(_) => ParamCount { trainable: 0, frozen: m * n },
        }
    }

    /// Trainable matrices in a fixed order; names match the checkpoint format.
    pub fn trainables(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            Adapter::Lora(a) => vec![("B", &a.delta.b), ("A", &a.delta.a)],
            Adapter::Dora(a) => vec![("B", &a.delta.b), ("A", &a.delta.a), ("magnitude", &a.magnitude)],
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => vec![
                ("B_U", &a.delta_u.b),
                ("A_U", &a.delta_u.a),
                ("B_V", &a.delta_v.b),
                ("A_V", &a.delta_v.a),
            ],
            Adapter::TruncatedFrozen(_) | Adapter::FullFrozen(_) => Vec::new(),
        }
    }

    pub fn trainables_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            Adapter::Lora(a) => vec![("B", &mut a.delta.b), ("A", &mut a.delta.a)],
            Adapter::Dora(a) => {
                vec![("B", &mut a.delta.b), ("A", &mut a.delta.a), ("magnitude", &mut a.magnitude)]
            }
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => vec![
                ("B_U", &mut a.delta_u.b),
                ("A_U", &mut a.delta_u.a),
                ("B_V", &mut a.delta_v.b),
                ("A_V", &mut a.delta_v.a),
            ],
            Adapter::TruncatedFrozen(_) | Adapter::FullFrozen(_) => Vec::new(),
        }
    }

    /// Gradients of the trainables given `g = ∂L/∂W_eff`, in the order of
    /// [`Adapter::trainables`]. Frozen variants return an empty set.
    pub fn backward(&self, g: &Matrix) -> Result<Vec<(&'static str, Matrix)>> {
        if g.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "adapter gradient is {}x{} but the weight is {}x{}",
                g.rows(),
                g.cols(),
                self.shape().0,
                self.shape().1
            )));
        }
        Ok(match self {
            Adapter::Lora(a) => {
                let (gb, ga) = a.delta.backward(g);
                vec![("B", gb), ("A", ga)]
            }
            Adapter::Dora(a) => a.backward(g),
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => a.backward(g),
            Adapter::TruncatedFrozen(_) | Adapter::FullFrozen(_) => Vec::new(),
        })
    }

    /// The scale `alpha` and rank `r` of the deltas, or `(0, 0)` for frozen variants.
    pub fn alpha_rank(&self) -> (f64, usize) {
        match self {
            Adapter::Lora(a) => (a.delta.alpha, a.delta.rank),
            Adapter::Dora(a) => (a.delta.alpha, a.delta.rank),
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => {
                (a.delta_u.alpha, a.delta_u.rank)
            }
            Adapter::TruncatedFrozen(_) | Adapter::FullFrozen(_) => (0.0, 0),
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => Some(a.k()),
            Adapter::TruncatedFrozen(t) => Some(t.k),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self) -> AdapterCheckpoint {
        let (alpha, r) = self.alpha_rank();
        let mut matrices = BTreeMap::new();
        let mut put = |name: &str, m: &Matrix| {
            matrices.insert(name.to_string(), m.clone());
        };
        match self {
            Adapter::Lora(a) => put("W0", &a.w0),
            Adapter::Dora(a) => put("W0", &a.w0),
            Adapter::Spectral(a) => put_truncated(&mut put, &a.base),
            Adapter::SpectralPlusMinor { spectral, minor } => {
                put_truncated(&mut put, &spectral.base);
                put("W_m", minor);
            }
            Adapter::TruncatedFrozen(t) => put_truncated(&mut put, t),
            Adapter::FullFrozen(w) => put("W0", w),
        }
        for (name, m) in self.trainables() {
            put(name, m);
        }
        AdapterCheckpoint { tag: self.kind(), alpha, r, k: self.k(), matrices }
    }

    pub fn from_checkpoint(ck: &AdapterCheckpoint) -> Result<Adapter> {
        let get = |name: &str| -> Result<Matrix> {
            ck.matrices
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} checkpoint is missing matrix {name}", ck.tag)))
        };
        let delta = |b: &str, a: &str| -> Result<LowRankDelta> {
            let (b, a) = (get(b)?, get(a)?);
            if b.cols() != ck.r || a.rows() != ck.r {
                return Err(Error::Shape(format!(
                    "delta factors {}x{} and {}x{} do not match rank {}",
                    b.rows(),
                    b.cols(),
                    a.rows(),
                    a.cols(),
                    ck.r
                )));
            }
            Ok(LowRankDelta { b, a, rank: ck.r, alpha: ck.alpha })
        };
        let truncated = || -> Result<Arc<TruncatedSvd>> {
            let u_p = get("U_p")?;
            let v_p = get("V_p")?;
            let sigma_p = get("sigma_p")?.into_data();
            let k = sigma_p.len();
            if u_p.cols() != k || v_p.cols() != k || ck.k != Some(k) {
                return Err(Error::Shape("truncated factors disagree on k".into()));
            }
            Ok(Arc::new(TruncatedSvd { k, u_p, sigma_p, v_p }))
        };
        let adapter = match ck.tag {
            AdapterKind::Lora => Adapter::Lora(LoraAdapter { w0: get("W0")?, delta: delta("B", "A")? }),
            AdapterKind::Dora => Adapter::Dora(DoraAdapter {
                w0: get("W0")?,
                delta: delta("B", "A")?,
                magnitude: get("magnitude")?,
            }),
            AdapterKind::Spectral | AdapterKind::SpectralPlusMinor => {
                let spectral =
                    SpectralAdapter { base: truncated()?, delta_u: delta("B_U", "A_U")?, delta_v: delta("B_V", "A_V")? };
                if ck.tag == AdapterKind::Spectral {
                    Adapter::Spectral(spectral)
                } else {
                    Adapter::SpectralPlusMinor { spectral, minor: get("W_m")? }
                }
            }
            AdapterKind::TruncatedFrozen => Adapter::TruncatedFrozen(truncated()?),
            AdapterKind::FullFrozen => Adapter::FullFrozen(get("W0")?),
        };
        adapter.validate_shapes()?;
        Ok(adapter)
    }

    fn validate_shapes(&self) -> Result<()> {
        let (m, n) = self.shape();
        let bad = |what: &str| Err(Error::Shape(format!("{} checkpoint: {what} inconsistent with {m}x{n}", self.kind())));
        match self {
            Adapter::Lora(a) => {
                if a.delta.b.rows() != m || a.delta.a.cols() != n {
                    return bad("B/A");
                }
            }
            Adapter::Dora(a) => {
                if a.delta.b.rows() != m || a.delta.a.cols() != n || a.magnitude.shape() != (1, n) {
                    return bad("B/A/magnitude");
                }
            }
            Adapter::Spectral(a) | Adapter::SpectralPlusMinor { spectral: a, .. } => {
                let k = a.k();
                if a.delta_u.b.rows() != m || a.delta_u.a.cols() != k || a.delta_v.b.rows() != n || a.delta_v.a.cols() != k {
                    return bad("spectral deltas");
                }
                if let Adapter::SpectralPlusMinor { minor, .. } = self {
                    if minor.shape() != (m, n) {
                        return bad("W_m");
                    }
                }
            }
            Adapter::TruncatedFrozen(_) | Adapter::FullFrozen(_) => {}
        }
        Ok(())
    }
}

fn spectral_count(a: &SpectralAdapter) -> ParamCount {
    let (m, n) = a.orig_shape();
    let k = a.k();
    let r = a.delta_u.rank;
    ParamCount { trainable: r * (m + k) + r * (n + k), frozen: k * (m + n + 1) }
}

fn put_truncated(put: &mut impl FnMut(&str, &Matrix), t: &TruncatedSvd) {
    put("U_p", &t.u_p);
    put("sigma_p", &Matrix::row_vector(&t.sigma_p));
    put("V_p", &t.v_p);
}

/// Serialized adapter: `{"tag", "alpha", "r", "k", "matrices": {name: Matrix}}`.
/// `sigma_p` and `magnitude` are stored as 1×len matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub tag: AdapterKind,
    pub alpha: f64,
    pub r: usize,
    pub k: Option<usize>,
    pub matrices: BTreeMap<String, Matrix>,
}

type Bucket = Vec<(Matrix, Arc<SvdFactors>)>;

/// Memoizes SVDs by matrix content so a weight is decomposed once no matter
/// how many adapters are built on it.
#[derive(Default)]
pub struct SvdCache {
    entries: Mutex<HashMap<u64, Bucket>>,
    computed: AtomicUsize,
}

impl SvdCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn global() -> &'static SvdCache {
        static CACHE: OnceLock<SvdCache> = OnceLock::new();
        CACHE.get_or_init(SvdCache::new)
    }

    pub fn content_hash(w: &Matrix) -> u64 {
        let mut h = DefaultHasher::new();
        w.shape().hash(&mut h);
        for x in w.data() {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn get_or_compute(&self, w: &Matrix) -> Result<Arc<SvdFactors>> {
        let key = Self::content_hash(w);
        if let Some(hit) = self.lookup(key, w) {
            return Ok(hit);
        }
        let factors = Arc::new(mat::svd(w)?);
        self.computed.fetch_add(1, Ordering::Relaxed);
        let mut entries = self.entries.lock().expect("svd cache poisoned");
        let bucket = entries.entry(key).or_default();
        if let Some((_, f)) = bucket.iter().find(|(m, _)| m == w) {
            return Ok(f.clone());
        }
        bucket.push((w.clone(), factors.clone()));
        Ok(factors)
    }

    fn lookup(&self, key: u64, w: &Matrix) -> Option<Arc<SvdFactors>> {
        let entries = self.entries.lock().expect("svd cache poisoned");
        entries.get(&key)?.iter().find(|(m, _)| m == w).map(|(_, f)| f.clone())
    }

    /// Number of decompositions actually computed (cache misses).
    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }
}
