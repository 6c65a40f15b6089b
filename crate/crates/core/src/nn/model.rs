use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{init_adapter, AdapterConfig, ParamCount};
use crate::error::{Error, Result};
use crate::mat::Matrix;

use super::loss::{aam_loss, AamConfig};
use super::slot::{LinearSlot, SlotCheckpoint, SlotSource};
use super::Gradients;

/// Attention projection that may carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Q,
    K,
    V,
}

impl Position {
    pub fn name(self) -> &'static str {
        match self {
            Position::Q => "q",
            Position::K => "k",
            Position::V => "v",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" => Ok(Position::Q),
            "k" => Ok(Position::K),
            "v" => Ok(Position::V),
            _ => Err(Error::Config(format!("unknown position {s:?}, expected q, k or v"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    /// Model width.
    pub d: usize,
    /// FFN hidden width.
    pub h: usize,
    pub layers: usize,
    pub heads: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d == 0 || self.h == 0 || self.classes == 0 || self.heads == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d = {} is not divisible by {} heads", self.d, self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub wq: LinearSlot,
    pub wk: LinearSlot,
    pub wv: LinearSlot,
    pub wo: LinearSlot,
    /// h×d
    pub ffn1: LinearSlot,
    /// d×h
    pub ffn2: LinearSlot,
    pub heads: usize,
}

impl EncoderLayer {
    fn slots(&self) -> [(&'static str, &LinearSlot); 6] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ffn1", &self.ffn1),
            ("ffn2", &self.ffn2),
        ]
    }

    fn slots_mut(&mut self) -> [(&'static str, &mut LinearSlot); 6] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ffn1", &mut self.ffn1),
            ("ffn2", &mut self.ffn2),
        ]
    }

    pub fn slot(&self, pos: Position) -> &LinearSlot {
        match pos {
            Position::Q => &self.wq,
            Position::K => &self.wk,
            Position::V => &self.wv,
        }
    }

    fn slot_mut(&mut self, pos: Position) -> &mut LinearSlot {
        match pos {
            Position::Q => &mut self.wq,
            Position::K => &mut self.wk,
            Position::V => &mut self.wv,
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape().0
    }
}

/// Activations of one attention block.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub x: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// One T×T row-stochastic matrix per head.
    pub attn: Vec<Matrix>,
    /// Concatenated head outputs `A·V`, T×d.
    pub z: Matrix,
}

#[derive(Clone, Debug)]
struct LayerCache {
    attention: AttentionCache,
    /// Attention block output, input to the FFN.
    x1: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    frames: Matrix,
    layers: Vec<LayerCache>,
    final_out: Matrix,
}

impl ForwardCache {
    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn final_output(&self) -> &Matrix {
        &self.final_out
    }

    pub fn attention(&self, layer: usize) -> &AttentionCache {
        &self.layers[layer].attention
    }
}

fn softmax_rows(s: &mut Matrix) {
    for i in 0..s.rows() {
        let row = s.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Scaled dot-product self-attention with output projection and residual:
/// `out = concat_h(softmax(Q_h·K_hᵀ/√d_h)·V_h)·W_oᵀ + X`.
pub fn attention_forward(layer: &EncoderLayer, x: &Matrix, layer_idx: usize) -> Result<(Matrix, AttentionCache)> {
    let d = layer.dim();
    if x.rows() == 0 || x.cols() != d {
        return Err(Error::Shape(format!("layer {layer_idx}: input {}x{} for model dim {d}", x.rows(), x.cols())));
    }
    let q = layer.wq.forward(x);
    let k = layer.wk.forward(x);
    let v = layer.wv.forward(x);
    let heads = layer.heads;
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut z = Matrix::zeros(x.rows(), d);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.column_block(lo, hi);
        let kh = k.column_block(lo, hi);
        let vh = v.column_block(lo, hi);
        let mut s = qh.matmul_t(&kh).scale(inv_sqrt);
        softmax_rows(&mut s);
        z.set_column_block(lo, &s.matmul(&vh));
        attn.push(s);
    }
    let out = layer.wo.forward(&z).add(x);
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite attention output in layer {layer_idx}")));
    }
    Ok((out, AttentionCache { x: x.clone(), q, k, v, attn, z }))
}

/// Encoder: input projection, attention and ReLU FFN blocks with residuals,
/// temporal mean pooling, and a cosine classifier used only by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    /// d×d_in
    pub input_proj: LinearSlot,
    pub layers: Vec<EncoderLayer>,
    /// C×d
    pub classifier: Matrix,
    pub classifier_trainable: bool,
}

impl Model {
    /// Gaussian init with variance 1/fan_in; classifier rows standard normal.
    /// Every weight starts trainable.
    pub fn random(dims: ModelDims, seed: u64) -> Result<Model> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |out: usize, inp: usize| {
            LinearSlot::dense(Matrix::random_normal(out, inp, &mut rng).scale(1.0 / (inp as f64).sqrt()), true)
        };
        let input_proj = dense(dims.d, dims.d_in);
        let layers = (0..dims.layers)
            .map(|_| EncoderLayer {
                wq: dense(dims.d, dims.d),
                wk: dense(dims.d, dims.d),
                wv: dense(dims.d, dims.d),
                wo: dense(dims.d, dims.d),
                ffn1: dense(dims.h, dims.d),
                ffn2: dense(dims.d, dims.h),
                heads: dims.heads,
            })
            .collect();
        let classifier = Matrix::random_normal(dims.classes, dims.d, &mut rng);
        Ok(Model { dims, input_proj, layers, classifier, classifier_trainable: true })
    }

    fn named_slots(&self) -> Vec<(String, &LinearSlot)> {
        let mut out = vec![("input_proj".to_string(), &self.input_proj)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, slot) in layer.slots() {
                out.push((format!("layers.{i}.{name}"), slot));
            }
        }
        out
    }

    fn named_slots_mut(&mut self) -> Vec<(String, &mut LinearSlot)> {
        let mut out = vec![("input_proj".to_string(), &mut self.input_proj)];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, slot) in layer.slots_mut() {
                out.push((format!("layers.{i}.{name}"), slot));
            }
        }
        out
    }

    /// Marks every dense weight and the classifier (non-)trainable.
    pub fn set_backbone_trainable(&mut self, flag: bool) {
        for (_, slot) in self.named_slots_mut() {
            slot.set_trainable(flag);
        }
    }

    /// Installs a fresh classifier for `classes` speakers.
    pub fn replace_classifier(&mut self, classes: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.classifier = Matrix::random_normal(classes, self.dims.d, &mut rng);
        self.dims.classes = classes;
        self.classifier_trainable = true;
    }

    /// Wraps the current dense weight at `pos` of `layer` in an adapter.
    pub fn attach_adapter(&mut self, layer: usize, pos: Position, cfg: &AdapterConfig) -> Result<()> {
        let n_layers = self.layers.len();
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::Range(format!("layer {layer} of {n_layers}")))?;
        let slot = l.slot_mut(pos);
        let weight = match slot.source() {
            SlotSource::Dense { weight, .. } => weight.clone(),
            SlotSource::Adapted(_) => {
                return Err(Error::Config(format!("layer {layer} {pos} already carries an adapter")))
            }
        };
        *slot = LinearSlot::adapted(init_adapter(&weight, cfg)?);
        Ok(())
    }

    /// Copy with every adapter folded into a frozen dense weight.
    pub fn merged(&self) -> Model {
        let mut m = self.clone();
        for (_, slot) in m.named_slots_mut() {
            *slot = slot.merged();
        }
        m
    }

    pub fn refresh(&mut self) {
        for (_, slot) in self.named_slots_mut() {
            slot.refresh();
        }
    }

    /// Trainable and frozen counts over the encoder slots (classifier excluded).
    pub fn param_count(&self) -> ParamCount {
        self.named_slots().into_iter().fold(ParamCount::default(), |acc, (_, s)| acc + s.param_count())
    }

    pub fn classifier_param_count(&self) -> usize {
        self.classifier.data().len()
    }

    pub fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, slot) in self.named_slots() {
            for (name, m) in slot.params() {
                out.push((format!("{prefix}.{name}"), m));
            }
        }
        if self.classifier_trainable {
            out.push(("classifier".to_string(), &self.classifier));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let trainable_classifier = self.classifier_trainable;
        let mut out = Vec::new();
        let Model { input_proj, layers, classifier, .. } = self;
        let mut slots: Vec<(String, &mut LinearSlot)> = vec![("input_proj".to_string(), input_proj)];
        for (i, layer) in layers.iter_mut().enumerate() {
            for (name, slot) in layer.slots_mut() {
                slots.push((format!("layers.{i}.{name}"), slot));
            }
        }
        for (prefix, slot) in slots {
            for (name, m) in slot.params_mut() {
                out.push((format!("{prefix}.{name}"), m));
            }
        }
        if trainable_classifier {
            out.push(("classifier".to_string(), classifier));
        }
        out
    }

    /// Frames (T×d_in) to a d-dimensional embedding.
    pub fn forward(&self, frames: &Matrix) -> Result<(Vec<f64>, ForwardCache)> {
        if frames.rows() == 0 || frames.cols() != self.dims.d_in {
            return Err(Error::Shape(format!(
                "frames are {}x{}, model expects T x {}",
                frames.rows(),
                frames.cols(),
                self.dims.d_in
            )));
        }
        let mut x = self.input_proj.forward(frames);
        let mut caches = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (x1, attention) = attention_forward(layer, &x, idx)?;
            let hidden_pre = layer.ffn1.forward(&x1);
            let hidden = hidden_pre.map(|v| v.max(0.0));
            let out = layer.ffn2.forward(&hidden).add(&x1);
            if !out.is_finite() {
                return Err(Error::Numeric(format!("non-finite FFN output in layer {idx}")));
            }
            caches.push(LayerCache { attention, x1, hidden_pre, hidden });
            x = out;
        }
        let embedding = x.column_means();
        Ok((embedding, ForwardCache { frames: frames.clone(), layers: caches, final_out: x }))
    }

    pub fn embed(&self, frames: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(frames)?.0)
    }

    /// Reverse pass from `∂L/∂embedding` to every trainable encoder parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_embedding: &[f64]) -> Result<Gradients> {
        let d = self.dims.d;
        if grad_embedding.len() != d || cache.layers.len() != self.layers.len() || cache.final_out.cols() != d {
            return Err(Error::Shape(format!(
                "stale cache: {} cached layers / width {} against model with {} layers, d = {d}, grad of {}",
                cache.layers.len(),
                cache.final_out.cols(),
                self.layers.len(),
                grad_embedding.len()
            )));
        }
        let mut grads = Gradients::new();
        let t = cache.final_out.rows();
        let inv_t = 1.0 / t as f64;
        let mut dx = Matrix::from_fn(t, d, |_, j| grad_embedding[j] * inv_t);

        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let p = |name: &str| format!("layers.{idx}.{name}");
            // FFN block
            let dhidden = layer.ffn2.backward(&lc.hidden, &dx, &p("ffn2"), &mut grads)?;
            let dpre = Matrix::from_fn(dhidden.rows(), dhidden.cols(), |i, j| {
                if lc.hidden_pre[(i, j)] > 0.0 {
                    dhidden[(i, j)]
                } else {
                    0.0
                }
            });
            let mut dx1 = layer.ffn1.backward(&lc.x1, &dpre, &p("ffn1"), &mut grads)?;
            dx1.add_assign(&dx);

            // attention block
            let ac = &lc.attention;
            let dz = layer.wo.backward(&ac.z, &dx1, &p("wo"), &mut grads)?;
            let heads = layer.heads;
            let dh = d / heads;
            let inv_sqrt = 1.0 / (dh as f64).sqrt();
            let mut dq = Matrix::zeros(t, d);
            let mut dk = Matrix::zeros(t, d);
            let mut dv = Matrix::zeros(t, d);
            for h in 0..heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let a = &ac.attn[h];
                let dzh = dz.column_block(lo, hi);
                let da = dzh.matmul_t(&ac.v.column_block(lo, hi));
                dv.set_column_block(lo, &a.t_matmul(&dzh));
                // softmax backward, row by row
                let mut ds = Matrix::zeros(t, t);
                for i in 0..t {
                    let inner: f64 = da.row(i).iter().zip(a.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..t {
                        ds[(i, j)] = a[(i, j)] * (da[(i, j)] - inner) * inv_sqrt;
                    }
                }
                dq.set_column_block(lo, &ds.matmul(&ac.k.column_block(lo, hi)));
                dk.set_column_block(lo, &ds.t_matmul(&ac.q.column_block(lo, hi)));
            }
            let mut dx0 = dx1;
            dx0.add_assign(&layer.wq.backward(&ac.x, &dq, &p("wq"), &mut grads)?);
            dx0.add_assign(&layer.wk.backward(&ac.x, &dk, &p("wk"), &mut grads)?);
            dx0.add_assign(&layer.wv.backward(&ac.x, &dv, &p("wv"), &mut grads)?);
            dx = dx0;
        }
        self.input_proj.backward(&cache.frames, &dx, "input_proj", &mut grads)?;
        Ok(grads)
    }

    /// Mean AAM loss over a batch and its gradients (classifier included when trainable).
    pub fn batch_loss(&self, batch: &[(&Matrix, usize)], aam: &AamConfig) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grads = Gradients::new();
        for (frames, label) in batch {
            let (emb, cache) = self.forward(frames)?;
            let out = aam_loss(&emb, *label, &self.classifier, aam)?;
            total += out.loss;
            let g = self.backward(&cache, &out.grad_embedding)?;
            grads.merge_scaled(w, &g);
            if self.classifier_trainable {
                grads.accumulate("classifier", w, &out.grad_classifier);
            }
        }
        Ok((total * w, grads))
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            dims: self.dims,
            n_layers: self.layers.len(),
            input_proj: self.input_proj.to_checkpoint(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    wq: l.wq.to_checkpoint(),
                    wk: l.wk.to_checkpoint(),
                    wv: l.wv.to_checkpoint(),
                    wo: l.wo.to_checkpoint(),
                    ffn1: l.ffn1.to_checkpoint(),
                    ffn2: l.ffn2.to_checkpoint(),
                })
                .collect(),
            classifier: self.classifier.clone(),
            classifier_trainable: self.classifier_trainable,
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Model> {
        ck.dims.validate()?;
        if ck.layers.len() != ck.n_layers || ck.n_layers != ck.dims.layers {
            return Err(Error::Config("checkpoint layer counts disagree".into()));
        }
        let layers = ck
            .layers
            .iter()
            .map(|l| {
                Ok(EncoderLayer {
                    wq: LinearSlot::from_checkpoint(&l.wq)?,
                    wk: LinearSlot::from_checkpoint(&l.wk)?,
                    wv: LinearSlot::from_checkpoint(&l.wv)?,
                    wo: LinearSlot::from_checkpoint(&l.wo)?,
                    ffn1: LinearSlot::from_checkpoint(&l.ffn1)?,
                    ffn2: LinearSlot::from_checkpoint(&l.ffn2)?,
                    heads: ck.dims.heads,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model {
            dims: ck.dims,
            input_proj: LinearSlot::from_checkpoint(&ck.input_proj)?,
            layers,
            classifier: ck.classifier.clone(),
            classifier_trainable: ck.classifier_trainable,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let ModelDims { d_in, d, h, classes, .. } = self.dims;
        let mut expected = vec![("input_proj".to_string(), (d, d_in))];
        for i in 0..self.layers.len() {
            for (name, shape) in [("wq", (d, d)), ("wk", (d, d)), ("wv", (d, d)), ("wo", (d, d)), ("ffn1", (h, d)), ("ffn2", (d, h))] {
                expected.push((format!("layers.{i}.{name}"), shape));
            }
        }
        for ((name, slot), (_, shape)) in self.named_slots().into_iter().zip(expected) {
            if slot.shape() != shape {
                return Err(Error::Shape(format!("{name} is {:?}, expected {shape:?}", slot.shape())));
            }
        }
        if self.classifier.shape() != (classes, d) {
            return Err(Error::Shape(format!("classifier is {:?}, expected {:?}", self.classifier.shape(), (classes, d))));
        }
        Ok(())
    }

    /// Slot names with their current effective weights, for inspection.
    pub fn named_weights(&self) -> Vec<(String, &Matrix, Option<&crate::adapters::Adapter>)> {
        self.named_slots().into_iter().map(|(n, s)| (n, s.weight(), s.adapter())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub wq: SlotCheckpoint,
    pub wk: SlotCheckpoint,
    pub wv: SlotCheckpoint,
    pub wo: SlotCheckpoint,
    pub ffn1: SlotCheckpoint,
    pub ffn2: SlotCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub dims: ModelDims,
    pub n_layers: usize,
    pub input_proj: SlotCheckpoint,
    pub layers: Vec<LayerCheckpoint>,
    pub classifier: Matrix,
    pub classifier_trainable: bool,
}
