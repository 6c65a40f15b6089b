use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, ParamCount};
use crate::error::{Error, Result};
use crate::eval::{self, cosine_score, MetricResult, ScoredTrial, Trial, TrialSet};
use crate::mat::Matrix;
use crate::nn::{AamConfig, Adam, Model, ModelDims};

use super::config::{ExperimentConfig, TrainConfig, PLATEAU_TOL, PLATEAU_WINDOW};
use super::corpus::{all_pairs, Corpus, Utterance};

/// Stream ids for [`ExperimentConfig::stream_seed`].
pub const STREAM_MODEL_INIT: u64 = 1;
pub const STREAM_PRETRAIN_SHUFFLE: u64 = 2;
pub const STREAM_CLASSIFIER: u64 = 3;
pub const STREAM_ADAPTER: u64 = 4;
pub const STREAM_FINETUNE_SHUFFLE: u64 = 5;

/// Minibatch Adam over shuffled examples. Returns the mean loss of each epoch.
/// With `plateau`, stops once the loss moved less than the plateau tolerance
/// over the last few epochs.
pub fn train(
    model: &mut Model,
    data: &[(&Matrix, usize)],
    cfg: &TrainConfig,
    aam: &AamConfig,
    shuffle_seed: u64,
    plateau: bool,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    if model.params().is_empty() {
        // nothing to train; report the constant loss per epoch
        for _ in 0..cfg.epochs {
            losses.push(model.batch_loss(data, aam)?.0);
        }
        return Ok(losses);
    }
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Matrix, usize)> = chunk.iter().map(|&i| data[i]).collect();
            let (loss, grads) = model.batch_loss(&batch, aam)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch} (shuffle seed {shuffle_seed})")));
            }
            total += loss * batch.len() as f64;
            adam.step(model.params_mut(), &grads, cfg.lr)?;
            model.refresh();
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {epoch} (shuffle seed {shuffle_seed})")));
        }
        losses.push(epoch_loss);
        if plateau && losses.len() > PLATEAU_WINDOW {
            let n = losses.len();
            if (losses[n - 1] - losses[n - 1 - PLATEAU_WINDOW]).abs() < PLATEAU_TOL {
                log::info!("loss plateau after {} epochs", n);
                break;
            }
        }
    }
    Ok(losses)
}

fn labelled(utts: &[Utterance]) -> Vec<(&Matrix, usize)> {
    utts.iter().map(|u| (&u.frames, u.speaker)).collect()
}

pub fn model_dims(cfg: &ExperimentConfig, classes: usize) -> ModelDims {
    ModelDims {
        d_in: cfg.corpus.d_in,
        d: cfg.model.d,
        h: cfg.model.h,
        layers: cfg.model.layers,
        heads: cfg.model.heads,
        classes: classes.max(1),
    }
}

/// Trains a randomly initialized encoder on the pretrain speakers, then
/// freezes every weight. Returns the model and its epoch losses.
pub fn pretrain(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(Model, Vec<f64>)> {
    let mut model = Model::random(model_dims(cfg, cfg.corpus.n_pretrain_speakers), cfg.stream_seed(STREAM_MODEL_INIT))?;
    let mut losses = Vec::new();
    if cfg.pretrain.epochs > 0 && !corpus.pretrain.is_empty() {
        let data = labelled(&corpus.pretrain);
        losses = train(&mut model, &data, &cfg.pretrain, &cfg.aam, cfg.stream_seed(STREAM_PRETRAIN_SHUFFLE), true)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg}; experiment seed {}", cfg.seed)),
                other => other,
            })?;
    }
    model.set_backbone_trainable(false);
    model.classifier_trainable = false;
    Ok((model, losses))
}

/// Counts reported for a fine-tuned model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSummary {
    /// Adapter trainables across all adapted slots.
    pub trainable: usize,
    /// Frozen encoder parameters, including cached SVD factors.
    pub frozen: usize,
    /// The new speaker classifier, trained alongside the adapters.
    pub classifier: usize,
}

pub struct FinetuneOutput {
    pub model: Model,
    pub losses: Vec<f64>,
    pub params: ParamSummary,
    pub metrics: MetricResult,
    pub trials: Vec<ScoredTrial>,
    pub effective_k: Option<usize>,
    pub warnings: Vec<String>,
}

/// Resolves the adapter configuration against a `d×d` attention weight:
/// clamps `k` to `d` (with a warning) and rejects `r >= k` for spectral variants.
pub fn resolve_adapter(cfg: &ExperimentConfig, warnings: &mut Vec<String>) -> Result<AdapterConfig> {
    let s = &cfg.adapter;
    let d = cfg.model.d;
    let mut k = s.k;
    if s.tag.uses_svd() {
        if k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if k > d {
            warnings.push(format!("k = {} exceeds min(m, n) = {d}; clamped to {d}", s.k));
            k = d;
        }
        if s.tag.has_deltas() && s.r >= k {
            return Err(Error::Config(format!("rank r = {} must be below k = {k}", s.r)));
        }
    }
    if s.tag.has_deltas() && (s.r == 0 || s.r > d) {
        return Err(Error::Config(format!("rank r = {} must lie in 1..={d}", s.r)));
    }
    let alpha = if s.tag.has_deltas() { s.alpha() } else { 0.0 };
    Ok(AdapterConfig { kind: s.tag, rank: s.r, k, alpha, seed: cfg.stream_seed(STREAM_ADAPTER) })
}

/// Attaches the configured adapters to a pretrained model, trains adapters
/// and a fresh classifier on the enrollment utterances, and scores every
/// enroll×test trial.
pub fn finetune(pretrained: &Model, corpus: &Corpus, cfg: &ExperimentConfig) -> Result<FinetuneOutput> {
    let mut warnings = Vec::new();
    let acfg = resolve_adapter(cfg, &mut warnings)?;
    let mut model = pretrained.clone();
    model.set_backbone_trainable(false);
    model.replace_classifier(cfg.corpus.n_finetune_speakers, cfg.stream_seed(STREAM_CLASSIFIER));
    for layer in 0..model.layers.len() {
        for (i, &pos) in cfg.positions.iter().enumerate() {
            let seeded = AdapterConfig { seed: acfg.seed.wrapping_add((layer * 3 + i) as u64), ..acfg };
            model.attach_adapter(layer, pos, &seeded)?;
        }
    }
    let data = labelled(&corpus.enroll);
    let losses = train(&mut model, &data, &cfg.finetune, &cfg.aam, cfg.stream_seed(STREAM_FINETUNE_SHUFFLE), false)
        .map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg}; experiment seed {}", cfg.seed)),
            other => other,
        })?;

    let ParamCount { trainable, frozen } = model.param_count();
    let params = ParamSummary { trainable, frozen, classifier: model.classifier_param_count() };
    let (metrics, trials) = score_trials(&model, &corpus.enroll, &corpus.test, cfg)?;
    let effective_k = if acfg.kind.uses_svd() { Some(acfg.k) } else { None };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FinetuneOutput { model, losses, params, metrics, trials, effective_k, warnings })
}

pub fn embed_all(model: &Model, utts: &[Utterance]) -> Result<Vec<Vec<f64>>> {
    utts.iter().map(|u| model.embed(&u.frames)).collect()
}

/// Cosine-scores all enroll×test pairs.
pub fn score_trials(
    model: &Model,
    enroll: &[Utterance],
    test: &[Utterance],
    cfg: &ExperimentConfig,
) -> Result<(MetricResult, Vec<ScoredTrial>)> {
    let inference = model.merged();
    let e = embed_all(&inference, enroll)?;
    let t = embed_all(&inference, test)?;
    let mut scored = Vec::new();
    for p in all_pairs(enroll, test) {
        scored.push(ScoredTrial {
            enroll_id: enroll[p.enroll].id.clone(),
            test_id: test[p.test].id.clone(),
            score: cosine_score(&e[p.enroll], &t[p.test])?,
            is_target: p.is_target,
        });
    }
    let set = TrialSet::new(scored.iter().map(|s| Trial { score: s.score, is_target: s.is_target }).collect())?;
    Ok((eval::evaluate(&set, &cfg.metric)?, scored))
}
