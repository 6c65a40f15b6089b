use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{self, ScoredTrial};
use crate::nn::Model;

use super::config::ExperimentConfig;
use super::corpus::generate_corpus;
use super::train::{finetune, pretrain, ParamSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// `k` after clamping to the weight size, for SVD-based variants.
    pub effective_k: Option<usize>,
    pub alpha: f64,
    pub pretrain_losses: Vec<f64>,
    pub finetune_losses: Vec<f64>,
    pub params: ParamSummary,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    pub fn final_finetune_loss(&self) -> Option<f64> {
        self.finetune_losses.last().copied()
    }

    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        let mut a = self.clone();
        a.wall_clock_seconds = other.wall_clock_seconds;
        &a == other
    }
}

pub struct ExperimentOutput {
    pub result: RunResult,
    pub model: Model,
    pub trials: Vec<ScoredTrial>,
}

/// Corpus generation, pretraining, fine-tuning and scoring, in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let corpus = generate_corpus(&cfg.corpus)?;
    let (pretrained, pretrain_losses) = pretrain(cfg, &corpus)?;
    let ft = finetune(&pretrained, &corpus, cfg)?;
    let result = assemble(cfg, pretrain_losses, &ft, started.elapsed().as_secs_f64());
    Ok(ExperimentOutput { result, model: ft.model, trials: ft.trials })
}

pub(crate) fn assemble(
    cfg: &ExperimentConfig,
    pretrain_losses: Vec<f64>,
    ft: &super::train::FinetuneOutput,
    seconds: f64,
) -> RunResult {
    let n_target = ft.trials.iter().filter(|t| t.is_target).count();
    RunResult {
        config: cfg.clone(),
        seed: cfg.seed,
        effective_k: ft.effective_k,
        alpha: if cfg.adapter.tag.has_deltas() { cfg.adapter.alpha() } else { 0.0 },
        pretrain_losses,
        finetune_losses: ft.losses.clone(),
        params: ft.params,
        eer: ft.metrics.eer,
        eer_threshold: ft.metrics.eer_threshold,
        min_dcf: ft.metrics.min_dcf,
        dcf_threshold: ft.metrics.dcf_threshold,
        p_target: cfg.metric.p_target,
        c_miss: cfg.metric.c_miss,
        c_fa: cfg.metric.c_fa,
        n_target,
        n_nontarget: ft.trials.len() - n_target,
        warnings: ft.warnings.clone(),
        wall_clock_seconds: seconds,
    }
}

/// Runs an experiment and writes
/// `<root>/<timestamp>_<name>/{config.json, result.json, trials.csv, checkpoint.json}`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<(RunResult, PathBuf)> {
    let out = execute(cfg)?;
    let dir = root.join(format!("{}_{}", timestamp(), sanitize(&cfg.name)));
    fs::create_dir_all(&dir)?;
    write_json_atomic(&dir.join("config.json"), cfg)?;
    write_json_atomic(&dir.join("result.json"), &out.result)?;
    write_json_atomic(&dir.join("checkpoint.json"), &out.model.to_checkpoint())?;
    let mut buf = Vec::new();
    eval::write_trials(&mut buf, &out.trials)?;
    write_atomic(&dir.join("trials.csv"), &buf)?;
    Ok((out.result, dir))
}

pub fn load_result(path: &Path) -> Result<RunResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub(crate) fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%d-%H%M%S%.3f").to_string()
}

pub(crate) fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}
