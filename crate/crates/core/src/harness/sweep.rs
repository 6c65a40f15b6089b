//! Ablation grids over one pretrained encoder: rank, principal-column count,
//! subspace strategy and attachment position.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterKind;
use crate::error::{Error, Result};
use crate::nn::Position;

use super::config::ExperimentConfig;
use super::corpus::{generate_corpus, Corpus};
use super::experiment::{assemble, sanitize, timestamp, write_atomic, write_json_atomic, RunResult};
use super::train::{finetune, pretrain};
use crate::nn::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Rank,
    PrincipalK,
    Subspace,
    Positions,
}

impl SweepMode {
    pub const ALL: [SweepMode; 4] = [SweepMode::Rank, SweepMode::PrincipalK, SweepMode::Subspace, SweepMode::Positions];

    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Rank => "rank",
            SweepMode::PrincipalK => "principal_k",
            SweepMode::Subspace => "subspace",
            SweepMode::Positions => "positions",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep mode {s:?}")))
    }
}

/// Extra knobs for a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepOptions {
    /// Replaces the adapter scale `alpha / r` in every cell (positions mode
    /// is typically run at 1.0).
    pub alpha_over_r: Option<f64>,
}

/// One cell of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub label: String,
    pub method: AdapterKind,
    pub positions: String,
    pub r: usize,
    pub k: Option<usize>,
    pub alpha: f64,
    pub trainable: Option<usize>,
    pub frozen: Option<usize>,
    pub final_loss: Option<f64>,
    pub eer: Option<f64>,
    pub min_dcf: Option<f64>,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
}

impl SweepRow {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &SweepRow) -> bool {
        let mut a = self.clone();
        a.wall_clock_seconds = other.wall_clock_seconds;
        &a == other
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub mode: SweepMode,
    /// Human-readable notes on how the grid maps to the reference grid.
    pub notes: Vec<String>,
    pub rows: Vec<SweepRow>,
    /// Full results of successful cells, aligned with `rows`.
    pub results: Vec<Option<RunResult>>,
}

impl SweepTable {
    /// CSV with `#`-prefixed note lines, then a header row.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!("# sweep mode: {}\n", self.mode));
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8_lossy(&body));
        Ok(out)
    }
}

struct Cell {
    label: String,
    cfg: ExperimentConfig,
}

fn positions_label(p: &[Position]) -> String {
    p.iter().map(|p| p.name()).collect::<Vec<_>>().join("+")
}

/// Rank grid: {2, 4, 8, 16, 32} scaled by d/64, at least 1, deduplicated.
pub fn rank_grid(d: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [2usize, 4, 8, 16, 32].iter().map(|r| (r * d / 64).max(1)).collect();
    out.dedup();
    out
}

/// Principal-column grid {d/8, d/4, d/2, d}, at least 2, deduplicated.
pub fn principal_k_grid(d: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [8usize, 4, 2, 1].iter().map(|f| (d / f).max(2)).collect();
    out.dedup();
    out
}

fn build_cells(mode: SweepMode, base: &ExperimentConfig, opts: &SweepOptions) -> (Vec<Cell>, Vec<String>) {
    let d = base.model.d;
    let mut cells = Vec::new();
    let mut notes = Vec::new();
    let with_scale = |mut cfg: ExperimentConfig| {
        if let Some(s) = opts.alpha_over_r {
            cfg.adapter.alpha = Some(s * cfg.adapter.r as f64);
        }
        cfg
    };
    let spectral_tag = if base.adapter.tag.has_deltas() && base.adapter.tag.uses_svd() {
        base.adapter.tag
    } else {
        AdapterKind::Spectral
    };
    match mode {
        SweepMode::Rank => {
            let grid = rank_grid(d);
            notes.push(format!("ranks {grid:?} = {{2,4,8,16,32}} x d/64 with d = {d}"));
            notes.push(format!("k = {} (clamped to d), positions {}", base.adapter.k.min(d), positions_label(&base.positions)));
            for r in grid {
                let mut cfg = base.clone();
                cfg.adapter.tag = spectral_tag;
                cfg.adapter.r = r;
                cfg.adapter.alpha = base.adapter.alpha.map(|a| a / base.adapter.r as f64 * r as f64);
                cells.push(Cell { label: format!("r={r}"), cfg: with_scale(cfg) });
            }
        }
        SweepMode::PrincipalK => {
            let grid = principal_k_grid(d);
            let r = base.adapter.r.min((grid[0] / 2).max(1));
            notes.push(format!("k grid {grid:?} = {{d/8, d/4, d/2, d}} with d = {d} (reference grid 64..1024 at d = 1024)"));
            notes.push(format!("rank fixed at r = {r} so that r < k in every cell"));
            for k in grid {
                let mut cfg = base.clone();
                cfg.adapter.tag = spectral_tag;
                cfg.adapter.r = r;
                cfg.adapter.k = k;
                cfg.adapter.alpha = base.adapter.alpha.map(|a| a / base.adapter.r as f64 * r as f64);
                cells.push(Cell { label: format!("k={k}"), cfg: with_scale(cfg) });
            }
        }
        SweepMode::Subspace => {
            notes.push(format!(
                "subspace variants at r = {}, k = {} (clamped to d = {d})",
                base.adapter.r,
                base.adapter.k.min(d)
            ));
            notes.push("Spectral: principal + deltas; TruncatedFrozen: principal only; SpectralPlusMinor: principal + deltas + frozen minor; FullFrozen: original weight".into());
            for kind in [
                AdapterKind::Spectral,
                AdapterKind::TruncatedFrozen,
                AdapterKind::SpectralPlusMinor,
                AdapterKind::FullFrozen,
            ] {
                let mut cfg = base.clone();
                cfg.adapter.tag = kind;
                cells.push(Cell { label: kind.name().to_string(), cfg: with_scale(cfg) });
            }
        }
        SweepMode::Positions => {
            notes.push("methods x attachment positions {q}, {q,k}, {q,k,v}".into());
            if let Some(s) = opts.alpha_over_r {
                notes.push(format!("alpha/r overridden to {s}"));
            }
            for kind in [AdapterKind::Lora, AdapterKind::Dora, AdapterKind::Spectral] {
                for positions in [vec![Position::Q], vec![Position::Q, Position::K], vec![Position::Q, Position::K, Position::V]] {
                    let mut cfg = base.clone();
                    cfg.adapter.tag = kind;
                    let label = format!("{}:{}", kind, positions_label(&positions));
                    cfg.positions = positions;
                    cells.push(Cell { label, cfg: with_scale(cfg) });
                }
            }
        }
    }
    for (i, c) in cells.iter_mut().enumerate() {
        c.cfg.name = format!("{}_{}_{}", base.name, mode, i);
    }
    (cells, notes)
}

fn run_cell(index: usize, cell: &Cell, pretrained: &Model, pretrain_losses: &[f64], corpus: &Corpus) -> (SweepRow, Option<RunResult>) {
    let started = Instant::now();
    let cfg = &cell.cfg;
    let mut row = SweepRow {
        cell: index,
        label: cell.label.clone(),
        method: cfg.adapter.tag,
        positions: positions_label(&cfg.positions),
        r: cfg.adapter.r,
        k: cfg.adapter.tag.uses_svd().then(|| cfg.adapter.k.min(cfg.model.d)),
        alpha: if cfg.adapter.tag.has_deltas() { cfg.adapter.alpha() } else { 0.0 },
        trainable: None,
        frozen: None,
        final_loss: None,
        eer: None,
        min_dcf: None,
        error: None,
        wall_clock_seconds: 0.0,
    };
    let outcome = cfg.validate().and_then(|_| finetune(pretrained, corpus, cfg));
    let result = match outcome {
        Ok(ft) => {
            let result = assemble(cfg, pretrain_losses.to_vec(), &ft, started.elapsed().as_secs_f64());
            row.trainable = Some(result.params.trainable);
            row.frozen = Some(result.params.frozen);
            row.final_loss = result.final_finetune_loss();
            row.eer = Some(result.eer);
            row.min_dcf = Some(result.min_dcf);
            Some(result)
        }
        Err(e) => {
            log::warn!("sweep cell {} ({}) failed: {e}", index, cell.label);
            row.error = Some(e.to_string());
            None
        }
    };
    row.wall_clock_seconds = started.elapsed().as_secs_f64();
    (row, result)
}

/// Runs every cell of `mode` against one shared corpus and pretrained
/// encoder. Failed cells become error rows; the sweep carries on.
pub fn run_sweep(mode: SweepMode, base: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepTable> {
    base.validate()?;
    let corpus = generate_corpus(&base.corpus)?;
    let (pretrained, pretrain_losses) = pretrain(base, &corpus)?;
    let (cells, notes) = build_cells(mode, base, opts);
    let outcomes: Vec<(SweepRow, Option<RunResult>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| run_cell(i, cell, &pretrained, &pretrain_losses, &corpus))
        .collect();
    let (rows, results) = outcomes.into_iter().unzip();
    Ok(SweepTable { mode, notes, rows, results })
}

/// Writes `<root>/<timestamp>_<name>_sweep_<mode>/{config.json, table.csv, cells/NN.json}`.
pub fn write_sweep(table: &SweepTable, base: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let dir = root.join(format!("{}_{}_sweep_{}", timestamp(), sanitize(&base.name), table.mode));
    let cells = dir.join("cells");
    fs::create_dir_all(&cells)?;
    write_json_atomic(&dir.join("config.json"), base)?;
    for (row, result) in table.rows.iter().zip(&table.results) {
        let path = cells.join(format!("{:02}_{}.json", row.cell, sanitize(&row.label)));
        match result {
            Some(r) => write_json_atomic(&path, r)?,
            None => write_json_atomic(&path, row)?,
        }
    }
    write_atomic(&dir.join("table.csv"), table.to_csv()?.as_bytes())?;
    Ok(dir)
}
