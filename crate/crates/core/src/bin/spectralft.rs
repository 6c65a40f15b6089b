use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spectralft::adapters::{Adapter, AdapterCheckpoint};
use spectralft::error::{Error, Result};
use spectralft::eval::{self, DcfParams};
use spectralft::harness::{self, ExperimentConfig, SweepMode, SweepOptions};
use spectralft::mat::svd;
use spectralft::nn::{Model, ModelCheckpoint};
use spectralft::Matrix;

#[derive(Parser)]
#[command(name = "spectralft", version, about = "Spectral low-rank adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pretrain + fine-tune experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run an ablation grid.
    Sweep {
        #[arg(long, value_parser = parse_mode)]
        mode: SweepMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override the adapter scale alpha/r in every cell.
        #[arg(long)]
        alpha_over_r: Option<f64>,
    },
    /// Compute EER and minDCF from a trial-score CSV.
    Eval {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        p_target: f64,
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        #[arg(long, default_value_t = 1.0)]
        c_fa: f64,
    },
    /// Print shapes, parameter counts and top singular values of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<SweepMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.corpus.seed = s;
    }
    Ok(cfg)
}

fn top_singular_values(w: &Matrix, n: usize) -> Result<String> {
    let f = svd(w)?;
    Ok(f.sigma.iter().take(n).map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", "))
}

fn inspect(path: &PathBuf) -> Result<()> {
    let value: serde_json::Value = serde_json::from_reader(File::open(path)?)?;
    if value.get("tag").is_some() {
        let ck: AdapterCheckpoint = serde_json::from_value(value)?;
        let a = Adapter::from_checkpoint(&ck)?;
        let (m, n) = a.shape();
        let pc = a.param_count();
        println!("adapter {} {m}x{n} r={} k={:?}", a.kind(), ck.r, ck.k);
        for (name, mat) in &ck.matrices {
            println!("  {name:<10} {}x{}", mat.rows(), mat.cols());
        }
        println!("  trainable {} frozen {}", pc.trainable, pc.frozen);
        println!("  top singular values: {}", top_singular_values(&a.effective_weight(), 5)?);
        return Ok(());
    }
    let ck: ModelCheckpoint = serde_json::from_value(value)?;
    let model = Model::from_checkpoint(&ck)?;
    let d = model.dims;
    println!(
        "model d_in={} d={} h={} layers={} heads={} classes={}",
        d.d_in, d.d, d.h, d.layers, d.heads, d.classes
    );
    for (name, w, adapter) in model.named_weights() {
        let kind = adapter.map_or("dense".to_string(), |a| a.kind().to_string());
        let pc = adapter.map(|a| a.param_count());
        let counts = pc.map_or(String::new(), |p| format!(" trainable {} frozen {}", p.trainable, p.frozen));
        println!("  {name:<16} {:>3}x{:<3} {kind}{counts}", w.rows(), w.cols());
        println!("      top singular values: {}", top_singular_values(w, 5)?);
    }
    let pc = model.param_count();
    println!("encoder trainable {} frozen {}; classifier {}", pc.trainable, pc.frozen, model.classifier_param_count());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let (result, dir) = harness::run_experiment(&cfg, &out)?;
            println!(
                "{}: eer {:.4} min_dcf {:.4} trainable {} final loss {:.4}",
                cfg.name,
                result.eer,
                result.min_dcf,
                result.params.trainable,
                result.final_finetune_loss().unwrap_or(f64::NAN)
            );
            println!("wrote {}", dir.display());
        }
        Command::Sweep { mode, config, seed, out, alpha_over_r } => {
            let cfg = load_config(&config, seed)?;
            let table = harness::run_sweep(mode, &cfg, &SweepOptions { alpha_over_r })?;
            let dir = harness::write_sweep(&table, &cfg, &out)?;
            print!("{}", table.to_csv()?);
            println!("wrote {}", dir.display());
        }
        Command::Eval { trials, p_target, c_miss, c_fa } => {
            let scored = eval::read_trials(File::open(&trials)?)?;
            let set = eval::trial_set(&scored)?;
            let report = eval::report(&set, &DcfParams { p_target, c_miss, c_fa })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Inspect { checkpoint } => inspect(&checkpoint)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors are configuration errors; help and version are not errors
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
