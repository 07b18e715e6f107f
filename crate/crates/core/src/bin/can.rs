//! Thin command-line front end over the `can_reid` library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use can_reid::data::{generate_synthetic, load_manifest, SynthConfig};
use can_reid::eval::write_rank_lists;
use can_reid::gradcheck::{model_check, op_suite, GRAD_TOLERANCE};
use can_reid::model::load_checkpoint;
use can_reid::train::{train, EvalSet, TrainConfig};
use can_reid::{CanError, Result};

#[derive(Parser)]
#[command(name = "can", version, about = "Collaborative attention network for person re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pedestrian dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model and write metrics plus a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the query/gallery split; prints JSON.
    Eval(EvalArgs),
    /// Finite-difference gradient suites; exit 0 iff all pass.
    Gradcheck(GradArgs),
    /// Summarize a checkpoint: config, streams, parameter counts.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with synthetic-data settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ids: Option<usize>,
    #[arg(long)]
    per_id: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// JSON training config; missing fields take desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable collaborative attention (locals become raw part slices).
    #[arg(long)]
    no_ca: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    /// Also write per-query ranked gallery indices as CSV.
    #[arg(long)]
    ranks_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CanError::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg: SynthConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            cfg.num_ids = a.ids.unwrap_or(cfg.num_ids);
            cfg.per_id = a.per_id.unwrap_or(cfg.per_id);
            cfg.cameras = a.cameras.unwrap_or(cfg.cameras);
            cfg.noise = a.noise.unwrap_or(cfg.noise);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let m = generate_synthetic(&cfg, &a.out)?;
            println!("wrote {} images to {}", m.len(), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = match &a.config {
                Some(p) => TrainConfig::from_json_file(p)?,
                None => TrainConfig::desk(),
            };
            cfg.total_epochs = a.epochs.unwrap_or(cfg.total_epochs);
            cfg.max_steps = a.max_steps.or(cfg.max_steps);
            cfg.base_lr = a.lr.unwrap_or(cfg.base_lr);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            if a.no_ca {
                cfg.collaborative_attention = false;
            }
            let manifest = load_manifest(&a.data)?;
            let out = train(&cfg, &manifest, Some(&a.out))?;
            if let Some(r) = out.log.final_report() {
                println!("{}", serde_json::to_string(r)?);
            }
            println!("checkpoint: {}", a.out.join("checkpoint").display());
        }
        Command::Eval(a) => {
            let (model, _) = load_checkpoint(&a.checkpoint)?;
            let manifest = load_manifest(&a.data)?;
            let bb = &model.config.backbone;
            let dm = EvalSet::load(&manifest, bb.input_h, bb.input_w)?.distances(&model)?;
            if let Some(p) = &a.ranks_csv {
                write_rank_lists(&dm, a.max_rank, p)?;
            }
            let report = can_reid::eval::evaluate(&dm, a.max_rank)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gradcheck(a) => {
            let mut rows = op_suite(a.trials, a.seed)?;
            rows.push(model_check(true, a.seed)?);
            rows.push(model_check(false, a.seed)?);
            let mut ok = true;
            for r in &rows {
                ok &= r.passed();
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                let kinks = if r.kink_reprobed > 0 { format!(", {} kink re-probes", r.kink_reprobed) } else { String::new() };
                println!(
                    "{:<22} max rel err {:.3e}  ({} entries{kinks})  {verdict}",
                    r.name, r.max_rel_error, r.entries_checked
                );
            }
            println!("tolerance {GRAD_TOLERANCE:e}: {}", if ok { "all passed" } else { "failures" });
            return Ok(ok);
        }
        Command::Inspect { checkpoint } => {
            let (model, meta) = load_checkpoint(&checkpoint)?;
            let summary = serde_json::json!({
                "format_version": meta.format_version,
                "config": meta.config,
                "streams": meta.streams,
                "descriptor_dim": model.descriptor_dim(),
                "parameters": model.store.len(),
                "scalars": model.store.num_scalars(),
                "extra": meta.extra,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
