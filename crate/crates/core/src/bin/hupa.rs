//! Command-line entry point for the policy-generation lab.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hupa::gridworld::{Cell, Map};
use hupa::harness::render::render_pair;
use hupa::harness::sweep::{cmd_sweep_sparsity, cmd_sweep_width, SweepConfig};
use hupa::harness::{
    cmd_dataset, cmd_eval, cmd_gradcheck, cmd_maps, cmd_run, read_meta, HarnessError, RunConfig,
};
use hupa::models::{export_theta, Model};
use hupa::neural::checkpoint::load_into;
use hupa::neural::layers::argmax_action;
use hupa::oracle::oracle_labels;
use hupa::trainer::ImageTable;
use hupa::verify;

#[derive(Parser)]
#[command(
    name = "hupa",
    about = "Zero-shot navigation policies from map images: hypernetwork vs embedding baseline"
)]
struct Cli {
    /// Override the config's experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed-order reductions for bit-reproducible runs.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write all 164 generated maps as text plus an index CSV.
    Maps {
        #[arg(long, default_value = "out/maps")]
        out: PathBuf,
    },
    /// Build the configured splits and write train/val/test dataset files.
    Dataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out/dataset")]
        out: PathBuf,
    },
    /// Train one model, evaluate the three regimes, append result rows.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out/runs")]
        out: PathBuf,
    },
    /// Re-evaluate an existing checkpoint over the configured splits.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out/runs")]
        out: PathBuf,
    },
    /// Sweep (kind x width x seed) and append to results.csv; resumable.
    SweepWidth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Sweep training map counts and goal percentages at a fixed width.
    SweepSparsity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Render reachability and action-angle pixmaps for one (map, goal).
    Render {
        /// Checkpoint to render; omit with --oracle for the oracle policy.
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Render the shortest-path oracle policy instead of a model.
        #[arg(long, default_value_t = false)]
        oracle: bool,
        #[arg(long)]
        map_id: u16,
        /// Goal as row,col.
        #[arg(long)]
        goal: String,
        #[arg(long, default_value = "out/render.ppm")]
        out: PathBuf,
        /// For hypernetwork checkpoints: also export the generated
        /// parameter vector (the edge transmission artifact).
        #[arg(long)]
        export_theta: Option<PathBuf>,
    },
    /// Run the gradient verification suite; nonzero exit on any breach.
    Gradcheck {
        #[arg(long, default_value_t = 2718)]
        seed: u64,
    },
}

fn parse_goal(text: &str) -> Result<Cell, HarnessError> {
    let parts: Vec<&str> = text.split(',').collect();
    let invalid = || HarnessError::Invalid(format!("goal must be row,col in 0..=30, got {text:?}"));
    if parts.len() != 2 {
        return Err(invalid());
    }
    let row: usize = parts[0].trim().parse().map_err(|_| invalid())?;
    let col: usize = parts[1].trim().parse().map_err(|_| invalid())?;
    Cell::new(row, col).ok_or_else(invalid)
}

fn load_run_config(path: &PathBuf, cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.deterministic = cli.deterministic;
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Maps { out } => {
            let count = cmd_maps(out)?;
            println!("wrote {count} maps and index.csv to {}", out.display());
        }
        Command::Dataset { config, out } => {
            let config = load_run_config(config, &cli)?;
            let [train, val, test] = cmd_dataset(&config, out)?;
            println!(
                "wrote {} ({train} samples), {} ({val}), {} ({test})",
                out.join("train.hds").display(),
                out.join("val.hds").display(),
                out.join("test.hds").display()
            );
        }
        Command::Train { config, out } => {
            let config = load_run_config(config, &cli)?;
            let result = cmd_run(&config, out)?;
            let h = &result.trained.history;
            println!(
                "trained {} width {} seed {}: {} epochs, best val acc {:.4} at epoch {}, {:.1}s",
                config.kind,
                config.width,
                config.seed,
                h.epochs.len(),
                h.best_val_acc(),
                h.best_epoch,
                result.train_seconds
            );
            for row in &result.rows {
                println!(
                    "  {:<22} label_acc {:.4}  opt_acc {:.4}  rr {:.4}",
                    row.regime.to_string(),
                    row.label_acc,
                    row.opt_acc,
                    row.rr
                );
            }
            println!("results appended to {}", out.join("results.csv").display());
        }
        Command::Eval {
            config,
            checkpoint,
            out,
        } => {
            let config = load_run_config(config, &cli)?;
            let rows = cmd_eval(&config, checkpoint, out)?;
            for row in &rows {
                println!(
                    "{:<22} label_acc {:.4}  opt_acc {:.4}  rr {:.4}",
                    row.regime.to_string(),
                    row.label_acc,
                    row.opt_acc,
                    row.rr
                );
            }
        }
        Command::SweepWidth { config, out } => {
            let mut sweep = SweepConfig::from_path(config)?;
            sweep.base.deterministic = cli.deterministic;
            let ran = cmd_sweep_width(&sweep, out)?;
            println!(
                "width sweep: {ran} cells run, results in {}",
                out.join("results.csv").display()
            );
        }
        Command::SweepSparsity { config, out } => {
            let mut sweep = SweepConfig::from_path(config)?;
            sweep.base.deterministic = cli.deterministic;
            let ran = cmd_sweep_sparsity(&sweep, out)?;
            println!(
                "sparsity sweep: {ran} cells run, results in {}",
                out.join("sparsity.csv").display()
            );
        }
        Command::Render {
            checkpoint,
            oracle,
            map_id,
            goal,
            out,
            export_theta: theta_out,
        } => {
            if *map_id as usize >= hupa::gridworld::door_masks().len() {
                return Err(HarnessError::Invalid(format!("map id {map_id} out of range")));
            }
            let map = Map::from_id(*map_id);
            let goal = parse_goal(goal)?;
            if !map.is_open(goal) {
                return Err(HarnessError::Invalid(format!(
                    "goal {goal} is a wall on map {map_id}"
                )));
            }
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            if *oracle {
                let labels =
                    oracle_labels(&map, goal).map_err(|e| HarnessError::Invalid(e.to_string()))?;
                let overlay = render_pair(&map, goal, out, |s| {
                    labels.canonical(s).expect("connected map")
                })?;
                println!("wrote {} and {}", out.display(), overlay.display());
            } else {
                let ckpt = checkpoint.as_ref().expect("clap enforces checkpoint|oracle");
                let (kind, width, _) = read_meta(&ckpt.with_extension("meta"))?;
                let model = Model::new(kind, width)?;
                let mut params = vec![0.0f32; model.param_count()];
                load_into(ckpt, model.layout(), &mut params)?;
                let images = ImageTable::for_ids([*map_id]);
                let context = model.map_context(&params, images.get(*map_id));
                let overlay = render_pair(&map, goal, out, |s| {
                    argmax_action(&model.logits(&params, &context, s, goal))
                })?;
                println!("wrote {} and {}", out.display(), overlay.display());
                if let Some(theta_path) = theta_out {
                    match (&model, &context) {
                        (Model::Hupa(m), hupa::models::MapContext::Theta(theta)) => {
                            export_theta(theta_path, m.primary, theta)?;
                            println!("exported generated parameters to {}", theta_path.display());
                        }
                        _ => {
                            return Err(HarnessError::Invalid(
                                "--export-theta needs a hypernetwork checkpoint".into(),
                            ))
                        }
                    }
                }
            }
        }
        Command::Gradcheck { seed } => {
            let (reports, ok) = cmd_gradcheck(*seed)?;
            for report in &reports {
                let threshold = verify::threshold_for(report);
                println!(
                    "{:<24} max_rel_err {:.3e}  (threshold {:.0e}, {} coords) {}",
                    report.name,
                    report.max_rel_err,
                    threshold,
                    report.checked,
                    if report.passes(threshold) { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
