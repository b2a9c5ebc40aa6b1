use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use merc_core::data::{generate_synthetic, load_dataset, save_dataset, split_train_test, Dataset, SynthConfig};
use merc_core::train_eval::{
    ablate, default_alpha_grid, evaluate, gradcheck_pipeline, load_model, save_model, sweep_alpha, train_with, Model,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "merc", version, about = "Multimodal conversational emotion recognition")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset
    Generate {
        /// synthetic-data TOML; missing keys take their defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset and write a checkpoint plus its `.meta.json` sidecar
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// evaluated after every epoch
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// JSON training log
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a checkpoint
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic and central-difference gradients of the full objective
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 6)]
        utterances: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Module and modality ablations on a seeded train/test split
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Test metrics as a function of the coarse-task weight
    SweepAlpha {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// defaults to the desk preset
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_toml_file(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainConfig::desk()),
    }
}

fn read_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Pretty JSON to `path` if given, else stdout.
fn emit(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn split(ds: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_train_test(ds, cfg.split_ratio, cfg.seed)?;
    if a.conversations.is_empty() || b.conversations.is_empty() {
        bail!(
            "split_ratio {} leaves an empty side with {} conversations",
            cfg.split_ratio,
            ds.conversations.len()
        );
    }
    Ok((a, b))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Generate { config, out } => {
            let cfg = match &config {
                Some(p) => SynthConfig::from_toml_file(p).with_context(|| format!("loading {}", p.display()))?,
                None => SynthConfig::default(),
            };
            let ds = generate_synthetic(&cfg)?;
            save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "wrote {} conversations, {} utterances to {}",
                ds.conversations.len(),
                ds.n_utterances(),
                out.display()
            );
        }
        Cmd::Train {
            config,
            data,
            out,
            eval_data,
            report,
        } => {
            let cfg = read_config(Some(&config))?;
            let ds = read_data(&data)?;
            let ev = eval_data.as_deref().map(read_data).transpose()?;
            let model = Model::new(cfg, ds.taxonomy.clone())?;
            let outcome = train_with(&model, &ds, ev.as_ref(), |e| match &e.eval {
                Some(m) => eprintln!(
                    "epoch {:>3}  loss {:.6}  acc {:.4}  wf1 {:.4}",
                    e.epoch, e.train_loss, m.accuracy, m.weighted_f1
                ),
                None => eprintln!("epoch {:>3}  loss {:.6}", e.epoch, e.train_loss),
            })?;
            save_model(&model, &outcome.params, &out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(r) = report {
                emit(&outcome.log, Some(&r))?;
            }
        }
        Cmd::Eval { ckpt, data, report } => {
            let (model, params) = load_model(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let ds = read_data(&data)?;
            let result = evaluate(&model, &params, &ds)?;
            emit(&result.metrics, report.as_deref())?;
        }
        Cmd::Gradcheck {
            config,
            tol,
            step,
            utterances,
            report,
        } => {
            let cfg = read_config(Some(&config))?;
            let r = gradcheck_pipeline(&cfg, utterances, step, tol)?;
            if let Some(p) = report {
                emit(&r, Some(&p))?;
            }
            for p in &r.params {
                println!(
                    "{:<32} rel {:.3e}  analytic {:+.6e}  numeric {:+.6e}",
                    p.name, p.rel_error, p.analytic, p.numeric
                );
            }
            println!(
                "max relative error {:.3e} (tol {tol:e}): {}",
                r.max_rel_error,
                if r.passed { "PASS" } else { "FAIL" }
            );
            return Ok(r.passed);
        }
        Cmd::Ablate { config, data, report } => {
            let cfg = read_config(Some(&config))?;
            let (tr, te) = split(&read_data(&data)?, &cfg)?;
            emit(&ablate(&tr, &te, &cfg)?, report.as_deref())?;
        }
        Cmd::SweepAlpha {
            grid,
            config,
            data,
            report,
        } => {
            let cfg = read_config(config.as_deref())?;
            let (tr, te) = split(&read_data(&data)?, &cfg)?;
            let grid = grid.unwrap_or_else(default_alpha_grid);
            emit(&sweep_alpha(&tr, &te, &cfg, &grid)?, report.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
