//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::commands;
use crate::config::{parse_config, parse_override, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "cis", version, about = "Adversarial contextual motion segmentation")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set generator.base_channels=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (`paths.out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes and their manifest.
    Synth {
        /// Number of scenes (`synth.count`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train generator and inpainter on a manifest.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Generator updates (`total_steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Predict masks with a trained generator.
    Infer {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Ground-truth manifest.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Exhaustive loss table on small flow lattices.
    Oracle {
        #[arg(long)]
        pixels: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck,
    /// Information reduction rates of a Gaussian block model.
    IrrDemo,
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.display().to_string())
}

impl Cli {
    /// Explicit flags as config overrides; `--set` entries come first so
    /// dedicated flags win.
    pub fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        let mut push = |k: &str, v: Value| out.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("seed", s.into());
        }
        if let Some(p) = &self.out {
            push("paths.out", path_value(p));
        }
        match &self.command {
            Command::Synth { n } => {
                if let Some(n) = n {
                    push("synth.count", (*n).into());
                }
            }
            Command::Train { dataset, steps } => {
                if let Some(p) = dataset {
                    push("paths.dataset", path_value(p));
                }
                if let Some(s) = steps {
                    push("total_steps", (*s).into());
                }
            }
            Command::Infer { dataset, checkpoint } => {
                if let Some(p) = dataset {
                    push("paths.dataset", path_value(p));
                }
                if let Some(p) = checkpoint {
                    push("paths.checkpoint", path_value(p));
                }
            }
            Command::Eval { predictions, dataset } => {
                if let Some(p) = predictions {
                    push("paths.predictions", path_value(p));
                }
                if let Some(p) = dataset {
                    push("paths.dataset", path_value(p));
                }
            }
            Command::Oracle { pixels, trials } => {
                if let Some(n) = pixels {
                    push("oracle.pixels", (*n).into());
                }
                if let Some(n) = trials {
                    push("oracle.trials", (*n).into());
                }
            }
            Command::Gradcheck | Command::IrrDemo => {}
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let cfg = parse_config(self.config.as_deref(), &self.overrides()?)?;
        cfg.out_dir()?;
        Ok(cfg)
    }
}

/// Runs one command; returns the lines to print on success.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let cfg = cli.resolve()?;
    let mut lines = Vec::new();
    match cli.command {
        Command::Synth { .. } => {
            let m = commands::synth(&cfg)?;
            lines.push(format!("wrote {} scenes to {}", cfg.synth.count, m.display()));
        }
        Command::Train { .. } => {
            commands::train_cmd(&cfg)?;
            lines.push(format!("trained {} generator steps into {}", cfg.total_steps, cfg.out_dir()?.display()));
        }
        Command::Infer { .. } => {
            let m = commands::infer_cmd(&cfg)?;
            lines.push(format!("predictions in {}", m.display()));
        }
        Command::Eval { .. } => {
            for r in commands::eval_cmd(&cfg)? {
                lines.push(format!(
                    "{}: J mean {:.4} recall {:.4} decay {:.4} | F mean {:.4} recall {:.4} decay {:.4}",
                    r.sequence, r.j_mean, r.j_recall, r.j_decay, r.f_mean, r.f_recall, r.f_decay
                ));
            }
        }
        Command::Oracle { .. } => {
            let trials = commands::oracle_cmd(&cfg)?;
            let hits = trials.iter().filter(|t| t.recovered).count();
            for (i, t) in trials.iter().enumerate() {
                lines.push(format!("trial {i}: object {:#b} argmin {:#b} recovered {} L(empty) {} L(full) {}", t.object, t.argmin, t.recovered, t.empty, t.full));
            }
            lines.push(format!("recovered {hits}/{}", trials.len()));
        }
        Command::Gradcheck => {
            let checks = commands::gradcheck_cmd(&cfg)?;
            for c in &checks {
                lines.push(format!("{:<24} {:.3e} ({} entries) {}", c.name, c.max_rel_error, c.entries, if c.passed() { "ok" } else { "FAIL" }));
            }
            if let Some(bad) = checks.iter().find(|c| !c.passed()) {
                return Err(crate::CliError::Usage(format!("gradient check `{}` failed: {:e} > {:e}", bad.name, bad.max_rel_error, bad.tolerance)));
            }
        }
        Command::IrrDemo => {
            let v = commands::irr_demo(&cfg)?;
            lines.push(serde_json::to_string(&v).expect("json serializes"));
        }
    }
    Ok(lines)
}
