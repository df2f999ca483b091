use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stc_core::config::ExperimentConfig;
use stc_core::pipeline::{self, BoundTrials};
use stc_core::theory::BoundKind;
use stc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "stc", version, about = "Selective transition correction for cross-domain offline RL")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "stc_out")]
    out: PathBuf,
    /// section.key=value, repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out source and target datasets.
    GenData,
    /// Fit the inverse, forward and reward models on target data.
    Pretrain,
    /// Build one corrected source dataset per (lambda, alpha).
    Correct,
    /// Train the offline agent on every corrected dataset and beta.
    Train,
    /// Re-evaluate trained actors on the target environment.
    Eval,
    /// Randomized exact checks of the tabular bounds.
    VerifyBounds {
        #[arg(long, value_enum, default_value = "all")]
        theorem: Which,
        /// Trials per check; defaults to 200/200/500/100.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Action-distribution comparison of source, corrected and target data.
    Diagnose,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    All,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    Telescoping,
}

fn threads() -> Result<usize> {
    match std::env::var("STC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("STC_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) if !p.exists() => return Err(Error::MissingFile(p.clone())),
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = common.seed {
        cfg.apply_override(&format!("run.seed={seed}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bound_counts(which: Which, trials: Option<usize>) -> BoundTrials {
    let d = BoundTrials::default();
    let pick = |on: bool, default: usize| if on { trials.unwrap_or(default) } else { 0 };
    let all = matches!(which, Which::All);
    BoundTrials {
        theorem1: pick(all || matches!(which, Which::One), d.theorem1),
        theorem2: pick(all || matches!(which, Which::Two), d.theorem2),
        theorem3: pick(all || matches!(which, Which::Three), d.theorem3),
        telescoping: pick(all || matches!(which, Which::Telescoping), d.telescoping),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::GenData => {
            let (ns, nt) = pipeline::stage_gen_data(&cfg, out)?;
            println!("source: {ns} transitions\ntarget: {nt} transitions");
        }
        Command::Pretrain => {
            for r in pipeline::stage_pretrain(&cfg, out, threads()? > 1)? {
                let (first, last) = r.loss_trend();
                println!("{:<8} held-out mse {:.3e}  loss {first:.3e} -> {last:.3e}", r.role.name(), r.heldout_mse);
            }
        }
        Command::Correct => {
            for (lambda, alpha, rate) in pipeline::stage_correct(&cfg, out)? {
                println!("lambda {lambda} alpha {alpha}: acceptance rate {rate:.4}");
            }
        }
        Command::Train => {
            for r in pipeline::stage_train(&cfg, out, threads()?)? {
                println!(
                    "lambda {} alpha {} beta {}: acceptance {:.4}, return {:.2}, normalized score {:.2}",
                    r.lambda, r.alpha, r.beta, r.acceptance_rate, r.final_return, r.final_score
                );
            }
        }
        Command::Eval => {
            for (dir, rep) in pipeline::stage_eval(&cfg, out)? {
                println!("{}: return {:.2}, normalized score {:.2}", dir.display(), rep.mean_return, rep.normalized_score);
            }
        }
        Command::VerifyBounds { theorem, trials } => {
            let summary = pipeline::stage_verify_bounds(&cfg, out, bound_counts(theorem, trials))?;
            for s in &summary {
                println!(
                    "{:<12} trials {:>4}  violations {:>3}  worst margin {:+.3e}",
                    s.kind.id(),
                    s.trials,
                    s.violations,
                    s.worst_margin
                );
            }
            // The deterministic statements must never fail; the finite-data
            // one is a high-probability statement and is only reported.
            let broken: Vec<_> = summary
                .iter()
                .filter(|s| s.kind != BoundKind::FiniteData && s.violations > 0)
                .map(|s| s.kind.id())
                .collect();
            if !broken.is_empty() {
                return Err(Error::Numerical(format!("bound violations in {}", broken.join(", "))));
            }
        }
        Command::Diagnose => {
            for (dir, rep) in pipeline::stage_diagnose(&cfg, out)? {
                let (src, corr) = rep.mean_w1();
                println!("{}: mean W1 to target  source {src:.4}  corrected {corr:.4}", dir.display());
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::MissingFile(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stc: [{}] {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
