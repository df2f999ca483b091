//! The two-phase workflow as in-memory building blocks plus the file-backed
//! stages behind each CLI subcommand.
//!
//! Output layout under the run directory:
//!
//! ```text
//! resolved_config.ini
//! source.stcds  target.stcds
//! model_{inverse,forward,reward}.stcnet  norm_stats.txt  pretrain_report.csv
//! reference_scores.txt
//! runs/lambda_{λ}_alpha_{α}/corrected.stcds, corrections.csv, acceptance.txt
//! runs/lambda_{λ}_alpha_{α}/beta_{β}/metrics.csv, summary.txt, *.stcnet
//! bounds.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agent::{self, evaluate, reference_scores, train_agent, EvalSetup, ReferenceScores, TrainLog};
use crate::config::{beta_dir_name, correction_dir_name, ExperimentConfig};
use crate::correction::{apply_candidates, compute_candidates, write_corrections_csv, Candidates, CorrectionResult};
use crate::data::{load_dataset, save_dataset, DomainTag, NormStats, TransitionDataset};
use crate::diagnostics;
use crate::envs::generate_dataset;
use crate::error::{Error, Result};
use crate::target_models::{pretrain, TargetModels, TrainReport};
use crate::theory;

pub const RESOLVED_CONFIG: &str = "resolved_config.ini";
pub const SOURCE_FILE: &str = "source.stcds";
pub const TARGET_FILE: &str = "target.stcds";
pub const CORRECTED_FILE: &str = "corrected.stcds";
pub const REFERENCE_FILE: &str = "reference_scores.txt";

/// SplitMix64 finalizer; gives each pipeline stage its own seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const PRETRAIN_STREAM: u64 = 3;
const AGENT_STREAM: u64 = 4;

pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<(TransitionDataset, TransitionDataset)> {
    cfg.validate()?;
    let src = generate_dataset(
        &cfg.source_env,
        &cfg.data.source_quality.policy(&cfg.source_env),
        cfg.data.source_size,
        derive_seed(cfg.seed, SOURCE_STREAM),
        DomainTag::Source,
    )?;
    let tar = generate_dataset(
        &cfg.target_env,
        &cfg.data.target_quality.policy(&cfg.target_env),
        cfg.data.target_size,
        derive_seed(cfg.seed, TARGET_STREAM),
        DomainTag::Target,
    )?;
    Ok((src, tar))
}

pub fn pretrain_models(cfg: &ExperimentConfig, tar: &TransitionDataset, parallel: bool) -> Result<(TargetModels, Vec<TrainReport>)> {
    let pcfg = crate::target_models::PretrainConfig { seed: derive_seed(cfg.seed, PRETRAIN_STREAM), ..cfg.pretrain.clone() };
    pretrain(tar, &pcfg, parallel)
}

pub fn agent_config(cfg: &ExperimentConfig, beta: f32) -> agent::AgentConfig {
    agent::AgentConfig { beta, seed: derive_seed(cfg.seed, AGENT_STREAM), ..cfg.agent.clone() }
}

pub fn eval_setup(cfg: &ExperimentConfig) -> Result<EvalSetup> {
    let refs = reference_scores(&cfg.target_env, cfg.eval_seed)?;
    if refs.is_degenerate() {
        return Err(Error::Numerical(format!(
            "degenerate reference scores (random {:.3}, expert {:.3}); the target task does not separate them",
            refs.random, refs.expert
        )));
    }
    Ok(EvalSetup { env: cfg.target_env.clone(), refs, seed: cfg.eval_seed })
}

/// Result of one Phase II run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f32,
    pub acceptance_rate: f64,
    pub final_return: f64,
    pub final_score: f64,
    pub log: TrainLog,
}

pub fn train_run(
    cfg: &ExperimentConfig,
    corrected: &CorrectionResult,
    tar: &TransitionDataset,
    norm: &NormStats,
    setup: &EvalSetup,
    (lambda, alpha, beta): (f64, f64, f32),
) -> Result<(agent::Agent, RunOutcome)> {
    let acfg = agent_config(cfg, beta);
    let (agent, log) = train_agent(&corrected.dataset, tar, norm.clone(), &acfg, Some(setup))?;
    let (final_return, final_score) = log.final_score(acfg.final_evals).unwrap_or((f64::NAN, f64::NAN));
    let outcome = RunOutcome { lambda, alpha, beta, acceptance_rate: corrected.acceptance_rate, final_return, final_score, log };
    Ok((agent, outcome))
}

/// Everything derived from one seed before Phase II: datasets, Phase I
/// models and the λ-independent correction candidates.
pub struct Prepared {
    pub source: TransitionDataset,
    pub target: TransitionDataset,
    pub models: TargetModels,
    pub reports: Vec<TrainReport>,
    pub candidates: Candidates,
}

pub fn prepare(cfg: &ExperimentConfig, parallel: bool) -> Result<Prepared> {
    let (source, target) = generate_datasets(cfg)?;
    let (models, reports) = pretrain_models(cfg, &target, parallel)?;
    let candidates = compute_candidates(&models, &source, cfg.clip)?;
    Ok(Prepared { source, target, models, reports, candidates })
}

/// Runs every (λ, α, β) combination in `cfg` on prepared data, in order.
pub fn sweep(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<RunOutcome>> {
    let setup = eval_setup(cfg)?;
    let mut out = Vec::new();
    for &lambda in &cfg.lambdas {
        for &alpha in &cfg.alphas {
            let corrected = apply_candidates(&prep.source, &prep.candidates, alpha, lambda)?;
            for &beta in &cfg.betas {
                let (_, run) = train_run(cfg, &corrected, &prep.target, &prep.models.norm, &setup, (lambda, alpha, beta))?;
                out.push(run);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File-backed stages.

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingFile(path))
    }
}

pub fn write_resolved_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_ini())?;
    Ok(())
}

pub fn stage_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(usize, usize)> {
    write_resolved_config(cfg, out)?;
    let (src, tar) = generate_datasets(cfg)?;
    save_dataset(&src, out.join(SOURCE_FILE))?;
    save_dataset(&tar, out.join(TARGET_FILE))?;
    Ok((src.len(), tar.len()))
}

pub fn stage_pretrain(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<Vec<TrainReport>> {
    write_resolved_config(cfg, out)?;
    let tar = load_dataset(require(out.join(TARGET_FILE))?, DomainTag::Target)?;
    let (models, reports) = pretrain_models(cfg, &tar, parallel)?;
    models.save(out)?;
    let mut csv = String::from("role,heldout_mse,loss_first_tenth,loss_last_tenth,train_size,heldout_size\n");
    for r in &reports {
        let (first, last) = r.loss_trend();
        let _ = writeln!(csv, "{},{:e},{:e},{:e},{},{}", r.role.name(), r.heldout_mse, first, last, r.train_size, r.heldout_size);
    }
    std::fs::write(out.join("pretrain_report.csv"), csv)?;
    Ok(reports)
}

pub fn correction_dir(out: &Path, lambda: f64, alpha: f64) -> PathBuf {
    out.join("runs").join(correction_dir_name(lambda, alpha))
}

/// Writes one corrected dataset per (λ, α); returns the acceptance rates.
pub fn stage_correct(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(f64, f64, f64)>> {
    write_resolved_config(cfg, out)?;
    let src = load_dataset(require(out.join(SOURCE_FILE))?, DomainTag::Source)?;
    let models = TargetModels::load(out)?;
    let cand = compute_candidates(&models, &src, cfg.clip)?;
    let mut rates = Vec::new();
    for &lambda in &cfg.lambdas {
        for &alpha in &cfg.alphas {
            let res = apply_candidates(&src, &cand, alpha, lambda)?;
            let dir = correction_dir(out, lambda, alpha);
            std::fs::create_dir_all(&dir)?;
            save_dataset(&res.dataset, dir.join(CORRECTED_FILE))?;
            write_corrections_csv(dir.join("corrections.csv"), &cand, &res.accepted)?;
            let accepted = res.accepted.iter().filter(|&&a| a).count();
            std::fs::write(
                dir.join("acceptance.txt"),
                format!("lambda={lambda}\nalpha={alpha}\naccepted={accepted}\ntotal={}\nrate={}\n", src.len(), res.acceptance_rate),
            )?;
            rates.push((lambda, alpha, res.acceptance_rate));
        }
    }
    Ok(rates)
}

fn read_acceptance_rate(dir: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(require(dir.join("acceptance.txt"))?)?;
    text.lines()
        .find_map(|l| l.strip_prefix("rate="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::config(format!("no rate in {}", dir.join("acceptance.txt").display())))
}

fn write_reference_file(out: &Path, refs: &ReferenceScores) -> Result<()> {
    std::fs::write(out.join(REFERENCE_FILE), format!("random={:?}\nexpert={:?}\n", refs.random, refs.expert))?;
    Ok(())
}

fn summary_text(run: &RunOutcome) -> String {
    format!(
        "lambda={}\nalpha={}\nbeta={}\nacceptance_rate={}\nfinal_return={:?}\nfinal_normalized_score={:?}\n",
        run.lambda, run.alpha, run.beta, run.acceptance_rate, run.final_return, run.final_score
    )
}

/// Phase II for every (λ, α, β); at most `threads` jobs run at once.
pub fn stage_train(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<RunOutcome>> {
    write_resolved_config(cfg, out)?;
    let tar = load_dataset(require(out.join(TARGET_FILE))?, DomainTag::Target)?;
    let norm = NormStats::from_text(&std::fs::read_to_string(require(out.join(crate::target_models::NORM_STATS_FILE))?)?)?;
    let setup = eval_setup(cfg)?;
    write_reference_file(out, &setup.refs)?;

    let mut jobs = Vec::new();
    for &lambda in &cfg.lambdas {
        for &alpha in &cfg.alphas {
            let dir = correction_dir(out, lambda, alpha);
            let corrected = load_dataset(require(dir.join(CORRECTED_FILE))?, DomainTag::Corrected)?;
            let rate = read_acceptance_rate(&dir)?;
            for &beta in &cfg.betas {
                jobs.push((lambda, alpha, beta, dir.clone(), corrected.clone(), rate));
            }
        }
    }
    let run_job = |(lambda, alpha, beta, dir, corrected, rate): &(f64, f64, f32, PathBuf, TransitionDataset, f64)| -> Result<RunOutcome> {
        let res = CorrectionResult { dataset: corrected.clone(), accepted: Vec::new(), acceptance_rate: *rate };
        let (agent, run) = train_run(cfg, &res, &tar, &norm, &setup, (*lambda, *alpha, *beta))?;
        let bdir = dir.join(beta_dir_name(*beta));
        agent.save(&bdir)?;
        std::fs::write(bdir.join("metrics.csv"), run.log.to_csv())?;
        std::fs::write(bdir.join("summary.txt"), summary_text(&run))?;
        Ok(run)
    };
    run_bounded(&jobs, threads, run_job)
}

/// Maps `f` over `items` with at most `threads` concurrent workers, keeping
/// input order in the output.
pub fn run_bounded<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let slots_lock = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots_lock.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Re-evaluates every trained actor; writes `eval.csv` next to each.
pub fn stage_eval(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(PathBuf, agent::EvalReport)>> {
    write_resolved_config(cfg, out)?;
    let refs = eval_setup(cfg)?.refs;
    write_reference_file(out, &refs)?;
    let mut reports = Vec::new();
    for &lambda in &cfg.lambdas {
        for &alpha in &cfg.alphas {
            for &beta in &cfg.betas {
                let dir = correction_dir(out, lambda, alpha).join(beta_dir_name(beta));
                let (actor, norm) = agent::load_actor(&dir)?;
                let rep = evaluate(&actor, &norm, &cfg.target_env, cfg.agent.eval_episodes, cfg.eval_seed, &refs)?;
                let mut csv = String::from("episode,return\n");
                for (i, r) in rep.returns.iter().enumerate() {
                    let _ = writeln!(csv, "{i},{r:?}");
                }
                let _ = writeln!(csv, "mean,{:?}\nnormalized_score,{:?}", rep.mean_return, rep.normalized_score);
                std::fs::write(dir.join("eval.csv"), csv)?;
                reports.push((dir, rep));
            }
        }
    }
    Ok(reports)
}

/// Action-distribution diagnostics for each corrected dataset.
pub fn stage_diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(PathBuf, diagnostics::DistributionReport)>> {
    write_resolved_config(cfg, out)?;
    let src = load_dataset(require(out.join(SOURCE_FILE))?, DomainTag::Source)?;
    let tar = load_dataset(require(out.join(TARGET_FILE))?, DomainTag::Target)?;
    let mut reports = Vec::new();
    for &lambda in &cfg.lambdas {
        for &alpha in &cfg.alphas {
            let dir = correction_dir(out, lambda, alpha);
            let corrected = load_dataset(require(dir.join(CORRECTED_FILE))?, DomainTag::Corrected)?;
            let triples = diagnostics::pair_actions(&src, &corrected, &tar)?;
            let report = diagnostics::distribution_report(&triples)?;
            std::fs::write(dir.join("diagnostics.csv"), diagnostics::triples_csv(&triples))?;
            std::fs::write(dir.join("densities.csv"), report.to_csv())?;
            reports.push((dir, report));
        }
    }
    Ok(reports)
}

pub const BOUNDS_FILE: &str = "bounds.csv";

/// Trial counts per check for `verify-bounds`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundTrials {
    pub theorem1: usize,
    pub theorem2: usize,
    pub theorem3: usize,
    pub telescoping: usize,
}

impl Default for BoundTrials {
    fn default() -> Self {
        Self { theorem1: 200, theorem2: 200, theorem3: 500, telescoping: 100 }
    }
}

pub const THEOREM3_DELTA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSummary {
    pub kind: theory::BoundKind,
    pub trials: usize,
    pub violations: usize,
    /// Smallest margin seen; negative means a violation.
    pub worst_margin: f64,
}

impl BoundSummary {
    pub fn failure_rate(&self) -> f64 {
        self.violations as f64 / self.trials.max(1) as f64
    }
}

/// Every randomized tabular check, one report row per trial.
pub fn run_bound_trials(seed: u64, counts: BoundTrials) -> Result<Vec<theory::BoundReport>> {
    use theory::trials;
    let trial_seed = |check: u64, i: usize| derive_seed(derive_seed(seed, 16 + check), i as u64);
    let mut rows = Vec::new();
    for i in 0..counts.theorem1 {
        rows.push(trials::theorem1(trial_seed(1, i))?);
    }
    for i in 0..counts.theorem2 {
        rows.push(trials::theorem2(trial_seed(2, i))?);
    }
    for i in 0..counts.theorem3 {
        let n = trials::THEOREM3_SAMPLE_SIZES[i % trials::THEOREM3_SAMPLE_SIZES.len()];
        rows.push(trials::theorem3(trial_seed(3, i), n, THEOREM3_DELTA)?.report);
    }
    for i in 0..counts.telescoping {
        rows.push(trials::telescoping(trial_seed(4, i))?);
    }
    Ok(rows)
}

pub fn summarize_bounds(rows: &[theory::BoundReport]) -> Vec<BoundSummary> {
    let mut out: Vec<BoundSummary> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|s| s.kind == r.kind) {
            Some(s) => {
                s.trials += 1;
                s.violations += usize::from(!r.holds);
                s.worst_margin = s.worst_margin.min(r.margin);
            }
            None => out.push(BoundSummary { kind: r.kind, trials: 1, violations: usize::from(!r.holds), worst_margin: r.margin }),
        }
    }
    out
}

pub fn stage_verify_bounds(cfg: &ExperimentConfig, out: &Path, counts: BoundTrials) -> Result<Vec<BoundSummary>> {
    write_resolved_config(cfg, out)?;
    let rows = run_bound_trials(cfg.seed, counts)?;
    let mut csv = String::from(theory::REPORT_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    std::fs::write(out.join(BOUNDS_FILE), csv)?;
    Ok(summarize_bounds(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a = derive_seed(0, SOURCE_STREAM);
        let b = derive_seed(0, TARGET_STREAM);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(0, SOURCE_STREAM));
        assert_ne!(derive_seed(1, SOURCE_STREAM), a);
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<u64> = (0..17).collect();
        let out = run_bounded(&items, 4, |x| Ok(x * x)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        let err = run_bounded(&items, 3, |&x| if x == 5 { Err(Error::usage("boom")) } else { Ok(x) });
        assert!(err.is_err());
    }
}
