use std::path::Path;

use stc_core::config::ExperimentConfig;
use stc_core::data::{load_dataset, DomainTag};
use stc_core::pipeline::{self, BoundTrials};
use stc_core::Error;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for kv in [
        "data.source_size=600",
        "data.target_size=400",
        "pretrain.steps=60",
        "pretrain.hidden=8x8",
        "agent.hidden=8x8",
        "agent.gradient_steps=20",
        "agent.eval_every=10",
        "agent.eval_episodes=1",
        "agent.log_every=5",
        "agent.final_evals=2",
        "correction.lambda=0,1",
        "agent.beta=5",
        "run.seed=3",
    ] {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn stages_chain_and_write_documented_files() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    assert!(matches!(pipeline::stage_pretrain(&cfg, out, false), Err(Error::MissingFile(p)) if p.ends_with("target.stcds")));

    assert_eq!(pipeline::stage_gen_data(&cfg, out).unwrap(), (600, 400));
    pipeline::stage_pretrain(&cfg, out, false).unwrap();
    let rates = pipeline::stage_correct(&cfg, out).unwrap();
    assert_eq!(rates[0].2, 0.0);

    // λ = 0 stores the source records untouched.
    let src = load_dataset(out.join("source.stcds"), DomainTag::Source).unwrap();
    let naive = load_dataset(out.join("runs/lambda_0_alpha_0.5/corrected.stcds"), DomainTag::Source).unwrap();
    assert_eq!(naive, src);

    let runs = pipeline::stage_train(&cfg, out, 2).unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.final_score.is_finite()));
    pipeline::stage_eval(&cfg, out).unwrap();
    let diag = pipeline::stage_diagnose(&cfg, out).unwrap();
    assert_eq!(diag.len(), 2);

    for f in [
        "resolved_config.ini",
        "model_inverse.stcnet",
        "model_forward.stcnet",
        "model_reward.stcnet",
        "norm_stats.txt",
        "pretrain_report.csv",
        "reference_scores.txt",
        "runs/lambda_1_alpha_0.5/corrections.csv",
        "runs/lambda_1_alpha_0.5/acceptance.txt",
        "runs/lambda_1_alpha_0.5/diagnostics.csv",
        "runs/lambda_1_alpha_0.5/densities.csv",
        "runs/lambda_1_alpha_0.5/beta_5/metrics.csv",
        "runs/lambda_1_alpha_0.5/beta_5/summary.txt",
        "runs/lambda_1_alpha_0.5/beta_5/eval.csv",
        "runs/lambda_1_alpha_0.5/beta_5/actor.stcnet",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = String::from_utf8(read(&out.join("runs/lambda_0_alpha_0.5/beta_5/metrics.csv"))).unwrap();
    assert!(metrics.starts_with("step,critic_loss,actor_loss,eval_return,normalized_score\n"));

    let resolved = ExperimentConfig::load(out.join("resolved_config.ini")).unwrap();
    assert_eq!(resolved, cfg);
}

#[test]
fn thread_count_does_not_change_training_output() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(a.path(), 1), (b.path(), 3)] {
        pipeline::stage_gen_data(&cfg, dir).unwrap();
        pipeline::stage_pretrain(&cfg, dir, threads > 1).unwrap();
        pipeline::stage_correct(&cfg, dir).unwrap();
        pipeline::stage_train(&cfg, dir, threads).unwrap();
    }
    for f in ["model_inverse.stcnet", "runs/lambda_1_alpha_0.5/beta_5/metrics.csv", "runs/lambda_1_alpha_0.5/beta_5/actor.stcnet"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn bound_stage_reports_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let counts = BoundTrials { theorem1: 5, theorem2: 4, theorem3: 6, telescoping: 3 };
    let summary = pipeline::stage_verify_bounds(&ExperimentConfig::default(), dir.path(), counts).unwrap();
    assert_eq!(summary.iter().map(|s| s.trials).collect::<Vec<_>>(), vec![5, 4, 6, 3]);
    assert!(summary.iter().all(|s| s.violations == 0));
    let csv = String::from_utf8(read(&dir.path().join("bounds.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 18);
}
