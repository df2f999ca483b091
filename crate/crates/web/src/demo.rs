//! Plain-Rust halves of the exported operations, testable off the browser.

use stc_core::config::ExperimentConfig;
use stc_core::correction::apply_candidates;
use stc_core::diagnostics::{distribution_report, pair_actions};
use stc_core::envs::{episode_rng, sample_start, step, EnvState, PointMassConfig, ScriptedController};
use stc_core::pipeline;
use stc_core::theory::{trials, BoundReport};
use stc_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Interleaved `x, y` per visited state, start included.
    pub positions: Vec<f64>,
    pub total_return: f64,
    pub goal: [f64; 2],
    pub bound: f64,
}

/// One episode of the scripted controller in an environment whose gravity is
/// scaled by `gravity_scale`, while the controller compensates for
/// `believed_scale`. A mismatch shows up as a steady altitude offset.
pub fn rollout(gravity_scale: f64, believed_scale: f64, noise: f64, seed: u64) -> Result<Trajectory> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Usage(format!("noise must be >= 0, got {noise}")));
    }
    let base = PointMassConfig::default();
    let env = PointMassConfig { gravity_scale, ..base.clone() };
    let believed = PointMassConfig { gravity_scale: believed_scale, ..base };
    env.validate()?;
    believed.validate()?;
    let ctl = ScriptedController::new(believed);
    let mut rng = episode_rng(seed, 0);
    let mut state: EnvState = sample_start(&env, &mut rng);
    let mut positions = vec![state.pos[0], state.pos[1]];
    let mut total_return = 0.0;
    loop {
        let out = step(&env, &state, ctl.act(&state, noise, &mut rng));
        total_return += out.reward;
        state = out.next;
        positions.extend_from_slice(&state.pos);
        if out.done {
            break;
        }
    }
    Ok(Trajectory { positions, total_return, goal: env.goal, bound: env.pos_bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundBatch {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub violations: usize,
}

/// `trials` randomized checks of one bound: "1", "2", "3" or "telescoping".
pub fn bound_batch(which: &str, count: usize, seed: u64) -> Result<BoundBatch> {
    if count == 0 || count > 5000 {
        return Err(Error::Usage("trial count must be in 1..=5000".into()));
    }
    let one = |i: usize| -> Result<BoundReport> {
        let s = pipeline::derive_seed(seed, i as u64);
        match which {
            "1" => trials::theorem1(s),
            "2" => trials::theorem2(s),
            "3" => Ok(trials::theorem3(s, trials::THEOREM3_SAMPLE_SIZES[i % 3], pipeline::THEOREM3_DELTA)?.report),
            "telescoping" => trials::telescoping(s),
            other => Err(Error::Usage(format!("unknown check {other:?}"))),
        }
    };
    let reports = (0..count).map(one).collect::<Result<Vec<_>>>()?;
    Ok(BoundBatch {
        lhs: reports.iter().map(|r| r.lhs).collect(),
        rhs: reports.iter().map(|r| r.rhs).collect(),
        violations: reports.iter().filter(|r| !r.holds).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preview {
    pub acceptance_rate: f64,
    /// Vertical action axis: the one gravity acts on.
    pub grid: Vec<f64>,
    pub kde_source: Vec<f64>,
    pub kde_corrected: Vec<f64>,
    pub kde_target: Vec<f64>,
    pub w1_source: Vec<f64>,
    pub w1_corrected: Vec<f64>,
}

/// Small end-to-end correction: datasets, Phase I models, selection at λ and
/// the action-distribution comparison. Sized to finish in a few seconds.
pub fn correction_preview(target_gravity_scale: f64, lambda: f64, seed: u64) -> Result<Preview> {
    let mut cfg = ExperimentConfig::default();
    for kv in ["data.source_size=4000", "data.target_size=1000", "pretrain.steps=3000", "pretrain.hidden=32x32"] {
        cfg.apply_override(kv)?;
    }
    cfg.apply_override(&format!("env.target_gravity_scale={target_gravity_scale}"))?;
    cfg.apply_override(&format!("correction.lambda={lambda}"))?;
    cfg.apply_override(&format!("run.seed={seed}"))?;
    cfg.validate()?;
    let prep = pipeline::prepare(&cfg, false)?;
    let corrected = apply_candidates(&prep.source, &prep.candidates, cfg.alphas[0], lambda)?;
    let triples = pair_actions(&prep.source, &corrected.dataset, &prep.target)?;
    let report = distribution_report(&triples)?;
    let y = &report.dims[1];
    Ok(Preview {
        acceptance_rate: corrected.acceptance_rate,
        grid: y.grid.clone(),
        kde_source: y.kde[0].clone(),
        kde_corrected: y.kde[1].clone(),
        kde_target: y.kde[2].clone(),
        w1_source: report.dims.iter().map(|d| d.w1_source_target).collect(),
        w1_corrected: report.dims.iter().map(|d| d.w1_corrected_target).collect(),
    })
}
