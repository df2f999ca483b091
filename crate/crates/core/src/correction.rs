//! Source transition correction and selective acceptance.
//!
//! For every source record `(s, a, r, s')` the frozen target models propose
//! `â = f_inv(s, s')` and a first-order reward `r̂ = r + α·clip(ĝᵀ(â − a))`
//! with `ĝ` the unit reward gradient at `(s, a)`. The proposal replaces the
//! record only if the forward model finds it strictly more target-like:
//! `ε_corr < λ·ε_orig`.

use std::io::Write;
use std::path::Path;

use crate::data::{DomainTag, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::target_models::TargetModels;

/// Gradients shorter than this are treated as zero.
pub const GRAD_EPS: f64 = 1e-8;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionConfig {
    pub alpha: f64,
    pub lambda: f64,
    /// Symmetric bound on the normalized-gradient inner product.
    pub clip: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { alpha: 0.5, lambda: 1.0, clip: 1.0 }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::usage(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        check_lambda(self.lambda)?;
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::usage(format!("clip bound must be > 0, got {}", self.clip)));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::usage(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Clipped inner product of the unit gradient with the action displacement.
pub fn taylor_step(grad: &[f32], action: &[f32], corrected: &[f32], clip: f64) -> f64 {
    let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
    if norm < GRAD_EPS {
        return 0.0;
    }
    let dot: f64 = grad
        .iter()
        .zip(action.iter().zip(corrected))
        .map(|(&g, (&a, &c))| g as f64 * (c as f64 - a as f64))
        .sum();
    (dot / norm).clamp(-clip, clip)
}

pub fn corrected_reward(reward: f32, alpha: f64, step: f64) -> f32 {
    (reward as f64 + alpha * step) as f32
}

/// The acceptance rule. Ties keep the original.
pub fn accepts(eps_orig: f64, eps_corr: f64, lambda: f64) -> bool {
    eps_corr < lambda * eps_orig
}

pub fn correct_action(models: &TargetModels, s: &[f32], s_next: &[f32]) -> Result<Vec<f32>> {
    models.predict_actions(s, s_next, 1)
}

pub fn correct_reward(
    models: &TargetModels,
    s: &[f32],
    a: &[f32],
    a_hat: &[f32],
    r: f32,
    alpha: f64,
) -> Result<f32> {
    if a_hat.len() != a.len() {
        return Err(Error::shape(format!("corrected action has {} dims, action has {}", a_hat.len(), a.len())));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::usage(format!("alpha must be >= 0, got {alpha}")));
    }
    let grad = models.reward_action_gradients(s, a, 1)?;
    Ok(corrected_reward(r, alpha, taylor_step(&grad, a, a_hat, 1.0)))
}

fn squared_error(pred: &[f32], s: &[f32], s_next: &[f32]) -> f64 {
    pred.iter()
        .zip(s.iter().zip(s_next))
        .map(|(&p, (&x, &y))| (p as f64 - (y as f64 - x as f64)).powi(2))
        .sum()
}

/// `(‖f_fwd(s, a) − Δs‖², ‖f_fwd(s, â) − Δs‖²)`.
pub fn dynamics_discrepancies(
    models: &TargetModels,
    s: &[f32],
    a: &[f32],
    a_hat: &[f32],
    s_next: &[f32],
) -> Result<(f64, f64)> {
    if s_next.len() != s.len() {
        return Err(Error::shape("state and next state differ in length"));
    }
    let orig = models.predict_deltas(s, a, 1)?;
    let corr = models.predict_deltas(s, a_hat, 1)?;
    Ok((squared_error(&orig, s, s_next), squared_error(&corr, s, s_next)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub original: Transition,
    pub corrected_action: Vec<f32>,
    pub corrected_reward: f32,
    pub eps_orig: f64,
    pub eps_corr: f64,
    pub accepted: bool,
}

impl CorrectionOutcome {
    pub fn chosen(&self) -> Transition {
        if self.accepted {
            Transition {
                action: self.corrected_action.clone(),
                reward: self.corrected_reward,
                ..self.original.clone()
            }
        } else {
            self.original.clone()
        }
    }
}

pub fn select(
    original: Transition,
    a_hat: Vec<f32>,
    r_hat: f32,
    eps_orig: f64,
    eps_corr: f64,
    lambda: f64,
) -> Result<CorrectionOutcome> {
    check_lambda(lambda)?;
    if a_hat.len() != original.action.len() {
        return Err(Error::shape("corrected action dimension differs from the original"));
    }
    Ok(CorrectionOutcome {
        accepted: accepts(eps_orig, eps_corr, lambda),
        original,
        corrected_action: a_hat,
        corrected_reward: r_hat,
        eps_orig,
        eps_corr,
    })
}

/// λ- and α-independent per-record quantities, computed once so that sweeps
/// over either only redo the cheap selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub act_dim: usize,
    /// Row-major `â`, one row per source record.
    pub actions: Vec<f32>,
    /// Clipped unit-gradient step; `r̂ = r + α·step`.
    pub steps: Vec<f64>,
    pub eps_orig: Vec<f64>,
    pub eps_corr: Vec<f64>,
}

impl Candidates {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn corrected_action(&self, i: usize) -> &[f32] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

pub fn compute_candidates(models: &TargetModels, src: &TransitionDataset, clip: f64) -> Result<Candidates> {
    if src.is_empty() {
        return Err(Error::usage("cannot correct an empty source dataset"));
    }
    if src.obs_dim() != models.obs_dim() || src.act_dim() != models.act_dim() {
        return Err(Error::shape(format!(
            "dataset is {}/{}-dimensional, models expect {}/{}",
            src.obs_dim(),
            src.act_dim(),
            models.obs_dim(),
            models.act_dim()
        )));
    }
    let (o, a) = (src.obs_dim(), src.act_dim());
    let mut out = Candidates {
        act_dim: a,
        actions: Vec::with_capacity(src.len() * a),
        steps: Vec::with_capacity(src.len()),
        eps_orig: Vec::with_capacity(src.len()),
        eps_corr: Vec::with_capacity(src.len()),
    };
    for chunk in src.records().chunks(CHUNK) {
        let n = chunk.len();
        let s: Vec<f32> = chunk.iter().flat_map(|t| t.state.iter().copied()).collect();
        let sn: Vec<f32> = chunk.iter().flat_map(|t| t.next_state.iter().copied()).collect();
        let act: Vec<f32> = chunk.iter().flat_map(|t| t.action.iter().copied()).collect();
        let a_hat = models.predict_actions(&s, &sn, n)?;
        let grads = models.reward_action_gradients(&s, &act, n)?;
        let d_orig = models.predict_deltas(&s, &act, n)?;
        let d_corr = models.predict_deltas(&s, &a_hat, n)?;
        for i in 0..n {
            let (rs, ra) = (i * o..(i + 1) * o, i * a..(i + 1) * a);
            out.steps.push(taylor_step(&grads[ra.clone()], &act[ra.clone()], &a_hat[ra.clone()], clip));
            out.eps_orig.push(squared_error(&d_orig[rs.clone()], &s[rs.clone()], &sn[rs.clone()]));
            out.eps_corr.push(squared_error(&d_corr[rs.clone()], &s[rs.clone()], &sn[rs]));
        }
        out.actions.extend_from_slice(&a_hat);
    }
    if out.actions.iter().any(|x| !x.is_finite()) || out.eps_corr.iter().chain(&out.eps_orig).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite correction candidate".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub dataset: TransitionDataset,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
}

/// Builds the corrected dataset: record `i` is the corrected proposal when
/// accepted and the untouched source record otherwise.
pub fn apply_candidates(
    src: &TransitionDataset,
    cand: &Candidates,
    alpha: f64,
    lambda: f64,
) -> Result<CorrectionResult> {
    CorrectionConfig { alpha, lambda, clip: 1.0 }.validate()?;
    if cand.len() != src.len() {
        return Err(Error::shape("candidate count differs from dataset size"));
    }
    let mut records = Vec::with_capacity(src.len());
    let mut accepted = Vec::with_capacity(src.len());
    for (i, t) in src.records().iter().enumerate() {
        let ok = accepts(cand.eps_orig[i], cand.eps_corr[i], lambda);
        accepted.push(ok);
        records.push(if ok {
            Transition {
                action: cand.corrected_action(i).to_vec(),
                reward: corrected_reward(t.reward, alpha, cand.steps[i]),
                ..t.clone()
            }
        } else {
            t.clone()
        });
    }
    let rate = accepted.iter().filter(|&&x| x).count() as f64 / src.len() as f64;
    let dataset = TransitionDataset::from_records(src.obs_dim(), src.act_dim(), DomainTag::Corrected, records)?;
    Ok(CorrectionResult { dataset, accepted, acceptance_rate: rate })
}

pub fn correct_dataset(
    models: &TargetModels,
    src: &TransitionDataset,
    cfg: &CorrectionConfig,
) -> Result<(CorrectionResult, Candidates)> {
    cfg.validate()?;
    let cand = compute_candidates(models, src, cfg.clip)?;
    Ok((apply_candidates(src, &cand, cfg.alpha, cfg.lambda)?, cand))
}

/// Sidecar listing `index,eps_orig,eps_corr,accepted` per record.
pub fn write_corrections_csv(path: impl AsRef<Path>, cand: &Candidates, accepted: &[bool]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "index,eps_orig,eps_corr,accepted")?;
    for (i, ok) in accepted.iter().enumerate() {
        writeln!(out, "{i},{:e},{:e},{}", cand.eps_orig[i], cand.eps_corr[i], u8::from(*ok))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NormStats;
    use crate::nn::{Mlp, OutputActivation};

    #[test]
    fn taylor_arithmetic() {
        let step = taylor_step(&[0.6, 0.8], &[0.0, 0.0], &[0.1, -0.1], 1.0);
        let r = corrected_reward(1.0, 0.5, step);
        assert!((r - 0.99).abs() < 1e-6);
    }

    #[test]
    fn unnormalized_gradient_gives_same_step() {
        let a = taylor_step(&[0.6, 0.8], &[0.2, 0.1], &[0.5, -0.3], 1.0);
        let b = taylor_step(&[6.0, 8.0], &[0.2, 0.1], &[0.5, -0.3], 1.0);
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn zero_displacement_and_zero_alpha_keep_reward() {
        let step = taylor_step(&[0.3, -2.0], &[0.4, 0.4], &[0.4, 0.4], 1.0);
        assert_eq!(corrected_reward(0.7, 2.0, step), 0.7);
        let step = taylor_step(&[0.3, -2.0], &[0.4, 0.4], &[-1.0, 1.0], 1.0);
        assert_eq!(corrected_reward(0.7, 0.0, step), 0.7);
    }

    #[test]
    fn flat_gradient_is_ignored_and_steps_are_clipped() {
        assert_eq!(taylor_step(&[1e-12, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1.0), 0.0);
        assert_eq!(taylor_step(&[1.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0], 1.0), 1.0);
    }

    #[test]
    fn strict_acceptance() {
        assert!(accepts(0.5, 0.4, 1.0));
        assert!(!accepts(0.5, 0.5, 1.0));
        assert!(!accepts(0.5, 0.0, 0.0));
        assert!(!accepts(0.0, 0.0, 1e9));
    }

    #[test]
    fn negative_lambda_is_a_usage_error() {
        let t = Transition { state: vec![0.0], action: vec![0.0], reward: 0.0, next_state: vec![0.0], done: false };
        assert!(matches!(select(t, vec![0.0], 0.0, 1.0, 0.5, -1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn chosen_record_follows_the_verdict() {
        let t = Transition { state: vec![1.0], action: vec![0.2], reward: 3.0, next_state: vec![2.0], done: true };
        let yes = select(t.clone(), vec![-0.4], 2.5, 1.0, 0.1, 1.0).unwrap();
        let chosen = yes.chosen();
        assert_eq!((chosen.action, chosen.reward, chosen.done), (vec![-0.4], 2.5, true));
        assert_eq!(chosen.next_state, t.next_state);
        let no = select(t.clone(), vec![-0.4], 2.5, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(no.chosen(), t);
    }

    // One obs dim, one act dim. Inverse always outputs tanh(0) = 0; forward is
    // the linear map Δs = 2·a; reward is r = 3·a.
    fn hand_models() -> TargetModels {
        TargetModels {
            inverse: Mlp::from_params(&[2, 1], OutputActivation::Tanh, vec![0.0, 0.0, 0.0]).unwrap(),
            forward: Mlp::from_params(&[2, 1], OutputActivation::Identity, vec![0.0, 2.0, 0.0]).unwrap(),
            reward: Mlp::from_params(&[2, 1], OutputActivation::Identity, vec![0.0, 3.0, 0.0]).unwrap(),
            norm: NormStats::identity(1),
        }
    }

    #[test]
    fn hand_network_discrepancies() {
        let m = hand_models();
        assert_eq!(correct_action(&m, &[1.0], &[5.0]).unwrap(), vec![0.0]);
        // Δs = 0.5; f(s, 0.5) = 1.0 → (0.5)²; f(s, 0) = 0 → 0.25.
        let (orig, corr) = dynamics_discrepancies(&m, &[1.0], &[0.5], &[0.0], &[1.5]).unwrap();
        assert!((orig - 0.25).abs() < 1e-12);
        assert!((corr - 0.25).abs() < 1e-12);
        let (orig, corr) = dynamics_discrepancies(&m, &[0.0], &[0.5], &[0.25], &[0.5]).unwrap();
        assert!((orig - 0.25).abs() < 1e-12);
        assert!(corr.abs() < 1e-12);
        // Gradient (3) is positive, displacement −0.5: r̂ = 1 − 0.5·0.5.
        let r = correct_reward(&m, &[0.0], &[0.5], &[0.0], 1.0, 0.5).unwrap();
        assert!((r - 0.75).abs() < 1e-6);
    }

    fn tiny_source() -> TransitionDataset {
        let records = (0..20)
            .map(|i| {
                let a = (i as f32 / 10.0) - 1.0;
                Transition { state: vec![0.0], action: vec![a], reward: a, next_state: vec![0.3 * i as f32], done: i == 19 }
            })
            .collect();
        TransitionDataset::from_records(1, 1, DomainTag::Source, records).unwrap()
    }

    #[test]
    fn lambda_zero_copies_the_source() {
        let src = tiny_source();
        let (res, _) = correct_dataset(&hand_models(), &src, &CorrectionConfig { lambda: 0.0, ..Default::default() }).unwrap();
        assert_eq!(res.acceptance_rate, 0.0);
        assert_eq!(res.dataset.to_bytes(), src.to_bytes());
        assert_eq!(res.dataset.tag(), DomainTag::Corrected);
    }

    #[test]
    fn huge_lambda_accepts_everything_with_positive_error() {
        let src = tiny_source();
        let (res, cand) = correct_dataset(&hand_models(), &src, &CorrectionConfig { lambda: 1e30, ..Default::default() }).unwrap();
        let positive = cand.eps_orig.iter().filter(|&&e| e > 0.0).count();
        assert_eq!(positive, src.len());
        assert_eq!(res.acceptance_rate, 1.0);
        assert_eq!(res.dataset.len(), src.len());
    }

    #[test]
    fn correction_is_idempotent() {
        let src = tiny_source();
        let cfg = CorrectionConfig::default();
        let (a, _) = correct_dataset(&hand_models(), &src, &cfg).unwrap();
        let (b, _) = correct_dataset(&hand_models(), &src, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let records = vec![Transition { state: vec![0.0, 1.0], action: vec![0.0], reward: 0.0, next_state: vec![0.0, 1.0], done: false }];
        let src = TransitionDataset::from_records(2, 1, DomainTag::Source, records).unwrap();
        assert!(matches!(correct_dataset(&hand_models(), &src, &CorrectionConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn sidecar_csv_lists_every_record() {
        let src = tiny_source();
        let (res, cand) = correct_dataset(&hand_models(), &src, &CorrectionConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrections.csv");
        write_corrections_csv(&path, &cand, &res.accepted).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), src.len() + 1);
        assert!(text.starts_with("index,eps_orig,eps_corr,accepted\n0,"));
    }
}
