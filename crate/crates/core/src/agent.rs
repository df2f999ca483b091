//! Offline actor-critic trained on the union of target data and corrected
//! source data.
//!
//! Critics: twin Q networks regressing onto
//! `y = r + γ(1 − done)·min_j Q⁻_j(s', π(s'))`, with Polyak-averaged targets.
//!
//! Actor: deterministic tanh policy maximizing
//! `η·Q₁(s, π(s)) − β·w(s, a)·‖π(s) − a‖²`, where
//! `η = 1 / max(mean|Q₁(s, a)|, 1e-6)` and `w = exp(clip(η·Q₁(s, a), −5, 5))`
//! is treated as a constant.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{symmetric_batch, NormStats, Transition, TransitionDataset};
use crate::envs::{self, BehaviorPolicy, EnvState, PointMassConfig};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, polyak_update, save_checkpoint, Adam, Mlp, OutputActivation, Tape};
use crate::target_models::NORM_STATS_FILE;

pub const ETA_FLOOR: f32 = 1e-6;
pub const WEIGHT_EXP_CLIP: f32 = 5.0;
pub const REFERENCE_EPISODES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f32,
    pub tau: f32,
    pub lr: f32,
    pub beta: f32,
    pub hidden: Vec<usize>,
    /// Total batch; half source, half target.
    pub batch_size: usize,
    pub gradient_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Number of trailing evaluations averaged into the final score.
    pub final_evals: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 5e-3,
            lr: 3e-4,
            beta: 5.0,
            hidden: vec![64, 64],
            batch_size: 256,
            gradient_steps: 50_000,
            eval_every: 5_000,
            eval_episodes: 10,
            final_evals: 3,
            log_every: 1_000,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("agent lr must be > 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta must be >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(Error::config("agent batch_size must be positive and even"));
        }
        if self.eval_every == 0 || self.log_every == 0 {
            return Err(Error::config("eval_every and log_every must be >= 1"));
        }
        if self.eval_episodes == 0 || self.final_evals == 0 {
            return Err(Error::config("eval_episodes and final_evals must be >= 1"));
        }
        Ok(())
    }
}

/// One mini-batch with states already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    pub dones: Vec<f32>,
}

impl Batch {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a Transition>, norm: &NormStats) -> Self {
        let mut b = Batch { n: 0, states: vec![], actions: vec![], rewards: vec![], next_states: vec![], dones: vec![] };
        for t in records {
            norm.normalize_into(&t.state, &mut b.states);
            norm.normalize_into(&t.next_state, &mut b.next_states);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
            b.n += 1;
        }
        b
    }
}

fn concat_rows(a: &[f32], da: usize, b: &[f32], db: usize, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * (da + db));
    for (ra, rb) in a.chunks_exact(da).zip(b.chunks_exact(db)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

pub fn td_targets(rewards: &[f32], dones: &[f32], q1_next: &[f32], q2_next: &[f32], gamma: f32) -> Vec<f32> {
    rewards
        .iter()
        .zip(dones)
        .zip(q1_next.iter().zip(q2_next))
        .map(|((&r, &d), (&q1, &q2))| r + gamma * (1.0 - d) * q1.min(q2))
        .collect()
}

pub fn eta(q_data: &[f32]) -> f32 {
    let mean_abs = q_data.iter().map(|q| q.abs() as f64).sum::<f64>() / q_data.len().max(1) as f64;
    1.0 / (mean_abs as f32).max(ETA_FLOOR)
}

pub fn bc_weights(q_data: &[f32], eta: f32) -> Vec<f32> {
    q_data.iter().map(|&q| (eta * q).clamp(-WEIGHT_EXP_CLIP, WEIGHT_EXP_CLIP).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub actor_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub norm: NormStats,
    pub cfg: AgentConfig,
    pub step: u64,
}

impl Agent {
    pub fn new(obs_dim: usize, act_dim: usize, norm: NormStats, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        if norm.dim() != obs_dim {
            return Err(Error::shape("normalization width differs from observation width"));
        }
        let sizes = |i: usize, o: usize| {
            let mut s = vec![i];
            s.extend_from_slice(&cfg.hidden);
            s.push(o);
            s
        };
        let actor = Mlp::new(&sizes(obs_dim, act_dim), OutputActivation::Tanh, cfg.seed ^ 0xA0)?;
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, 1), OutputActivation::Identity, cfg.seed ^ 0xC1)?;
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, 1), OutputActivation::Identity, cfg.seed ^ 0xC2)?;
        Ok(Self {
            actor_opt: Adam::for_net(&actor, cfg.lr),
            q1_opt: Adam::for_net(&q1, cfg.lr),
            q2_opt: Adam::for_net(&q2, cfg.lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            norm,
            cfg,
            step: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        let (o, a) = (self.obs_dim(), self.act_dim());
        if b.n == 0 {
            return Err(Error::usage("empty batch"));
        }
        if b.states.len() != b.n * o || b.next_states.len() != b.n * o || b.actions.len() != b.n * a || b.rewards.len() != b.n || b.dones.len() != b.n {
            return Err(Error::shape("batch fields disagree with agent dimensions"));
        }
        Ok(())
    }

    /// One TD step on both critics followed by the target update. Returns the
    /// mean of the two critic losses.
    pub fn critic_update(&mut self, b: &Batch) -> Result<f32> {
        self.check_batch(b)?;
        let (o, a, n) = (self.obs_dim(), self.act_dim(), b.n);
        let next_actions = self.actor.forward_batch(&b.next_states, n);
        let x_next = concat_rows(&b.next_states, o, &next_actions, a, n);
        let y = td_targets(
            &b.rewards,
            &b.dones,
            &self.q1_target.forward_batch(&x_next, n),
            &self.q2_target.forward_batch(&x_next, n),
            self.cfg.gamma,
        );
        let x = concat_rows(&b.states, o, &b.actions, a, n);
        let (l1, g1) = self.q1.loss_and_grad(&x, n, |q| crate::nn::loss::mse(q, &y, 1))?;
        let (l2, g2) = self.q2.loss_and_grad(&x, n, |q| crate::nn::loss::mse(q, &y, 1))?;
        if !(l1.is_finite() && l2.is_finite()) {
            return Err(Error::Numerical(format!("critic loss became non-finite at step {}", self.step)));
        }
        self.q1_opt.step(&mut self.q1, &g1)?;
        self.q2_opt.step(&mut self.q2, &g2)?;
        polyak_update(&mut self.q1_target, &self.q1, self.cfg.tau)?;
        polyak_update(&mut self.q2_target, &self.q2, self.cfg.tau)?;
        Ok(0.5 * (l1 + l2))
    }

    /// One step of the Q-weighted behavior-cloning actor objective. Critics
    /// are read but not updated.
    pub fn actor_update(&mut self, b: &Batch) -> Result<f32> {
        self.check_batch(b)?;
        let (o, a, n) = (self.obs_dim(), self.act_dim(), b.n);
        let q_data = self.q1.forward_batch(&concat_rows(&b.states, o, &b.actions, a, n), n);
        let eta = eta(&q_data);
        let w = bc_weights(&q_data, eta);

        let mut actor_tape = Tape::new();
        let pi = self.actor.forward_tape(&b.states, n, &mut actor_tape).to_vec();
        let x_pi = concat_rows(&b.states, o, &pi, a, n);
        let mut q_tape = Tape::new();
        let q_pi = self.q1.forward_tape(&x_pi, n, &mut q_tape).to_vec();
        let inv_n = 1.0 / n as f32;
        let dq = self.q1.backward(&q_tape, &vec![-eta * inv_n; n], None, true).expect("input gradient");

        let beta = self.cfg.beta;
        let mut loss = 0.0f64;
        let mut d_pi = vec![0.0f32; n * a];
        for i in 0..n {
            let mut sq = 0.0f32;
            for j in 0..a {
                let diff = pi[i * a + j] - b.actions[i * a + j];
                sq += diff * diff;
                d_pi[i * a + j] = dq[i * (o + a) + o + j] + 2.0 * beta * w[i] * diff * inv_n;
            }
            loss += -(eta * q_pi[i] - beta * w[i] * sq) as f64;
        }
        let loss = (loss / n as f64) as f32;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("actor loss became non-finite at step {}", self.step)));
        }
        let mut grads = vec![0.0f32; self.actor.num_params()];
        self.actor.backward(&actor_tape, &d_pi, Some(&mut grads), false);
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    /// Deterministic action for a raw (unnormalized) observation.
    pub fn act(&self, obs: &[f32]) -> Result<Vec<f32>> {
        actor_action(&self.actor, &self.norm, obs)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.actor, dir.join(ACTOR_FILE))?;
        save_checkpoint(&self.q1, dir.join("critic1.stcnet"))?;
        save_checkpoint(&self.q2, dir.join("critic2.stcnet"))?;
        save_checkpoint(&self.q1_target, dir.join("critic1_target.stcnet"))?;
        save_checkpoint(&self.q2_target, dir.join("critic2_target.stcnet"))?;
        std::fs::write(dir.join(NORM_STATS_FILE), self.norm.to_text())?;
        Ok(())
    }
}

pub const ACTOR_FILE: &str = "actor.stcnet";

/// Loads the actor and its observation normalization from a run directory.
pub fn load_actor(dir: impl AsRef<Path>) -> Result<(Mlp, NormStats)> {
    let dir = dir.as_ref();
    let actor = load_checkpoint(dir.join(ACTOR_FILE), OutputActivation::Tanh)?;
    let norm_path = dir.join(NORM_STATS_FILE);
    if !norm_path.exists() {
        return Err(Error::MissingFile(norm_path));
    }
    let norm = NormStats::from_text(&std::fs::read_to_string(norm_path)?)?;
    if norm.dim() != actor.input_dim() {
        return Err(Error::shape("actor input width differs from normalization width"));
    }
    Ok((actor, norm))
}

pub fn actor_action(actor: &Mlp, norm: &NormStats, obs: &[f32]) -> Result<Vec<f32>> {
    if obs.len() != norm.dim() {
        return Err(Error::shape(format!("observation has {} dims, expected {}", obs.len(), norm.dim())));
    }
    actor.forward(&norm.normalize(obs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub random: f64,
    pub expert: f64,
}

impl ReferenceScores {
    /// The expert barely improves on random play, so scores are meaningless.
    pub fn is_degenerate(&self) -> bool {
        self.expert - self.random <= 0.05 * self.random.abs().max(1.0)
    }
}

pub fn normalized_score(j: f64, refs: &ReferenceScores) -> Result<f64> {
    let span = refs.expert - refs.random;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::Numerical(format!(
            "degenerate reference scores: random {} and expert {} coincide",
            refs.random, refs.expert
        )));
    }
    Ok((j - refs.random) / span * 100.0)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn reference_cache() -> &'static Mutex<HashMap<String, ReferenceScores>> {
    static CACHE: OnceLock<Mutex<HashMap<String, ReferenceScores>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Uniform-random and noiseless scripted-expert mean returns over 20 episodes.
pub fn reference_scores(env: &PointMassConfig, seed: u64) -> Result<ReferenceScores> {
    env.validate()?;
    let key = format!("{env:?}/{seed}");
    if let Some(hit) = reference_cache().lock().expect("cache lock").get(&key) {
        return Ok(*hit);
    }
    let random = mean(&envs::mean_return(env, &BehaviorPolicy::UniformRandom, REFERENCE_EPISODES, seed));
    let expert = mean(&envs::mean_return(env, &BehaviorPolicy::scripted(env.clone(), 0.0), REFERENCE_EPISODES, seed));
    let refs = ReferenceScores { random, expert };
    reference_cache().lock().expect("cache lock").insert(key, refs);
    Ok(refs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub returns: Vec<f64>,
    pub normalized_score: f64,
    pub seed: u64,
}

/// Deterministic rollouts of the actor from seeded starts.
pub fn evaluate(
    actor: &Mlp,
    norm: &NormStats,
    env: &PointMassConfig,
    episodes: usize,
    seed: u64,
    refs: &ReferenceScores,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    if actor.input_dim() != envs::OBS_DIM || actor.output_dim() != envs::ACT_DIM {
        return Err(Error::shape("actor does not match the point-mass dimensions"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes as u64 {
        let start = envs::sample_start(env, &mut envs::episode_rng(seed, k));
        let mut failure = None;
        let ret = envs::episode_return(env, start, |s: &EnvState| match actor_action(actor, norm, &s.obs()) {
            Ok(a) => [a[0] as f64, a[1] as f64],
            Err(e) => {
                failure.get_or_insert(e);
                [0.0, 0.0]
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        returns.push(ret);
    }
    let mean_return = mean(&returns);
    Ok(EvalReport { mean_return, normalized_score: normalized_score(mean_return, refs)?, returns, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSetup {
    pub env: PointMassConfig,
    pub refs: ReferenceScores,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    /// Mean losses since the previous row; absent for the step-0 row.
    pub critic_loss: Option<f32>,
    pub actor_loss: Option<f32>,
    pub eval_return: Option<f64>,
    pub normalized_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<MetricRow>,
}

impl TrainLog {
    fn evals(&self) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.eval_return.is_some()).collect()
    }

    /// Mean over the last `k` evaluations after step 0 (falls back to the
    /// step-0 evaluation when there is no other).
    pub fn final_score(&self, k: usize) -> Option<(f64, f64)> {
        let evals = self.evals();
        let trained: Vec<_> = evals.iter().filter(|r| r.step > 0).collect();
        let pool: Vec<&MetricRow> = if trained.is_empty() { evals } else { trained.into_iter().copied().collect() };
        if pool.is_empty() {
            return None;
        }
        let tail = &pool[pool.len().saturating_sub(k)..];
        let ret = tail.iter().map(|r| r.eval_return.unwrap()).sum::<f64>() / tail.len() as f64;
        let ns = tail.iter().map(|r| r.normalized_score.unwrap()).sum::<f64>() / tail.len() as f64;
        Some((ret, ns))
    }

    pub fn to_csv(&self) -> String {
        let opt32 = |x: Option<f32>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let opt64 = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let mut out = String::from("step,critic_loss,actor_loss,eval_return,normalized_score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                opt32(r.critic_loss),
                opt32(r.actor_loss),
                opt64(r.eval_return),
                opt64(r.normalized_score)
            ));
        }
        out
    }
}

/// Phase II: `gradient_steps` iterations of symmetric sampling, critic
/// update and actor update, with periodic evaluation when `eval` is given.
pub fn train_agent(
    corrected_src: &TransitionDataset,
    tar: &TransitionDataset,
    norm: NormStats,
    cfg: &AgentConfig,
    eval: Option<&EvalSetup>,
) -> Result<(Agent, TrainLog)> {
    if corrected_src.is_empty() || tar.is_empty() {
        return Err(Error::config("training needs non-empty source and target datasets"));
    }
    if corrected_src.obs_dim() != tar.obs_dim() || corrected_src.act_dim() != tar.act_dim() {
        return Err(Error::shape("source and target datasets differ in dimensions"));
    }
    let mut agent = Agent::new(tar.obs_dim(), tar.act_dim(), norm, cfg.clone())?;
    let mut log = TrainLog::default();
    if cfg.gradient_steps == 0 {
        return Ok((agent, log));
    }
    let run_eval = |agent: &Agent| -> Result<Option<EvalReport>> {
        eval.map(|e| evaluate(&agent.actor, &agent.norm, &e.env, cfg.eval_episodes, e.seed, &e.refs)).transpose()
    };
    if let Some(rep) = run_eval(&agent)? {
        log.rows.push(MetricRow {
            step: 0,
            critic_loss: None,
            actor_loss: None,
            eval_return: Some(rep.mean_return),
            normalized_score: Some(rep.normalized_score),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut c_sum, mut a_sum, mut count) = (0.0f64, 0.0f64, 0usize);
    for step in 1..=cfg.gradient_steps as u64 {
        let (src_half, tar_half) = symmetric_batch(corrected_src, tar, cfg.batch_size, &mut rng)?;
        let batch = Batch::from_records(src_half.into_iter().chain(tar_half), &agent.norm);
        c_sum += agent.critic_update(&batch)? as f64;
        a_sum += agent.actor_update(&batch)? as f64;
        count += 1;
        agent.step = step;

        let log_now = step % cfg.log_every as u64 == 0;
        let eval_now = step % cfg.eval_every as u64 == 0 || step == cfg.gradient_steps as u64;
        if log_now || eval_now {
            let report = if eval_now { run_eval(&agent)? } else { None };
            log.rows.push(MetricRow {
                step,
                critic_loss: Some((c_sum / count as f64) as f32),
                actor_loss: Some((a_sum / count as f64) as f32),
                eval_return: report.as_ref().map(|r| r.mean_return),
                normalized_score: report.as_ref().map(|r| r.normalized_score),
            });
            (c_sum, a_sum, count) = (0.0, 0.0, 0);
        }
    }
    Ok((agent, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainTag;

    #[test]
    fn td_target_arithmetic() {
        let y = td_targets(&[1.0, 1.0], &[0.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], 0.99);
        assert!((y[0] - 2.98).abs() < 1e-6);
        assert_eq!(y[1], 1.0);
    }

    #[test]
    fn eta_and_weights() {
        assert_eq!(eta(&[1.0, -3.0, 2.0]), 0.5);
        assert_eq!(eta(&[0.0, 0.0]), 1e6);
        let w = bc_weights(&[0.0, 100.0, -100.0], 1.0);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 5f32.exp()).abs() < 1e-3);
        assert!((w[2] - (-5f32).exp()).abs() < 1e-9);
    }

    #[test]
    fn normalized_score_examples() {
        let refs = ReferenceScores { random: -280.18, expert: 9509.15 };
        assert!((normalized_score(4614.485, &refs).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(normalized_score(refs.expert, &refs).unwrap(), 100.0);
        assert_eq!(normalized_score(refs.random, &refs).unwrap(), 0.0);
        let flat = ReferenceScores { random: 3.0, expert: 3.0 };
        assert!(normalized_score(1.0, &flat).is_err());
        assert!(flat.is_degenerate());
    }

    fn toy_dataset(tag: DomainTag, n: usize) -> TransitionDataset {
        let records = (0..n)
            .map(|i| {
                let x = (i as f32 * 0.1).sin();
                Transition {
                    state: vec![x, -x, 0.5 * x, 0.0],
                    action: vec![x.clamp(-1.0, 1.0), 0.2],
                    reward: -x.abs(),
                    next_state: vec![x * 0.9, -x * 0.9, 0.4 * x, 0.0],
                    done: i % 50 == 49,
                }
            })
            .collect();
        TransitionDataset::from_records(4, 2, tag, records).unwrap()
    }

    fn small_cfg() -> AgentConfig {
        AgentConfig { hidden: vec![16, 16], batch_size: 32, gradient_steps: 40, eval_every: 20, log_every: 10, eval_episodes: 2, ..Default::default() }
    }

    #[test]
    fn zero_gradient_critic_is_stationary() {
        let mut agent = Agent::new(4, 2, NormStats::identity(4), small_cfg()).unwrap();
        let c = 3.0f32;
        for net in [&mut agent.q1, &mut agent.q2, &mut agent.q1_target, &mut agent.q2_target] {
            net.params_mut().iter_mut().for_each(|p| *p = 0.0);
            let last = net.num_layers() - 1;
            net.biases_mut(last)[0] = c;
        }
        let batch = Batch::from_records(toy_dataset(DomainTag::Target, 8).records(), &NormStats::identity(4));
        let batch = Batch { rewards: vec![c * (1.0 - 0.99); 8], dones: vec![0.0; 8], ..batch };
        let before = agent.q1.clone();
        let loss = agent.critic_update(&batch).unwrap();
        assert!(loss.abs() < 1e-10);
        assert_eq!(agent.q1.params(), before.params());
    }

    #[test]
    fn actor_update_leaves_critics_alone() {
        let mut agent = Agent::new(4, 2, NormStats::identity(4), small_cfg()).unwrap();
        let batch = Batch::from_records(toy_dataset(DomainTag::Target, 16).records(), &NormStats::identity(4));
        let (q1, q2) = (agent.q1.clone(), agent.q2.clone());
        let actor = agent.actor.clone();
        agent.actor_update(&batch).unwrap();
        assert_eq!((&agent.q1, &agent.q2), (&q1, &q2));
        assert_ne!(agent.actor.params(), actor.params());
    }

    // Loss value must agree with a direct evaluation of the objective.
    #[test]
    fn actor_loss_value_matches_formula() {
        let mut agent = Agent::new(4, 2, NormStats::identity(4), small_cfg()).unwrap();
        let batch = Batch::from_records(toy_dataset(DomainTag::Target, 10).records(), &NormStats::identity(4));
        let q_data = agent.q1.forward_batch(&concat_rows(&batch.states, 4, &batch.actions, 2, 10), 10);
        let e = eta(&q_data);
        let w = bc_weights(&q_data, e);
        let pi = agent.actor.forward_batch(&batch.states, 10);
        let q_pi = agent.q1.forward_batch(&concat_rows(&batch.states, 4, &pi, 2, 10), 10);
        let mut expect = 0.0;
        for i in 0..10 {
            let sq: f32 = (0..2).map(|j| (pi[i * 2 + j] - batch.actions[i * 2 + j]).powi(2)).sum();
            expect += -(e * q_pi[i] - agent.cfg.beta * w[i] * sq);
        }
        let got = agent.actor_update(&batch).unwrap();
        assert!((got - expect / 10.0).abs() < 1e-4 * expect.abs().max(1.0));
    }

    #[test]
    fn zero_steps_returns_untrained_agent() {
        let ds = toy_dataset(DomainTag::Target, 64);
        let cfg = AgentConfig { gradient_steps: 0, ..small_cfg() };
        let (agent, log) = train_agent(&ds, &ds, NormStats::identity(4), &cfg, None).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(agent.step, 0);
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let src = toy_dataset(DomainTag::Corrected, 100);
        let tar = toy_dataset(DomainTag::Target, 60);
        let env = PointMassConfig::default();
        let setup = EvalSetup { refs: reference_scores(&env, 3).unwrap(), env, seed: 3 };
        let run = || train_agent(&src, &tar, NormStats::identity(4), &small_cfg(), Some(&setup)).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a.actor.params(), b.actor.params());
        let steps: Vec<u64> = la.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 30, 40]);
        assert_eq!(la.rows.iter().filter(|r| r.eval_return.is_some()).count(), 3);
        assert!(la.to_csv().starts_with("step,critic_loss,actor_loss,eval_return,normalized_score\n0,,,"));
        assert!(la.final_score(3).is_some());
    }

    #[test]
    fn actor_outputs_are_bounded() {
        let agent = Agent::new(4, 2, NormStats::identity(4), small_cfg()).unwrap();
        let a = agent.act(&[100.0, -100.0, 50.0, 3.0]).unwrap();
        assert!(a.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn gravity_reference_scores_are_ordered_and_stable() {
        let env = PointMassConfig::default().shifted(envs::ShiftKind::Gravity);
        let a = reference_scores(&env, 1).unwrap();
        assert!(a.expert > a.random);
        assert!(!a.is_degenerate());
        assert_eq!(a, reference_scores(&env, 1).unwrap());
    }

    #[test]
    fn inert_actions_give_degenerate_references() {
        let env = PointMassConfig { thrust_gain: 0.0, ..Default::default() };
        let refs = reference_scores(&env, 2).unwrap();
        assert!(refs.is_degenerate(), "{refs:?}");
    }

    #[test]
    fn save_and_load_actor() {
        let agent = Agent::new(4, 2, NormStats { mean: vec![1.0; 4], std: vec![2.0; 4] }, small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path()).unwrap();
        let (actor, norm) = load_actor(dir.path()).unwrap();
        assert_eq!(actor, agent.actor);
        assert_eq!(norm, agent.norm);
    }
}
