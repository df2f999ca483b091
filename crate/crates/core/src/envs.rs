//! 2-D point mass with gravity, linear drag and per-axis thrust, plus the
//! scripted PD controllers that generate the offline datasets.
//!
//! Dynamics (semi-implicit Euler, `dt` seconds per step):
//!
//! ```text
//! v' = (1 - μ·dt)·v + dt·(gain ⊙ a + (0, -g))
//! p' = clip(p + dt·v')
//! r  = -‖p' - goal‖ - c·‖a‖²
//! ```
//!
//! Source and target domains differ only in `gravity_scale`,
//! `friction_scale` or `gain_scale`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DomainTag, Transition, TransitionDataset};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 4;
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassConfig {
    pub gravity_scale: f64,
    pub friction_scale: f64,
    pub gain_scale: [f64; 2],
    /// Base gravitational acceleration before scaling.
    pub gravity: f64,
    /// Base linear drag coefficient μ before scaling.
    pub friction: f64,
    /// Base thrust per unit action before scaling.
    pub thrust_gain: f64,
    pub dt: f64,
    pub episode_len: usize,
    pub goal: [f64; 2],
    pub pos_bound: f64,
    pub vel_bound: f64,
    pub action_penalty: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            gravity_scale: 1.0,
            friction_scale: 1.0,
            gain_scale: [1.0, 1.0],
            gravity: 9.8,
            friction: 1.0,
            thrust_gain: 12.0,
            dt: 0.05,
            episode_len: 200,
            goal: [0.0, 3.0],
            pos_bound: 5.0,
            vel_bound: 10.0,
            action_penalty: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Gravity,
    Friction,
    Morphology,
}

impl ShiftKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gravity" => Ok(Self::Gravity),
            "friction" => Ok(Self::Friction),
            "morphology" => Ok(Self::Morphology),
            other => Err(Error::config(format!("unknown shift kind {other:?}"))),
        }
    }
}

impl PointMassConfig {
    /// Target-domain variant of `self` under a shift family's default magnitude.
    pub fn shifted(&self, kind: ShiftKind) -> Self {
        let mut cfg = self.clone();
        match kind {
            ShiftKind::Gravity => cfg.gravity_scale = 0.5,
            ShiftKind::Friction => cfg.friction_scale = 0.5,
            ShiftKind::Morphology => cfg.gain_scale = [0.5, 1.0],
        }
        cfg
    }

    pub fn g(&self) -> f64 {
        self.gravity * self.gravity_scale
    }

    pub fn mu(&self) -> f64 {
        self.friction * self.friction_scale
    }

    pub fn gain(&self) -> [f64; 2] {
        [self.thrust_gain * self.gain_scale[0], self.thrust_gain * self.gain_scale[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gravity_scale,
            self.friction_scale,
            self.gain_scale[0],
            self.gain_scale[1],
            self.gravity,
            self.friction,
            self.thrust_gain,
            self.dt,
            self.pos_bound,
            self.vel_bound,
            self.action_penalty,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("environment parameters must be finite"));
        }
        if self.gravity_scale <= 0.0 {
            return Err(Error::config("gravity_scale must be > 0"));
        }
        if self.friction_scale < 0.0 || self.friction < 0.0 {
            return Err(Error::config("friction must be >= 0"));
        }
        if self.gain_scale.iter().any(|&g| g <= 0.0) {
            return Err(Error::config("gain_scale components must be > 0"));
        }
        if self.thrust_gain < 0.0 {
            return Err(Error::config("thrust_gain must be >= 0"));
        }
        if self.dt <= 0.0 {
            return Err(Error::config("dt must be > 0"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("episode_len must be >= 1"));
        }
        if self.pos_bound <= 0.0 || self.vel_bound <= 0.0 {
            return Err(Error::config("state bounds must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub t: usize,
}

impl EnvState {
    pub fn new(pos: [f64; 2], vel: [f64; 2]) -> Self {
        Self { pos, vel, t: 0 }
    }

    pub fn obs(&self) -> Vec<f32> {
        vec![self.pos[0] as f32, self.pos[1] as f32, self.vel[0] as f32, self.vel[1] as f32]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
}

pub fn clip_action(a: [f64; 2]) -> [f64; 2] {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

pub fn step(cfg: &PointMassConfig, state: &EnvState, action: [f64; 2]) -> StepOutcome {
    let a = clip_action(action);
    let gain = cfg.gain();
    let damp = 1.0 - cfg.mu() * cfg.dt;
    let accel = [gain[0] * a[0], gain[1] * a[1] - cfg.g()];
    let mut vel = [0.0; 2];
    let mut pos = [0.0; 2];
    for i in 0..2 {
        vel[i] = (damp * state.vel[i] + cfg.dt * accel[i]).clamp(-cfg.vel_bound, cfg.vel_bound);
        pos[i] = (state.pos[i] + cfg.dt * vel[i]).clamp(-cfg.pos_bound, cfg.pos_bound);
    }
    let dist = ((pos[0] - cfg.goal[0]).powi(2) + (pos[1] - cfg.goal[1]).powi(2)).sqrt();
    let reward = -dist - cfg.action_penalty * (a[0] * a[0] + a[1] * a[1]);
    let t = state.t + 1;
    StepOutcome { next: EnvState { pos, vel, t }, reward, done: t >= cfg.episode_len }
}

/// Uniform position over the box, velocity uniform in `[-1, 1]²`.
pub fn sample_start<R: Rng + ?Sized>(cfg: &PointMassConfig, rng: &mut R) -> EnvState {
    let b = cfg.pos_bound;
    EnvState::new(
        [rng.random_range(-b..=b), rng.random_range(-b..=b)],
        [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
    )
}

/// PD controller toward the goal with gravity feed-forward computed from the
/// dynamics the controller *believes* in.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedController {
    pub believed: PointMassConfig,
    pub kp: f64,
    pub kd: f64,
}

impl ScriptedController {
    pub fn new(believed: PointMassConfig) -> Self {
        Self { believed, kp: 1.0, kd: 0.5 }
    }

    pub fn mean_action(&self, state: &EnvState) -> [f64; 2] {
        let goal = self.believed.goal;
        let gain_y = self.believed.gain()[1];
        let feed_forward = if gain_y > 0.0 { self.believed.g() / gain_y } else { 0.0 };
        [
            self.kp * (goal[0] - state.pos[0]) - self.kd * state.vel[0],
            self.kp * (goal[1] - state.pos[1]) - self.kd * state.vel[1] + feed_forward,
        ]
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &EnvState, noise_std: f64, rng: &mut R) -> [f64; 2] {
        let mut a = self.mean_action(state);
        if noise_std > 0.0 {
            let noise = Normal::new(0.0, noise_std).expect("finite std");
            for x in &mut a {
                *x += noise.sample(rng);
            }
        }
        clip_action(a)
    }
}

pub fn scripted_policy<R: Rng + ?Sized>(
    believed: &PointMassConfig,
    state: &EnvState,
    noise_std: f64,
    rng: &mut R,
) -> [f64; 2] {
    ScriptedController::new(believed.clone()).act(state, noise_std, rng)
}

/// Noise level of the "expert" and "medium" dataset tiers.
pub const EXPERT_NOISE: f64 = 0.05;
pub const MEDIUM_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorPolicy {
    Scripted { controller: ScriptedController, noise_std: f64 },
    UniformRandom,
}

impl BehaviorPolicy {
    pub fn scripted(believed: PointMassConfig, noise_std: f64) -> Self {
        Self::Scripted { controller: ScriptedController::new(believed), noise_std }
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &EnvState, rng: &mut R) -> [f64; 2] {
        match self {
            Self::Scripted { controller, noise_std } => controller.act(state, *noise_std, rng),
            Self::UniformRandom => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
        }
    }
}

/// Independent RNG for episode `index` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rolls episodes from random starts until `n` transitions are collected.
/// The final episode is cut short when `n` is not a multiple of the episode
/// length.
pub fn generate_dataset(
    cfg: &PointMassConfig,
    policy: &BehaviorPolicy,
    n: usize,
    seed: u64,
    tag: DomainTag,
) -> Result<TransitionDataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    let mut ds = TransitionDataset::new(OBS_DIM, ACT_DIM, tag);
    let mut episode = 0u64;
    while ds.len() < n {
        let mut rng = episode_rng(seed, episode);
        let mut state = sample_start(cfg, &mut rng);
        loop {
            let a = policy.act(&state, &mut rng);
            let out = step(cfg, &state, a);
            ds.push(Transition {
                state: state.obs(),
                action: vec![a[0] as f32, a[1] as f32],
                reward: out.reward as f32,
                next_state: out.next.obs(),
                done: out.done,
            })?;
            state = out.next;
            if out.done || ds.len() == n {
                break;
            }
        }
        episode += 1;
    }
    Ok(ds)
}

/// Undiscounted return of one episode from `start`.
pub fn episode_return<F>(cfg: &PointMassConfig, start: EnvState, mut policy: F) -> f64
where
    F: FnMut(&EnvState) -> [f64; 2],
{
    let mut state = start;
    let mut total = 0.0;
    loop {
        let out = step(cfg, &state, policy(&state));
        total += out.reward;
        state = out.next;
        if out.done {
            return total;
        }
    }
}

/// Mean return of `policy` over `episodes` seeded starts.
pub fn mean_return(cfg: &PointMassConfig, policy: &BehaviorPolicy, episodes: usize, seed: u64) -> Vec<f64> {
    (0..episodes as u64)
        .map(|k| {
            let mut rng = episode_rng(seed, k);
            let start = sample_start(cfg, &mut rng);
            episode_return(cfg, start, |s| policy.act(s, &mut rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_action_cancels_gravity() {
        let cfg = PointMassConfig::default();
        let hover = cfg.g() / cfg.gain()[1];
        assert!(hover < 1.0, "default thrust must be able to hover");
        let out = step(&cfg, &EnvState::new([0.0, 3.0], [0.0, 0.0]), [0.0, hover]);
        assert!(out.next.vel[1].abs() < 1e-12);
        assert!((out.next.pos[1] - 3.0).abs() < 1e-12);
        assert!((out.reward + 0.05 * hover * hover).abs() < 1e-12);
    }

    #[test]
    fn free_fall_single_step() {
        let cfg = PointMassConfig::default();
        let out = step(&cfg, &EnvState::new([0.0, 1.0], [0.0, 0.0]), [0.0, 0.0]);
        assert!((out.next.vel[1] + 0.49).abs() < 1e-12);
        assert!((out.next.pos[1] - 0.9755).abs() < 1e-12);
    }

    #[test]
    fn no_forces_freeze_the_state() {
        let cfg = PointMassConfig { gravity_scale: 1e-300, friction_scale: 0.0, gravity: 0.0, ..Default::default() };
        let s = EnvState::new([1.0, -2.0], [0.0, 0.0]);
        let out = step(&cfg, &s, [0.0, 0.0]);
        assert_eq!(out.next.pos, s.pos);
        assert_eq!(out.next.vel, s.vel);
        let dist = (1.0f64 + 25.0).sqrt();
        assert!((out.reward + dist).abs() < 1e-12);
    }

    #[test]
    fn drag_only_shrinks_speed() {
        let cfg = PointMassConfig { gravity: 0.0, ..Default::default() };
        let mut s = EnvState::new([0.0, 0.0], [3.0, -4.0]);
        for _ in 0..20 {
            let speed = s.vel[0].hypot(s.vel[1]);
            s = step(&cfg, &s, [0.0, 0.0]).next;
            assert!(s.vel[0].hypot(s.vel[1]) < speed);
        }
    }

    #[test]
    fn state_stays_in_box() {
        let cfg = PointMassConfig::default();
        let mut rng = episode_rng(3, 0);
        let mut s = sample_start(&cfg, &mut rng);
        for _ in 0..500 {
            let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            s = step(&cfg, &s, a).next;
            assert!(s.pos.iter().all(|p| p.abs() <= cfg.pos_bound));
            assert!(s.vel.iter().all(|v| v.abs() <= cfg.vel_bound));
        }
    }

    #[test]
    fn controller_at_goal_without_gravity_is_idle() {
        let cfg = PointMassConfig { gravity: 0.0, ..Default::default() };
        let mut rng = episode_rng(0, 0);
        let a = scripted_policy(&cfg, &EnvState::new(cfg.goal, [0.0, 0.0]), 0.0, &mut rng);
        assert_eq!(a, [0.0, 0.0]);
    }

    #[test]
    fn noiseless_controller_is_deterministic() {
        let cfg = PointMassConfig::default();
        let s = EnvState::new([1.0, -1.0], [0.3, 0.2]);
        let a = scripted_policy(&cfg, &s, 0.0, &mut episode_rng(0, 0));
        let b = scripted_policy(&cfg, &s, 0.0, &mut episode_rng(9, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn expert_beats_medium() {
        let cfg = PointMassConfig::default().shifted(ShiftKind::Gravity);
        let mean = |noise| {
            let r = mean_return(&cfg, &BehaviorPolicy::scripted(cfg.clone(), noise), 20, 5);
            r.iter().sum::<f64>() / r.len() as f64
        };
        assert!(mean(EXPERT_NOISE) > mean(MEDIUM_NOISE));
    }

    #[test]
    fn one_episode_of_transitions() {
        let cfg = PointMassConfig::default();
        let ds = generate_dataset(&cfg, &BehaviorPolicy::UniformRandom, 200, 1, DomainTag::Source).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(ds.records()[..199].iter().all(|t| !t.done));
        assert!(ds.records()[199].done);
        for pair in ds.records().windows(2) {
            assert_eq!(pair[0].next_state, pair[1].state);
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = PointMassConfig::default();
        let policy = BehaviorPolicy::scripted(cfg.clone(), MEDIUM_NOISE);
        let a = generate_dataset(&cfg, &policy, 450, 7, DomainTag::Source).unwrap();
        let b = generate_dataset(&cfg, &policy, 450, 7, DomainTag::Source).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.len(), 450);
    }

    #[test]
    fn gravity_shift_moves_next_states_more_with_larger_dt() {
        let src = PointMassConfig::default();
        let mean_gap = |dt: f64| {
            let src = PointMassConfig { dt, ..src.clone() };
            let tar = src.shifted(ShiftKind::Gravity);
            let mut rng = episode_rng(11, 0);
            let mut total = 0.0;
            for _ in 0..200 {
                let s = EnvState::new([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], [0.0, 0.0]);
                let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let (x, y) = (step(&src, &s, a).next, step(&tar, &s, a).next);
                total += ((x.pos[1] - y.pos[1]).powi(2) + (x.vel[1] - y.vel[1]).powi(2)).sqrt();
            }
            total / 200.0
        };
        let small = mean_gap(0.02);
        let large = mean_gap(0.05);
        assert!(small > 0.0);
        assert!(large > small);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = PointMassConfig { dt: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = PointMassConfig { gain_scale: [1.0, -1.0], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
