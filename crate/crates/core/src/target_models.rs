//! Phase I: inverse-policy, forward-dynamics and reward models fitted on
//! target-domain transitions only.
//!
//! Featurization:
//! - inverse: `(norm(s), norm(s'))` → `a`, tanh head
//! - forward: `(norm(s), a)` → `s' - s`
//! - reward:  `(norm(s), a)` → `r`
//!
//! Actions enter the forward and reward models unnormalized so that the
//! input gradient of the reward model is directly `∂r/∂a`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{compute_stats, NormStats, TransitionDataset};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, loss, save_checkpoint, Adam, Mlp, OutputActivation, Real, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Inverse,
    Forward,
    Reward,
}

impl ModelRole {
    pub const ALL: [ModelRole; 3] = [ModelRole::Inverse, ModelRole::Forward, ModelRole::Reward];

    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Inverse => "inverse",
            ModelRole::Forward => "forward",
            ModelRole::Reward => "reward",
        }
    }

    pub fn file_name(self) -> String {
        format!("model_{}.stcnet", self.name())
    }

    pub fn output_activation(self) -> OutputActivation {
        match self {
            ModelRole::Inverse => OutputActivation::Tanh,
            _ => OutputActivation::Identity,
        }
    }

    fn dims(self, obs: usize, act: usize) -> (usize, usize) {
        match self {
            ModelRole::Inverse => (2 * obs, act),
            ModelRole::Forward => (obs + act, obs),
            ModelRole::Reward => (obs + act, 1),
        }
    }

    // Keeps the three initializations distinct under one user seed.
    fn seed_salt(self) -> u64 {
        match self {
            ModelRole::Inverse => 0x1111,
            ModelRole::Forward => 0x2222,
            ModelRole::Reward => 0x3333,
        }
    }
}

pub const NORM_STATS_FILE: &str = "norm_stats.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub hidden: Vec<usize>,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 50_000, batch_size: 128, lr: 3e-4, hidden: vec![64, 64], holdout_frac: 0.1, seed: 0 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::usage("pretraining needs at least one step"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("pretrain batch_size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("pretrain lr must be > 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::config("holdout fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub role: ModelRole,
    /// Per-step mini-batch loss.
    pub losses: Vec<f32>,
    pub heldout_mse: f64,
    pub train_size: usize,
    pub heldout_size: usize,
}

impl TrainReport {
    /// Mean loss over the first and last tenth of training.
    pub fn loss_trend(&self) -> (f64, f64) {
        let n = self.losses.len();
        let k = (n / 10).max(1);
        let mean = |xs: &[f32]| xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64;
        (mean(&self.losses[..k]), mean(&self.losses[n - k..]))
    }
}

fn features(role: ModelRole, ds: &TransitionDataset, norm: &NormStats) -> (Vec<f32>, Vec<f32>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in ds.records() {
        norm.normalize_into(&t.state, &mut x);
        match role {
            ModelRole::Inverse => {
                norm.normalize_into(&t.next_state, &mut x);
                y.extend_from_slice(&t.action);
            }
            ModelRole::Forward => {
                x.extend_from_slice(&t.action);
                y.extend(t.next_state.iter().zip(&t.state).map(|(n, s)| n - s));
            }
            ModelRole::Reward => {
                x.extend_from_slice(&t.action);
                y.push(t.reward);
            }
        }
    }
    (x, y)
}

fn gather(src: &[f32], dim: usize, idx: &[usize], out: &mut Vec<f32>) {
    out.clear();
    for &i in idx {
        out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
    }
}

/// Fits one Phase I model by mini-batch Adam on the mean squared error.
pub fn train_model(
    role: ModelRole,
    ds: &TransitionDataset,
    norm: &NormStats,
    cfg: &PretrainConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    if norm.dim() != ds.obs_dim() {
        return Err(Error::shape(format!(
            "normalization has {} dims, dataset observations have {}",
            norm.dim(),
            ds.obs_dim()
        )));
    }
    let (in_dim, out_dim) = role.dims(ds.obs_dim(), ds.act_dim());
    let (x, y) = features(role, ds, norm);

    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ role.seed_salt());
    order.shuffle(&mut rng);
    let heldout_size = ((ds.len() as f64) * cfg.holdout_frac).floor() as usize;
    let heldout_size = heldout_size.min(ds.len() - 1);
    let (train_idx, heldout_idx) = order.split_at(ds.len() - heldout_size);

    let mut sizes = vec![in_dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(out_dim);
    let mut net = Mlp::<f32>::new(&sizes, role.output_activation(), cfg.seed ^ role.seed_salt())?;
    let mut adam = Adam::for_net(&net, cfg.lr);

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut bx = Vec::with_capacity(cfg.batch_size * in_dim);
    let mut by = Vec::with_capacity(cfg.batch_size * out_dim);
    let mut tape = Tape::new();
    let mut grads = vec![0.0f32; net.num_params()];
    let mut idx = vec![0usize; cfg.batch_size];
    let train_len = train_idx.len() as u64;
    for _ in 0..cfg.steps {
        for slot in idx.iter_mut() {
            *slot = train_idx[rand::Rng::random_range(&mut rng, 0..train_len) as usize];
        }
        gather(&x, in_dim, &idx, &mut bx);
        gather(&y, out_dim, &idx, &mut by);
        let pred = net.forward_tape(&bx, cfg.batch_size, &mut tape);
        let (value, d_out) = loss::mse(pred, &by, out_dim);
        grads.iter_mut().for_each(|g| *g = 0.0);
        net.backward(&tape, &d_out, Some(&mut grads), false);
        adam.step(&mut net, &grads)?;
        losses.push(value);
    }

    // With no held-out records the fit is reported on the training rows.
    let eval_idx = if heldout_idx.is_empty() { train_idx } else { heldout_idx };
    gather(&x, in_dim, eval_idx, &mut bx);
    gather(&y, out_dim, eval_idx, &mut by);
    let pred = net.forward_batch(&bx, eval_idx.len());
    let errs = loss::row_squared_errors(&pred, &by, out_dim);
    let heldout_mse = errs.iter().sum::<f64>() / errs.len() as f64;
    if !heldout_mse.is_finite() || !net.all_finite() {
        return Err(Error::Numerical(format!("{} model diverged", role.name())));
    }
    let report = TrainReport { role, losses, heldout_mse, train_size: train_idx.len(), heldout_size };
    Ok((net, report))
}

pub fn train_inverse(ds: &TransitionDataset, norm: &NormStats, cfg: &PretrainConfig) -> Result<(Mlp, TrainReport)> {
    train_model(ModelRole::Inverse, ds, norm, cfg)
}

pub fn train_forward(ds: &TransitionDataset, norm: &NormStats, cfg: &PretrainConfig) -> Result<(Mlp, TrainReport)> {
    train_model(ModelRole::Forward, ds, norm, cfg)
}

pub fn train_reward(ds: &TransitionDataset, norm: &NormStats, cfg: &PretrainConfig) -> Result<(Mlp, TrainReport)> {
    train_model(ModelRole::Reward, ds, norm, cfg)
}

/// `∂ out / ∂ x[offset..]` for a scalar-output network, row by row.
pub fn input_gradient<T: Real>(net: &Mlp<T>, x: &[T], batch: usize, offset: usize) -> Result<Vec<T>> {
    if net.output_dim() != 1 {
        return Err(Error::shape("input gradient needs a scalar-output network"));
    }
    if x.len() != batch * net.input_dim() || offset > net.input_dim() {
        return Err(Error::shape(format!("bad input block for network of width {}", net.input_dim())));
    }
    if batch == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    net.forward_tape(x, batch, &mut tape);
    let dx = net.backward(&tape, &vec![T::one(); batch], None, true).expect("input gradient requested");
    let width = net.input_dim();
    Ok(dx.chunks_exact(width).flat_map(|row| row[offset..].iter().copied()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModels {
    pub inverse: Mlp,
    pub forward: Mlp,
    pub reward: Mlp,
    pub norm: NormStats,
}

impl TargetModels {
    pub fn obs_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn act_dim(&self) -> usize {
        self.inverse.output_dim()
    }

    fn check(&self) -> Result<()> {
        let (o, a) = (self.obs_dim(), self.act_dim());
        for (role, net) in [(ModelRole::Inverse, &self.inverse), (ModelRole::Forward, &self.forward), (ModelRole::Reward, &self.reward)] {
            let (i, out) = role.dims(o, a);
            if net.input_dim() != i || net.output_dim() != out {
                return Err(Error::shape(format!(
                    "{} model maps {}→{}, expected {i}→{out}",
                    role.name(),
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }

    fn state_action_input(&self, states: &[f32], actions: &[f32], batch: usize) -> Result<Vec<f32>> {
        let (o, a) = (self.obs_dim(), self.act_dim());
        if states.len() != batch * o || actions.len() != batch * a {
            return Err(Error::shape(format!(
                "expected {batch} rows of {o}-dim states and {a}-dim actions"
            )));
        }
        let mut x = Vec::with_capacity(batch * (o + a));
        for (s, act) in states.chunks_exact(o).zip(actions.chunks_exact(a)) {
            self.norm.normalize_into(s, &mut x);
            x.extend_from_slice(act);
        }
        Ok(x)
    }

    /// `f_inv(s, s')` for a batch of row-major state pairs.
    pub fn predict_actions(&self, states: &[f32], next_states: &[f32], batch: usize) -> Result<Vec<f32>> {
        let o = self.obs_dim();
        if states.len() != batch * o || next_states.len() != batch * o {
            return Err(Error::shape(format!("expected {batch} rows of {o}-dim states")));
        }
        let mut x = Vec::with_capacity(batch * 2 * o);
        for (s, n) in states.chunks_exact(o).zip(next_states.chunks_exact(o)) {
            self.norm.normalize_into(s, &mut x);
            self.norm.normalize_into(n, &mut x);
        }
        Ok(self.inverse.forward_batch(&x, batch))
    }

    pub fn predict_deltas(&self, states: &[f32], actions: &[f32], batch: usize) -> Result<Vec<f32>> {
        let x = self.state_action_input(states, actions, batch)?;
        Ok(self.forward.forward_batch(&x, batch))
    }

    pub fn predict_rewards(&self, states: &[f32], actions: &[f32], batch: usize) -> Result<Vec<f32>> {
        let x = self.state_action_input(states, actions, batch)?;
        Ok(self.reward.forward_batch(&x, batch))
    }

    /// `∇_a r_model(s, a)` per row.
    pub fn reward_action_gradients(&self, states: &[f32], actions: &[f32], batch: usize) -> Result<Vec<f32>> {
        let x = self.state_action_input(states, actions, batch)?;
        input_gradient(&self.reward, &x, batch, self.obs_dim())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.inverse, dir.join(ModelRole::Inverse.file_name()))?;
        save_checkpoint(&self.forward, dir.join(ModelRole::Forward.file_name()))?;
        save_checkpoint(&self.reward, dir.join(ModelRole::Reward.file_name()))?;
        std::fs::write(dir.join(NORM_STATS_FILE), self.norm.to_text())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |role: ModelRole| load_checkpoint(dir.join(role.file_name()), role.output_activation());
        let norm_path = dir.join(NORM_STATS_FILE);
        if !norm_path.exists() {
            return Err(Error::MissingFile(norm_path));
        }
        let models = Self {
            inverse: load(ModelRole::Inverse)?,
            forward: load(ModelRole::Forward)?,
            reward: load(ModelRole::Reward)?,
            norm: NormStats::from_text(&std::fs::read_to_string(norm_path)?)?,
        };
        models.check()?;
        Ok(models)
    }
}

/// Trains all three models on `tar` (in parallel when `parallel` is set).
pub fn pretrain(tar: &TransitionDataset, cfg: &PretrainConfig, parallel: bool) -> Result<(TargetModels, Vec<TrainReport>)> {
    cfg.validate()?;
    let norm = compute_stats(tar)?;
    let results: Vec<Result<(Mlp, TrainReport)>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ModelRole::ALL
                .iter()
                .map(|&role| {
                    let norm = &norm;
                    scope.spawn(move || train_model(role, tar, norm, cfg))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        })
    } else {
        ModelRole::ALL.iter().map(|&role| train_model(role, tar, &norm, cfg)).collect()
    };
    let mut nets = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (net, report) = r?;
        nets.push(net);
        reports.push(report);
    }
    let reward = nets.pop().expect("three models");
    let forward = nets.pop().expect("three models");
    let inverse = nets.pop().expect("three models");
    Ok((TargetModels { inverse, forward, reward, norm }, reports))
}
