//! Exact tabular checks of the transition-deviation, reward-correction and
//! finite-data bounds, and of the telescoping identity.
//!
//! Distances between distributions are ℓ1 throughout; policy and dynamics
//! errors are maxima over states (and actions).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

pub const BOUND_TOL: f64 = 1e-9;
pub const TELESCOPING_TOL: f64 = 1e-8;
const VI_RESIDUAL: f64 = 1e-12;
const VI_MAX_ITERS: usize = 200_000;

/// Finite MDP with `p[(s * A + a) * S + s']` and `r[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub r_max: f64,
    pub gamma: f64,
    /// Unit-scaled one-hot action embeddings, when present.
    pub embeddings: Option<Vec<Vec<f64>>>,
}

/// Row-stochastic table `pi[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub pi: Vec<f64>,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_rows(rows: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in rows.chunks_exact(width).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::shape(format!("{what} row {i} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, r: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::usage("MDP needs at least one state and one action"));
        }
        if p.len() != n_states * n_actions * n_states || r.len() != n_states * n_actions {
            return Err(Error::shape("dynamics or reward table has the wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::usage(format!("gamma must be in [0, 1), got {gamma}")));
        }
        check_rows(&p, n_states, "dynamics")?;
        let r_max = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(Self { n_states, n_actions, p, r, r_max, gamma, embeddings: None })
    }

    pub fn with_one_hot_embeddings(mut self) -> Self {
        let a = self.n_actions;
        self.embeddings = Some((0..a).map(|i| (0..a).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect());
        self
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        &self.p[(s * self.n_actions + a) * n..(s * self.n_actions + a + 1) * n]
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::shape("policy and MDP sizes differ"));
        }
        Ok(())
    }

    fn same_shape(&self, other: &TabularMdp) -> Result<()> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::shape("MDP sizes differ"));
        }
        Ok(())
    }

    /// Same reward and discount, dynamics replaced.
    pub fn with_dynamics(&self, p: Vec<f64>) -> Result<Self> {
        let mut m = TabularMdp::new(self.n_states, self.n_actions, p, self.r.clone(), self.gamma)?;
        m.r_max = self.r_max;
        m.embeddings = self.embeddings.clone();
        Ok(m)
    }
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, pi: Vec<f64>) -> Result<Self> {
        if pi.len() != n_states * n_actions {
            return Err(Error::shape("policy table has the wrong size"));
        }
        check_rows(&pi, n_actions, "policy")?;
        Ok(Self { n_states, n_actions, pi })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, pi: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.pi[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Max over states of the ℓ1 distance between action distributions.
    pub fn max_l1(&self, other: &TabularPolicy) -> f64 {
        (0..self.n_states).map(|s| l1(self.row(s), other.row(s))).fold(0.0, f64::max)
    }

    /// Max over states of the total variation distance.
    pub fn max_tv(&self, other: &TabularPolicy) -> f64 {
        0.5 * self.max_l1(other)
    }
}

/// `P^π(s'|s) = Σ_a P(s'|s,a)·π(a|s)`, row-major `S × S`.
pub fn policy_induced_dynamics(m: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    m.check_policy(pi)?;
    let n = m.n_states;
    let mut out = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..m.n_actions {
            let w = pi.row(s)[a];
            for (o, &p) in out[s * n..(s + 1) * n].iter_mut().zip(m.row(s, a)) {
                *o += w * p;
            }
        }
    }
    Ok(out)
}

fn policy_rewards(m: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
    (0..m.n_states).map(|s| (0..m.n_actions).map(|a| pi.row(s)[a] * m.r[s * m.n_actions + a]).sum()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub j: f64,
}

/// Policy evaluation by value iteration to a sup-norm residual below 1e-12.
pub fn exact_values(m: &TabularMdp, pi: &TabularPolicy, d0: &[f64]) -> Result<Values> {
    if d0.len() != m.n_states {
        return Err(Error::shape("start distribution has the wrong size"));
    }
    let n = m.n_states;
    let pp = policy_induced_dynamics(m, pi)?;
    let rp = policy_rewards(m, pi);
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..VI_MAX_ITERS {
        let mut residual = 0.0f64;
        for s in 0..n {
            let ev: f64 = pp[s * n..(s + 1) * n].iter().zip(&v).map(|(p, x)| p * x).sum();
            next[s] = rp[s] + m.gamma * ev;
            residual = residual.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual < VI_RESIDUAL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("value iteration did not converge".into()));
    }
    let q = (0..n * m.n_actions)
        .map(|sa| {
            let (s, a) = (sa / m.n_actions, sa % m.n_actions);
            m.r[sa] + m.gamma * m.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
        })
        .collect();
    let j = d0.iter().zip(&v).map(|(d, x)| d * x).sum();
    Ok(Values { q, v, j })
}

/// `V = (I − γP^π)⁻¹ r^π` by LU decomposition.
pub fn linear_solve_values(m: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    let n = m.n_states;
    let pp = policy_induced_dynamics(m, pi)?;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - m.gamma * pp[i * n + j]);
    let b = DVector::from_vec(policy_rewards(m, pi));
    let x = a.lu().solve(&b).ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    Ok(x.iter().copied().collect())
}

/// Normalized discounted state-action occupancy `ρ(s,a)`, from
/// `(I − γP^πᵀ) d = (1 − γ) d0` and `ρ(s,a) = d(s)·π(a|s)`.
pub fn occupancy(m: &TabularMdp, pi: &TabularPolicy, d0: &[f64]) -> Result<Vec<f64>> {
    let n = m.n_states;
    let pp = policy_induced_dynamics(m, pi)?;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - m.gamma * pp[j * n + i]);
    let b = DVector::from_iterator(n, d0.iter().map(|x| (1.0 - m.gamma) * x));
    let d = a.lu().solve(&b).ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    Ok((0..n * m.n_actions).map(|sa| d[sa / m.n_actions] * pi.row(sa / m.n_actions)[sa % m.n_actions]).collect())
}

pub fn uniform_start(n_states: usize) -> Vec<f64> {
    vec![1.0 / n_states as f64; n_states]
}

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= sum);
    x
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularPolicy {
    let pi = (0..n_states).flat_map(|_| dirichlet_row(rng, n_actions)).collect();
    TabularPolicy { n_states, n_actions, pi }
}

/// `(1 − t)·a + t·b`, row by row.
pub fn mix_policies(a: &TabularPolicy, b: &TabularPolicy, t: f64) -> TabularPolicy {
    let pi = a.pi.iter().zip(&b.pi).map(|(x, y)| x + t * (y - x)).collect();
    TabularPolicy { pi, ..a.clone() }
}

/// Source/target pair sharing rewards; target rows are uniform on the
/// simplex and every source row lies within ℓ1 `epsilon_target` of its
/// target row.
pub fn random_mdp_pair(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    epsilon_target: f64,
    seed: u64,
) -> Result<(TabularMdp, TabularMdp)> {
    if !(0.0..=2.0).contains(&epsilon_target) {
        return Err(Error::usage(format!("epsilon_target must lie in [0, 2], got {epsilon_target}")));
    }
    if n_states == 0 || n_actions == 0 {
        return Err(Error::usage("MDP needs at least one state and one action"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = n_states * n_actions;
    let mut p_tar = Vec::with_capacity(rows * n_states);
    let mut p_src = Vec::with_capacity(rows * n_states);
    for _ in 0..rows {
        let p = dirichlet_row(&mut rng, n_states);
        let q = dirichlet_row(&mut rng, n_states);
        let dist = l1(&p, &q);
        let t = if dist > 0.0 { (epsilon_target / dist).min(1.0) } else { 0.0 };
        p_src.extend(p.iter().zip(&q).map(|(x, y)| x + t * (y - x)));
        p_tar.extend(p);
    }
    let r: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut tar = TabularMdp::new(n_states, n_actions, p_tar, r.clone(), gamma)?;
    let mut src = TabularMdp::new(n_states, n_actions, p_src, r, gamma)?;
    tar.r_max = 1.0;
    src.r_max = 1.0;
    Ok((src, tar))
}

/// Max over `(s, a)` of the ℓ1 distance between dynamics rows.
pub fn dynamics_gap(a: &TabularMdp, b: &TabularMdp) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.p
        .chunks_exact(a.n_states)
        .zip(b.p.chunks_exact(b.n_states))
        .map(|(x, y)| l1(x, y))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    TransitionDeviation,
    RewardCorrection,
    FiniteData,
    Telescoping,
}

impl BoundKind {
    pub fn id(self) -> &'static str {
        match self {
            BoundKind::TransitionDeviation => "theorem1",
            BoundKind::RewardCorrection => "theorem2",
            BoundKind::FiniteData => "theorem3",
            BoundKind::Telescoping => "telescoping",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// Positive when the inequality holds with room to spare.
    pub margin: f64,
    pub holds: bool,
}

pub const REPORT_HEADER: &str = "theorem,seed,n_states,n_actions,kappa,epsilon,n,delta,lhs,rhs,margin,holds";

impl BoundReport {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{},{},{:e},{:e},{},{},{:e},{:e},{:e},{}",
            self.kind.id(),
            self.seed,
            self.n_states,
            self.n_actions,
            self.kappa,
            self.epsilon,
            opt(self.n.map(|n| n.to_string())),
            opt(self.delta.map(|d| d.to_string())),
            self.lhs,
            self.rhs,
            self.margin,
            self.holds
        )
    }
}

/// `max_s ‖P_src^π̂(·|s) − P_tar^μ(·|s)‖₁ ≤ κ + ε`.
pub fn verify_theorem1(
    src: &TabularMdp,
    tar: &TabularMdp,
    mu_tar: &TabularPolicy,
    pi_hat: &TabularPolicy,
    seed: u64,
) -> Result<BoundReport> {
    src.same_shape(tar)?;
    let n = src.n_states;
    let corrected = policy_induced_dynamics(src, pi_hat)?;
    let target = policy_induced_dynamics(tar, mu_tar)?;
    let lhs = corrected.chunks_exact(n).zip(target.chunks_exact(n)).map(|(a, b)| l1(a, b)).fold(0.0, f64::max);
    let kappa = pi_hat.max_l1(mu_tar);
    let epsilon = dynamics_gap(src, tar)?;
    let rhs = kappa + epsilon;
    Ok(BoundReport {
        kind: BoundKind::TransitionDeviation,
        seed,
        n_states: n,
        n_actions: src.n_actions,
        kappa,
        epsilon,
        n: None,
        delta: None,
        lhs,
        rhs,
        margin: rhs - lhs,
        holds: lhs <= rhs + BOUND_TOL,
    })
}

/// Per-state reward shift of the corrected source data: the first-order
/// correction `g(s,i)ᵀ(e_j − e_i)` averaged over the maximal coupling of
/// dataset actions `i ~ μ_src` with corrected actions `j ~ μ_tar`.
pub fn coupled_reward_shift(
    embeddings: &[Vec<f64>],
    grads: &[f64],
    mu_src: &[f64],
    mu_tar: &[f64],
) -> f64 {
    let k = mu_src.len();
    let overlap: Vec<f64> = mu_src.iter().zip(mu_tar).map(|(a, b)| a.min(*b)).collect();
    let tv = 1.0 - overlap.iter().sum::<f64>();
    if tv <= 0.0 {
        return 0.0;
    }
    let mut shift = 0.0;
    for i in 0..k {
        let out_i = mu_src[i] - overlap[i];
        if out_i <= 0.0 {
            continue;
        }
        let g = &grads[i * k..(i + 1) * k];
        for j in 0..k {
            let in_j = mu_tar[j] - overlap[j];
            if i == j || in_j <= 0.0 {
                continue;
            }
            let step: f64 = g.iter().zip(embeddings[j].iter().zip(&embeddings[i])).map(|(g, (ej, ei))| g * (ej - ei)).sum();
            shift += out_i * in_j / tv * step;
        }
    }
    shift
}

/// `max |Q̃ − Q̂| ≤ 2·L_r·D_TV(μ_src, μ_tar) / (1 − γ)`, with reward
/// gradients drawn uniformly from `[−L_r, L_r]` per coordinate.
pub fn verify_theorem2(
    m_src: &TabularMdp,
    mu_src: &TabularPolicy,
    mu_tar: &TabularPolicy,
    pi_eval: &TabularPolicy,
    l_r: f64,
    seed: u64,
) -> Result<BoundReport> {
    let emb = m_src
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::usage("reward-correction check needs action embeddings"))?;
    if !(l_r.is_finite() && l_r >= 0.0) {
        return Err(Error::usage("L_r must be >= 0"));
    }
    m_src.check_policy(mu_src)?;
    m_src.check_policy(mu_tar)?;
    let (ns, na) = (m_src.n_states, m_src.n_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7E57);
    let mut r_hat = m_src.r.clone();
    for s in 0..ns {
        let grads: Vec<f64> = (0..na * na).map(|_| if l_r > 0.0 { rng.random_range(-l_r..=l_r) } else { 0.0 }).collect();
        let shift = coupled_reward_shift(emb, &grads, mu_src.row(s), mu_tar.row(s));
        for a in 0..na {
            r_hat[s * na + a] += shift;
        }
    }
    let corrected = TabularMdp { r: r_hat, ..m_src.clone() };
    let d0 = uniform_start(ns);
    let q_hat = exact_values(m_src, pi_eval, &d0)?.q;
    let q_tilde = exact_values(&corrected, pi_eval, &d0)?.q;
    let lhs = q_hat.iter().zip(&q_tilde).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let tv = mu_src.max_tv(mu_tar);
    let rhs = 2.0 * l_r * tv / (1.0 - m_src.gamma);
    Ok(BoundReport {
        kind: BoundKind::RewardCorrection,
        seed,
        n_states: ns,
        n_actions: na,
        kappa: tv,
        epsilon: l_r,
        n: None,
        delta: None,
        lhs,
        rhs,
        margin: rhs - lhs,
        holds: lhs <= rhs + BOUND_TOL,
    })
}

/// MDP whose every action follows the state-level kernel `P^π(·|s)`.
pub fn marginalized(m: &TabularMdp, pi: &TabularPolicy) -> Result<TabularMdp> {
    let n = m.n_states;
    let pp = policy_induced_dynamics(m, pi)?;
    let mut p = Vec::with_capacity(m.p.len());
    for s in 0..n {
        for _ in 0..m.n_actions {
            p.extend_from_slice(&pp[s * n..(s + 1) * n]);
        }
    }
    m.with_dynamics(p)
}

/// Count-normalized dynamics from `n` transitions with uniformly drawn
/// states and `a ~ μ`; rows never visited are uniform.
pub fn empirical_dynamics<R: Rng + ?Sized>(m: &TabularMdp, mu: &TabularPolicy, n: usize, rng: &mut R) -> Vec<f64> {
    let (ns, na) = (m.n_states, m.n_actions);
    let mut counts = vec![0u64; ns * na * ns];
    let draw = |rng: &mut R, probs: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    };
    for _ in 0..n {
        let s = rng.random_range(0..ns);
        let a = draw(rng, mu.row(s));
        let s2 = draw(rng, m.row(s, a));
        counts[(s * na + a) * ns + s2] += 1;
    }
    counts
        .chunks_exact(ns)
        .flat_map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(move |&c| if total == 0 { 1.0 / ns as f64 } else { c as f64 / total as f64 })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Finite-data check outcome plus the sampled-model diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDataTrial {
    pub report: BoundReport,
    /// Max visited-row ℓ1 error of the empirical target kernel.
    pub empirical_error: f64,
}

/// `J_corr(π) − J_tar(π) ≥ −γ·r_max·(κ+ε)/(1−γ)² − C₁·sqrt(ln(2C₂/δ)/n)`.
///
/// Both MDPs act through state-level kernels: corrected data follow
/// `P_src^π̂`, target data follow `P_tar^μ`, which is the form in which the
/// transition-deviation bound compares them. Rewards are shared.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem3(
    src: &TabularMdp,
    tar: &TabularMdp,
    mu_tar: &TabularPolicy,
    pi_hat: &TabularPolicy,
    pi_eval: &TabularPolicy,
    n: usize,
    delta: f64,
    seed: u64,
) -> Result<FiniteDataTrial> {
    if n == 0 {
        return Err(Error::usage("sample count must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::usage(format!("delta must lie in (0, 1), got {delta}")));
    }
    src.same_shape(tar)?;
    let (ns, na) = (src.n_states, src.n_actions);
    let corrected = marginalized(src, pi_hat)?;
    let target = marginalized(tar, mu_tar)?;
    let d0 = uniform_start(ns);
    let lhs = exact_values(&corrected, pi_eval, &d0)?.j - exact_values(&target, pi_eval, &d0)?.j;

    let kappa = pi_hat.max_l1(mu_tar);
    let epsilon = dynamics_gap(src, tar)?;
    let g = src.gamma;
    let r_max = src.r_max.max(tar.r_max);
    let c1 = g * r_max * ns as f64 / (2f64.sqrt() * (1.0 - g).powi(2));
    let c2 = (ns * na * ns) as f64;
    let rhs = -g * r_max * (kappa + epsilon) / (1.0 - g).powi(2) - c1 * ((2.0 * c2 / delta).ln() / n as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A);
    let p_hat = empirical_dynamics(tar, mu_tar, n, &mut rng);
    let empirical_error = p_hat
        .chunks_exact(ns)
        .zip(tar.p.chunks_exact(ns))
        .enumerate()
        .filter(|(i, _)| mu_tar.pi[*i] > 0.0)
        .map(|(_, (a, b))| l1(a, b))
        .fold(0.0, f64::max);

    let report = BoundReport {
        kind: BoundKind::FiniteData,
        seed,
        n_states: ns,
        n_actions: na,
        kappa,
        epsilon,
        n: Some(n),
        delta: Some(delta),
        lhs,
        rhs,
        margin: lhs - rhs,
        holds: lhs >= rhs - BOUND_TOL,
    };
    Ok(FiniteDataTrial { report, empirical_error })
}

/// `J₁ − J₂ = γ/(1−γ)·E_{ρ₁}[E_{P₁}V₂ − E_{P₂}V₂]` for MDPs sharing rewards.
pub fn verify_telescoping(m1: &TabularMdp, m2: &TabularMdp, pi: &TabularPolicy, seed: u64) -> Result<BoundReport> {
    m1.same_shape(m2)?;
    if m1.r != m2.r || m1.gamma != m2.gamma {
        return Err(Error::usage("telescoping check needs MDPs that differ only in dynamics"));
    }
    let (ns, na) = (m1.n_states, m1.n_actions);
    let d0 = uniform_start(ns);
    let v1 = exact_values(m1, pi, &d0)?;
    let v2 = exact_values(m2, pi, &d0)?;
    let lhs = v1.j - v2.j;
    let rho = occupancy(m1, pi, &d0)?;
    let g = m1.gamma;
    let mut expect = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let e1: f64 = m1.row(s, a).iter().zip(&v2.v).map(|(p, v)| p * v).sum();
            let e2: f64 = m2.row(s, a).iter().zip(&v2.v).map(|(p, v)| p * v).sum();
            expect += rho[s * na + a] * (e1 - e2);
        }
    }
    let rhs = if g == 0.0 { 0.0 } else { g / (1.0 - g) * expect };
    let gap = (lhs - rhs).abs();
    Ok(BoundReport {
        kind: BoundKind::Telescoping,
        seed,
        n_states: ns,
        n_actions: na,
        kappa: 0.0,
        epsilon: dynamics_gap(m1, m2)?,
        n: None,
        delta: None,
        lhs,
        rhs,
        margin: -gap,
        holds: gap <= TELESCOPING_TOL,
    })
}

/// Randomized trial generators shared by the CLI and the test suites.
/// Each trial is a pure function of its seed.
pub mod trials {
    use super::*;

    fn sizes(rng: &mut ChaCha8Rng) -> (usize, usize) {
        (rng.random_range(1..=10), rng.random_range(1..=4))
    }

    fn gamma(rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(0.5..0.95)
    }

    pub fn theorem1(seed: u64) -> Result<BoundReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = sizes(&mut rng);
        let (src, tar) = random_mdp_pair(ns, na, gamma(&mut rng), rng.random_range(0.0..=2.0), rng.random())?;
        let mu = random_policy(&mut rng, ns, na);
        let other = random_policy(&mut rng, ns, na);
        let pi_hat = mix_policies(&mu, &other, rng.random_range(0.0..=1.0));
        verify_theorem1(&src, &tar, &mu, &pi_hat, seed)
    }

    pub fn theorem2(seed: u64) -> Result<BoundReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = sizes(&mut rng);
        let (src, _) = random_mdp_pair(ns, na, gamma(&mut rng), 0.0, rng.random())?;
        let src = src.with_one_hot_embeddings();
        let mu_tar = random_policy(&mut rng, ns, na);
        let other = random_policy(&mut rng, ns, na);
        let mu_src = mix_policies(&mu_tar, &other, rng.random_range(0.0..=1.0));
        let pi_eval = random_policy(&mut rng, ns, na);
        verify_theorem2(&src, &mu_src, &mu_tar, &pi_eval, rng.random_range(0.0..=2.0), seed)
    }

    pub const THEOREM3_SAMPLE_SIZES: [usize; 3] = [50, 500, 5_000];

    pub fn theorem3(seed: u64, n: usize, delta: f64) -> Result<FiniteDataTrial> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = sizes(&mut rng);
        let (src, tar) = random_mdp_pair(ns, na, gamma(&mut rng), rng.random_range(0.0..=0.5), rng.random())?;
        let mu = random_policy(&mut rng, ns, na);
        let other = random_policy(&mut rng, ns, na);
        let pi_hat = mix_policies(&mu, &other, rng.random_range(0.0..=0.3));
        let pi_eval = random_policy(&mut rng, ns, na);
        verify_theorem3(&src, &tar, &mu, &pi_hat, &pi_eval, n, delta, seed)
    }

    pub fn telescoping(seed: u64) -> Result<BoundReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = sizes(&mut rng);
        let (m1, m2) = random_mdp_pair(ns, na, gamma(&mut rng), rng.random_range(0.0..=2.0), rng.random())?;
        let pi = random_policy(&mut rng, ns, na);
        verify_telescoping(&m1, &m2, &pi, seed)
    }
}
