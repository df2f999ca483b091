//! Experiment configuration: INI-style `key = value` text grouped into
//! `[env] [data] [pretrain] [correction] [agent] [run]` sections.
//!
//! Sweepable keys (`correction.lambda`, `correction.alpha`, `agent.beta`)
//! take comma lists. Hidden layer sizes are written like `256x256`.
//! Unknown or repeated keys are errors, and so is any out-of-range value.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::envs::{BehaviorPolicy, PointMassConfig, EXPERT_NOISE, MEDIUM_NOISE};
use crate::error::{Error, Result};
use crate::target_models::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quality {
    Expert,
    Medium,
    Random,
}

impl Quality {
    pub fn name(self) -> &'static str {
        match self {
            Quality::Expert => "expert",
            Quality::Medium => "medium",
            Quality::Random => "random",
        }
    }

    /// Behavior policy for a domain; scripted controllers know their own
    /// domain's dynamics.
    pub fn policy(self, env: &PointMassConfig) -> BehaviorPolicy {
        match self {
            Quality::Expert => BehaviorPolicy::scripted(env.clone(), EXPERT_NOISE),
            Quality::Medium => BehaviorPolicy::scripted(env.clone(), MEDIUM_NOISE),
            Quality::Random => BehaviorPolicy::UniformRandom,
        }
    }
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Quality::Expert),
            "medium" => Ok(Quality::Medium),
            "random" => Ok(Quality::Random),
            other => Err(Error::config(format!("unknown dataset quality {other:?} (expert, medium, random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source_size: usize,
    pub target_size: usize,
    pub source_quality: Quality,
    pub target_quality: Quality,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source_size: 50_000, target_size: 5_000, source_quality: Quality::Medium, target_quality: Quality::Medium }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source_env: PointMassConfig,
    pub target_env: PointMassConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub clip: f64,
    pub agent: AgentConfig,
    pub betas: Vec<f32>,
    pub seed: u64,
    /// Seed of the evaluation start states and reference scores.
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let source_env = PointMassConfig::default();
        let target_env = PointMassConfig { gravity_scale: 0.5, ..source_env.clone() };
        Self {
            source_env,
            target_env,
            data: DataConfig::default(),
            pretrain: PretrainConfig { hidden: vec![256, 256], ..Default::default() },
            lambdas: vec![1.0, 5.0],
            alphas: vec![0.5],
            clip: 1.0,
            agent: AgentConfig { hidden: vec![256, 256], ..Default::default() },
            betas: vec![0.5, 5.0],
            seed: 0,
            eval_seed: 1_000_003,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>> = value.split(',').map(|v| parse(key, v.trim())).collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_hidden(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split('x').map(|v| parse::<usize>(key, v.trim())).collect()
}

fn fmt_list<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn fmt_hidden(h: &[usize]) -> String {
    h.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn range(ok: bool, key: &str, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("{key} out of range: must be {what}")))
    }
}

impl ExperimentConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let v = value.trim();
        match (section, key) {
            ("env", "gravity") => {
                let x = parse(k, v)?;
                self.source_env.gravity = x;
                self.target_env.gravity = x;
            }
            ("env", "friction") => {
                let x = parse(k, v)?;
                self.source_env.friction = x;
                self.target_env.friction = x;
            }
            ("env", "thrust_gain") => {
                let x = parse(k, v)?;
                self.source_env.thrust_gain = x;
                self.target_env.thrust_gain = x;
            }
            ("env", "dt") => {
                let x = parse(k, v)?;
                self.source_env.dt = x;
                self.target_env.dt = x;
            }
            ("env", "episode_len") => {
                let x = parse(k, v)?;
                self.source_env.episode_len = x;
                self.target_env.episode_len = x;
            }
            ("env", "goal_x") => {
                let x = parse(k, v)?;
                self.source_env.goal[0] = x;
                self.target_env.goal[0] = x;
            }
            ("env", "goal_y") => {
                let x = parse(k, v)?;
                self.source_env.goal[1] = x;
                self.target_env.goal[1] = x;
            }
            ("env", "pos_bound") => {
                let x = parse(k, v)?;
                self.source_env.pos_bound = x;
                self.target_env.pos_bound = x;
            }
            ("env", "vel_bound") => {
                let x = parse(k, v)?;
                self.source_env.vel_bound = x;
                self.target_env.vel_bound = x;
            }
            ("env", "action_penalty") => {
                let x = parse(k, v)?;
                self.source_env.action_penalty = x;
                self.target_env.action_penalty = x;
            }
            ("env", "source_gravity_scale") => self.source_env.gravity_scale = parse(k, v)?,
            ("env", "source_friction_scale") => self.source_env.friction_scale = parse(k, v)?,
            ("env", "source_gain_scale_x") => self.source_env.gain_scale[0] = parse(k, v)?,
            ("env", "source_gain_scale_y") => self.source_env.gain_scale[1] = parse(k, v)?,
            ("env", "target_gravity_scale") => self.target_env.gravity_scale = parse(k, v)?,
            ("env", "target_friction_scale") => self.target_env.friction_scale = parse(k, v)?,
            ("env", "target_gain_scale_x") => self.target_env.gain_scale[0] = parse(k, v)?,
            ("env", "target_gain_scale_y") => self.target_env.gain_scale[1] = parse(k, v)?,

            ("data", "source_size") => self.data.source_size = parse(k, v)?,
            ("data", "target_size") => self.data.target_size = parse(k, v)?,
            ("data", "source_quality") => self.data.source_quality = v.parse()?,
            ("data", "target_quality") => self.data.target_quality = v.parse()?,

            ("pretrain", "steps") => self.pretrain.steps = parse(k, v)?,
            ("pretrain", "batch_size") => self.pretrain.batch_size = parse(k, v)?,
            ("pretrain", "lr") => self.pretrain.lr = parse(k, v)?,
            ("pretrain", "hidden") => self.pretrain.hidden = parse_hidden(k, v)?,
            ("pretrain", "holdout") => self.pretrain.holdout_frac = parse(k, v)?,

            ("correction", "lambda") => self.lambdas = parse_list(k, v)?,
            ("correction", "alpha") => self.alphas = parse_list(k, v)?,
            ("correction", "clip") => self.clip = parse(k, v)?,

            ("agent", "beta") => self.betas = parse_list(k, v)?,
            ("agent", "gradient_steps") => self.agent.gradient_steps = parse(k, v)?,
            ("agent", "batch_size") => self.agent.batch_size = parse(k, v)?,
            ("agent", "gamma") => self.agent.gamma = parse(k, v)?,
            ("agent", "tau") => self.agent.tau = parse(k, v)?,
            ("agent", "lr") => self.agent.lr = parse(k, v)?,
            ("agent", "hidden") => self.agent.hidden = parse_hidden(k, v)?,
            ("agent", "eval_every") => self.agent.eval_every = parse(k, v)?,
            ("agent", "eval_episodes") => self.agent.eval_episodes = parse(k, v)?,
            ("agent", "final_evals") => self.agent.final_evals = parse(k, v)?,
            ("agent", "log_every") => self.agent.log_every = parse(k, v)?,

            ("run", "seed") => self.seed = parse(k, v)?,
            ("run", "eval_seed") => self.eval_seed = parse(k, v)?,
            _ => return Err(Error::config(format!("unknown key {full}"))),
        }
        Ok(())
    }

    /// Applies an override written as `section.key=value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config(format!("override key {path:?} is not section.key")))?;
        self.set(section.trim(), key.trim(), value)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let at = |msg: String| Error::config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| at(format!("malformed section header {line:?}")))?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let sec = section.as_deref().ok_or_else(|| at(format!("key {:?} appears before any section", key.trim())))?;
            let full = format!("{sec}.{}", key.trim());
            if !seen.insert(full.clone()) {
                return Err(at(format!("duplicate key {full}")));
            }
            cfg.set(sec, key.trim(), value).map_err(|e| match e {
                Error::Config(m) => at(m),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, env) in [("source", &self.source_env), ("target", &self.target_env)] {
            env.validate().map_err(|e| Error::config(format!("{name} environment: {e}")))?;
        }
        range(self.data.source_size >= 1, "data.source_size", ">= 1")?;
        range(self.data.target_size >= 2, "data.target_size", ">= 2")?;
        range(self.pretrain.steps >= 1, "pretrain.steps", ">= 1")?;
        self.pretrain.validate()?;
        range(
            self.lambdas.iter().all(|l| l.is_finite() && *l >= 0.0),
            "correction.lambda",
            "finite and >= 0",
        )?;
        range(self.alphas.iter().all(|a| a.is_finite() && *a >= 0.0), "correction.alpha", "finite and >= 0")?;
        range(self.clip.is_finite() && self.clip > 0.0, "correction.clip", "> 0")?;
        range(self.betas.iter().all(|b| b.is_finite() && *b >= 0.0), "agent.beta", "finite and >= 0")?;
        self.agent.validate()?;
        Ok(())
    }

    /// Every key with its effective value; parsing this text reproduces `self`.
    pub fn to_ini(&self) -> String {
        let (s, t) = (&self.source_env, &self.target_env);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("[env]\ngravity", format!("{:?}", s.gravity));
        kv("friction", format!("{:?}", s.friction));
        kv("thrust_gain", format!("{:?}", s.thrust_gain));
        kv("dt", format!("{:?}", s.dt));
        kv("episode_len", s.episode_len.to_string());
        kv("goal_x", format!("{:?}", s.goal[0]));
        kv("goal_y", format!("{:?}", s.goal[1]));
        kv("pos_bound", format!("{:?}", s.pos_bound));
        kv("vel_bound", format!("{:?}", s.vel_bound));
        kv("action_penalty", format!("{:?}", s.action_penalty));
        kv("source_gravity_scale", format!("{:?}", s.gravity_scale));
        kv("source_friction_scale", format!("{:?}", s.friction_scale));
        kv("source_gain_scale_x", format!("{:?}", s.gain_scale[0]));
        kv("source_gain_scale_y", format!("{:?}", s.gain_scale[1]));
        kv("target_gravity_scale", format!("{:?}", t.gravity_scale));
        kv("target_friction_scale", format!("{:?}", t.friction_scale));
        kv("target_gain_scale_x", format!("{:?}", t.gain_scale[0]));
        kv("target_gain_scale_y", format!("{:?}", t.gain_scale[1]));
        kv("\n[data]\nsource_size", self.data.source_size.to_string());
        kv("target_size", self.data.target_size.to_string());
        kv("source_quality", self.data.source_quality.name().into());
        kv("target_quality", self.data.target_quality.name().into());
        let p = &self.pretrain;
        kv("\n[pretrain]\nsteps", p.steps.to_string());
        kv("batch_size", p.batch_size.to_string());
        kv("lr", format!("{:?}", p.lr));
        kv("hidden", fmt_hidden(&p.hidden));
        kv("holdout", format!("{:?}", p.holdout_frac));
        kv("\n[correction]\nlambda", fmt_list(&self.lambdas));
        kv("alpha", fmt_list(&self.alphas));
        kv("clip", format!("{:?}", self.clip));
        let a = &self.agent;
        kv("\n[agent]\nbeta", fmt_list(&self.betas));
        kv("gradient_steps", a.gradient_steps.to_string());
        kv("batch_size", a.batch_size.to_string());
        kv("gamma", format!("{:?}", a.gamma));
        kv("tau", format!("{:?}", a.tau));
        kv("lr", format!("{:?}", a.lr));
        kv("hidden", fmt_hidden(&a.hidden));
        kv("eval_every", a.eval_every.to_string());
        kv("eval_episodes", a.eval_episodes.to_string());
        kv("final_evals", a.final_evals.to_string());
        kv("log_every", a.log_every.to_string());
        kv("\n[run]\nseed", self.seed.to_string());
        kv("eval_seed", self.eval_seed.to_string());
        out
    }
}

/// Directory name of one correction setting, e.g. `lambda_1_alpha_0.5`.
pub fn correction_dir_name(lambda: f64, alpha: f64) -> String {
    format!("lambda_{lambda}_alpha_{alpha}")
}

pub fn beta_dir_name(beta: f32) -> String {
    format!("beta_{beta}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.lambdas, vec![1.0, 5.0]);
        assert_eq!(cfg.alphas, vec![0.5]);
        assert_eq!(cfg.betas, vec![0.5, 5.0]);
        assert_eq!(cfg.agent.hidden, vec![256, 256]);
        assert_eq!((cfg.agent.gamma, cfg.agent.tau, cfg.agent.lr), (0.99, 5e-3, 3e-4));
        assert_eq!(cfg.agent.batch_size, 256);
        assert_eq!(cfg.pretrain.steps, 50_000);
    }

    #[test]
    fn negative_lambda_is_a_range_error() {
        let err = ExperimentConfig::parse_str("[correction]\nlambda = -1").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("correction.lambda")), "{err}");
    }

    #[test]
    fn duplicate_key_is_named() {
        let err = ExperimentConfig::parse_str("[agent]\nbeta = 1\nbeta = 2\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("duplicate key agent.beta")), "{err}");
    }

    #[test]
    fn unknown_and_malformed_keys() {
        assert!(ExperimentConfig::parse_str("[agent]\nwarp = 9").is_err());
        assert!(ExperimentConfig::parse_str("beta = 1").is_err());
        assert!(ExperimentConfig::parse_str("[agent]\ngamma = fast").is_err());
        assert!(ExperimentConfig::parse_str("[agent]\ngamma = 1.0").is_err());
        assert!(ExperimentConfig::parse_str("[data]\nsource_quality = great").is_err());
    }

    #[test]
    fn lists_hidden_and_comments() {
        let text = "# sweep\n[correction]\nlambda = 0, 1.0 ,5\n[agent]\nhidden = 64x64\n; done\n";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.lambdas, vec![0.0, 1.0, 5.0]);
        assert_eq!(cfg.agent.hidden, vec![64, 64]);
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("env.target_gain_scale_x=0.5").unwrap();
        cfg.apply_override("agent.lr = 0.001").unwrap();
        cfg.apply_override("run.seed=42").unwrap();
        cfg.apply_override("correction.lambda=0.1,0.2").unwrap();
        let again = ExperimentConfig::parse_str(&cfg.to_ini()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_override_syntax() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_override("agent.beta").is_err());
        assert!(cfg.apply_override("beta=1").is_err());
    }

    #[test]
    fn run_directory_names() {
        assert_eq!(correction_dir_name(1.0, 0.5), "lambda_1_alpha_0.5");
        assert_eq!(correction_dir_name(0.0, 0.5), "lambda_0_alpha_0.5");
        assert_eq!(beta_dir_name(5.0), "beta_5");
    }
}
