//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metacritic::{MetaConfig, MetaLossKind};
use crate::nets::MetaVariant;
use crate::offpac::{Algo, Hyper};
use crate::optim::OptimizerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    /// `None` runs the plain base algorithm.
    pub mc_variant: Option<MetaVariant>,
    pub meta_loss: MetaLossKind,
    pub env: String,
    pub env_seed: u64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    /// 0 disables evaluation.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_optimizer: OptimizerKind,
    pub critic_optimizer: OptimizerKind,
    /// Discount; defaults to the environment's own.
    pub gamma: Option<f64>,
    pub tau: f64,
    pub expl_noise: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub mc_hidden: usize,
    pub mc_lr: f64,
    pub mc_optimizer: OptimizerKind,
    /// Putative-step size; defaults to `actor_lr`.
    pub inner_lr: Option<f64>,
    pub sequential_inner: bool,
    /// Initial effective weight of the parameter-regularizer variant.
    pub reg_init: f64,
    pub replay_capacity: usize,
    pub updates_multiplier: f64,
    pub params_multiplier: f64,
    /// Actor snapshot interval in env steps; 0 disables snapshots.
    pub snapshot_every: u64,
    pub smooth_window: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyper::default();
        let m = MetaConfig::default();
        Self {
            algo: Algo::Ddpg,
            mc_variant: None,
            meta_loss: m.loss,
            env: "pointmass".into(),
            env_seed: 0,
            total_steps: 30_000,
            warmup_steps: 1000,
            eval_every: 1000,
            eval_episodes: 10,
            seeds: vec![0, 1, 2, 3, 4],
            batch_size: h.batch_size,
            val_batch_size: m.val_batch_size,
            actor_lr: h.actor_lr,
            critic_lr: h.critic_lr,
            actor_optimizer: h.actor_optimizer,
            critic_optimizer: h.critic_optimizer,
            gamma: None,
            tau: h.tau,
            expl_noise: h.expl_noise,
            policy_delay: h.policy_delay,
            target_noise: h.target_noise,
            noise_clip: h.noise_clip,
            alpha: h.alpha,
            hidden: h.hidden,
            mc_hidden: crate::nets::meta::META_HIDDEN,
            mc_lr: m.mc_lr,
            mc_optimizer: m.mc_optimizer,
            inner_lr: None,
            sequential_inner: m.sequential_inner,
            reg_init: 1e-3,
            replay_capacity: 100_000,
            updates_multiplier: 1.0,
            params_multiplier: 1.0,
            snapshot_every: 0,
            smooth_window: 30,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn variant_name(v: Option<MetaVariant>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "algo" => self.algo = v.parse()?,
            "mc_variant" => {
                self.mc_variant = match v {
                    "none" => None,
                    other => Some(other.parse().map_err(|e: Error| Error::Config(e.to_string()))?),
                }
            }
            "meta_loss" => self.meta_loss = v.parse()?,
            "env" => self.env = v.to_string(),
            "env_seed" => self.env_seed = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "val_batch_size" => self.val_batch_size = parse(key, v)?,
            "actor_lr" => self.actor_lr = parse(key, v)?,
            "critic_lr" => self.critic_lr = parse(key, v)?,
            "actor_optimizer" => self.actor_optimizer = v.parse()?,
            "critic_optimizer" => self.critic_optimizer = v.parse()?,
            "gamma" => {
                self.gamma = match v {
                    "" | "env" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "tau" => self.tau = parse(key, v)?,
            "expl_noise" => self.expl_noise = parse(key, v)?,
            "policy_delay" => self.policy_delay = parse(key, v)?,
            "target_noise" => self.target_noise = parse(key, v)?,
            "noise_clip" => self.noise_clip = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "mc_hidden" => self.mc_hidden = parse(key, v)?,
            "mc_lr" => self.mc_lr = parse(key, v)?,
            "mc_optimizer" => self.mc_optimizer = v.parse()?,
            "inner_lr" => {
                self.inner_lr = match v {
                    "" | "actor_lr" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "sequential_inner" => self.sequential_inner = parse(key, v)?,
            "reg_init" => self.reg_init = parse(key, v)?,
            "replay_capacity" => self.replay_capacity = parse(key, v)?,
            "updates_multiplier" => self.updates_multiplier = parse(key, v)?,
            "params_multiplier" => self.params_multiplier = parse(key, v)?,
            "snapshot_every" => self.snapshot_every = parse(key, v)?,
            "smooth_window" => self.smooth_window = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !crate::envs::Env::NAMES.contains(&self.env.as_str()) {
            return bad(&format!("unknown env `{}`", self.env));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1");
        }
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive and nonempty");
        }
        if self.mc_hidden == 0 || self.replay_capacity == 0 || self.policy_delay == 0 {
            return bad("mc_hidden, replay_capacity and policy_delay must be positive");
        }
        if !(self.updates_multiplier >= 1.0) || !self.updates_multiplier.is_finite() {
            return bad("updates_multiplier must be >= 1");
        }
        if !(self.params_multiplier >= 1.0) || !self.params_multiplier.is_finite() {
            return bad("params_multiplier must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.gamma.is_some_and(|g| !(g > 0.0 && g < 1.0)) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.alpha < 0.0 {
            return bad("alpha must be nonnegative");
        }
        if self.smooth_window == 0 {
            return bad("smooth_window must be at least 1");
        }
        if self.mc_variant == Some(MetaVariant::ParamReg) && !(self.reg_init > 0.0) {
            return bad("reg_init must be positive");
        }
        for (k, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("mc_lr", self.mc_lr),
            ("expl_noise", self.expl_noise),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
            ("inner_lr", self.inner_lr.unwrap_or(0.0)),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{k} must be a nonnegative number"));
            }
        }
        Ok(())
    }

    /// Learner settings; `env_gamma` fills in an unset discount.
    pub fn hyper(&self, env_gamma: f64) -> Hyper {
        Hyper {
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            actor_optimizer: self.actor_optimizer,
            critic_optimizer: self.critic_optimizer,
            gamma: self.gamma.unwrap_or(env_gamma),
            tau: self.tau,
            expl_noise: self.expl_noise,
            policy_delay: self.policy_delay,
            target_noise: self.target_noise,
            noise_clip: self.noise_clip,
            alpha: self.alpha,
            batch_size: self.batch_size,
            hidden: self.hidden.clone(),
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            loss: self.meta_loss,
            inner_lr: self.inner_lr.unwrap_or(self.actor_lr),
            mc_lr: self.mc_lr,
            mc_optimizer: self.mc_optimizer,
            sequential_inner: self.sequential_inner,
            val_batch_size: self.val_batch_size,
            create_graph: true,
        }
    }

    /// Every key in a form `parse_str` reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("algo", self.algo.to_string()),
            ("mc_variant", variant_name(self.mc_variant)),
            ("meta_loss", self.meta_loss.to_string()),
            ("env", self.env.clone()),
            ("env_seed", self.env_seed.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("seeds", join(&self.seeds)),
            ("batch_size", self.batch_size.to_string()),
            ("val_batch_size", self.val_batch_size.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("actor_optimizer", self.actor_optimizer.to_string()),
            ("critic_optimizer", self.critic_optimizer.to_string()),
            (
                "gamma",
                self.gamma.map_or_else(|| "env".to_string(), |v| v.to_string()),
            ),
            ("tau", self.tau.to_string()),
            ("expl_noise", self.expl_noise.to_string()),
            ("policy_delay", self.policy_delay.to_string()),
            ("target_noise", self.target_noise.to_string()),
            ("noise_clip", self.noise_clip.to_string()),
            ("alpha", self.alpha.to_string()),
            ("hidden", join(&self.hidden)),
            ("mc_hidden", self.mc_hidden.to_string()),
            ("mc_lr", self.mc_lr.to_string()),
            ("mc_optimizer", self.mc_optimizer.to_string()),
            (
                "inner_lr",
                self.inner_lr.map_or_else(|| "actor_lr".to_string(), |v| v.to_string()),
            ),
            ("sequential_inner", self.sequential_inner.to_string()),
            ("reg_init", self.reg_init.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("updates_multiplier", self.updates_multiplier.to_string()),
            ("params_multiplier", self.params_multiplier.to_string()),
            ("snapshot_every", self.snapshot_every.to_string()),
            ("smooth_window", self.smooth_window.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.algo = Algo::Sac;
        cfg.mc_variant = Some(MetaVariant::FeatureStateAction);
        cfg.inner_lr = Some(3e-4);
        cfg.seeds = vec![7, 9];
        cfg.hidden = vec![32, 16];
        cfg.updates_multiplier = 1.25;
        assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse_str("algo = td3\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(RunConfig::parse_str("algo = td3\nalgo = sac\n").is_err());
    }

    #[test]
    fn invalid_values_rejected_before_work() {
        assert!(RunConfig::parse_str("updates_multiplier = 0.5").is_err());
        assert!(RunConfig::parse_str("env = mujoco").is_err());
        assert!(RunConfig::parse_str("seeds = ").is_err());
        assert!(RunConfig::parse_str("algo = ppo").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse_str("# a comment\n\nenv = pendulum\n").unwrap();
        assert_eq!(cfg.env, "pendulum");
    }
}
