//! DDPG, TD3 and SAC updates.

use std::fmt;
use std::str::FromStr;

use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nets::{ActMode, Actor, Critic, HeadKind};
use crate::optim::{Optimizer, OptimizerKind};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Ddpg,
    Td3,
    Sac,
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algo::Ddpg),
            "td3" => Ok(Algo::Td3),
            "sac" => Ok(Algo::Sac),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Ddpg => "ddpg",
            Algo::Td3 => "td3",
            Algo::Sac => "sac",
        })
    }
}

impl Algo {
    pub fn twin_critic(self) -> bool {
        self != Algo::Ddpg
    }

    pub fn head_kind(self) -> HeadKind {
        match self {
            Algo::Sac => HeadKind::Gaussian,
            _ => HeadKind::Deterministic,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_optimizer: OptimizerKind,
    pub critic_optimizer: OptimizerKind,
    pub gamma: f64,
    pub tau: f64,
    /// Exploration noise std as a fraction of the action bound.
    pub expl_noise: f64,
    pub policy_delay: u64,
    /// Target smoothing noise std and clip, as fractions of the action bound.
    pub target_noise: f64,
    pub noise_clip: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            actor_optimizer: OptimizerKind::Adam,
            critic_optimizer: OptimizerKind::Adam,
            gamma: 0.99,
            tau: 0.005,
            expl_noise: 0.1,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            alpha: 0.2,
            batch_size: 64,
            hidden: vec![64, 64],
        }
    }
}

/// Per-iteration losses. `actor_loss` is the actor's critic-provided loss on
/// the training batch, present when the actor was updated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterMetrics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub mcritic_loss: Option<f64>,
    pub meta_loss: Option<f64>,
}

/// What an actor step reports back to the iteration skeleton.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorStepMetrics {
    pub actor_loss: f64,
    pub mcritic_loss: Option<f64>,
    pub meta_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AlgoState {
    pub algo: Algo,
    pub hyper: Hyper,
    pub action_bound: f64,
    pub actor: Actor,
    pub critic: Critic,
    /// Absent for SAC, whose targets use the current actor.
    pub target_actor: Option<Actor>,
    pub target_critic: Critic,
    pub actor_opt: Optimizer,
    pub critic_opt: Optimizer,
    pub iterations: u64,
    pub actor_updates: u64,
}

/// `(n, d)` standard normal draws.
pub fn normal_tensor(n: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(n, d, data).expect("sized to fit")
}

fn check_finite(step: u64, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("{what} = {v}"),
        })
    }
}

/// The actor's critic-provided loss on `states`. Critic parameters are
/// detached here, so the result only carries gradient to `phi`.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<'g>(
    algo: Algo,
    alpha: f64,
    actor: &Actor,
    critic: &Critic,
    phi: &[Var<'g>],
    theta: &[Var<'g>],
    states: Var<'g>,
    noise: Option<&Tensor>,
) -> Result<Var<'g>> {
    if states.shape()[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    let theta: Vec<Var<'g>> = theta.iter().map(|t| t.detach()).collect();
    match algo {
        Algo::Ddpg | Algo::Td3 => {
            let a = actor.forward(phi, states, ActMode::Deterministic, None)?.action;
            let (q1, _) = critic.forward(&theta, states, a)?;
            Ok(q1.mean().neg())
        }
        Algo::Sac => {
            let out = actor.forward(phi, states, ActMode::Sample, noise)?;
            let q = critic.min_q(&theta, states, out.action)?;
            let log_prob = out.log_prob.expect("sample mode yields a log-density");
            Ok(log_prob.scale(alpha).sub(q)?.mean())
        }
    }
}

impl AlgoState {
    pub fn new(algo: Algo, hyper: Hyper, spec: &EnvSpec, rng: &mut impl Rng) -> Self {
        let scale = vec![spec.action_bound; spec.action_dim];
        let actor = Actor::init(spec.state_dim, &hyper.hidden, scale, algo.head_kind(), rng);
        let critic = Critic::init(
            spec.state_dim,
            spec.action_dim,
            &hyper.hidden,
            algo.twin_critic(),
            rng,
        );
        Self::from_parts(algo, hyper, spec.action_bound, actor, critic)
    }

    pub fn from_parts(algo: Algo, hyper: Hyper, action_bound: f64, actor: Actor, critic: Critic) -> Self {
        let target_actor = (algo != Algo::Sac).then(|| actor.clone());
        let target_critic = critic.clone();
        Self {
            algo,
            actor_opt: Optimizer::new(hyper.actor_optimizer, hyper.actor_lr),
            critic_opt: Optimizer::new(hyper.critic_optimizer, hyper.critic_lr),
            hyper,
            action_bound,
            actor,
            critic,
            target_actor,
            target_critic,
            iterations: 0,
            actor_updates: 0,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.actor.action_dim()
    }

    /// Whether the iteration numbered `iteration` (from 1) updates the actor.
    pub fn actor_due(&self, iteration: u64) -> bool {
        match self.algo {
            Algo::Td3 => iteration % self.hyper.policy_delay.max(1) == 0,
            _ => true,
        }
    }

    /// Whether the target computation consumes per-update noise.
    pub fn critic_uses_noise(&self) -> bool {
        self.algo != Algo::Ddpg
    }

    pub fn actor_loss<'g>(
        &self,
        phi: &[Var<'g>],
        theta: &[Var<'g>],
        states: Var<'g>,
        noise: Option<&Tensor>,
    ) -> Result<Var<'g>> {
        actor_loss(self.algo, self.hyper.alpha, &self.actor, &self.critic, phi, theta, states, noise)
    }

    /// Detached regression targets `y`, `(n, 1)`. `policy` binds the target
    /// actor (DDPG/TD3) or the current actor (SAC).
    pub fn td_targets<'g>(
        &self,
        g: &'g Graph,
        target_theta: &[Var<'g>],
        policy: &[Var<'g>],
        batch: &Batch,
        noise: Option<&Tensor>,
    ) -> Result<Var<'g>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let s2 = g.constant(batch.next_states.clone());
        let r = g.constant(batch.rewards.clone());
        let not_done = g.constant(batch.dones.map(|d| 1.0 - d));
        let bound = self.action_bound;
        let future = match self.algo {
            Algo::Ddpg => {
                let ta = self.target_actor.as_ref().expect("ddpg keeps a target actor");
                let a2 = ta.forward(policy, s2, ActMode::Deterministic, None)?.action;
                self.target_critic.forward(target_theta, s2, a2)?.0
            }
            Algo::Td3 => {
                let ta = self.target_actor.as_ref().expect("td3 keeps a target actor");
                let noise = noise.ok_or(Error::MissingNoise)?;
                let (sigma, clip) = (self.hyper.target_noise * bound, self.hyper.noise_clip * bound);
                let eps = g.constant(noise.map(|e| (sigma * e).clamp(-clip, clip)));
                let a2 = ta.forward(policy, s2, ActMode::Deterministic, None)?.action;
                let a2 = a2.add(eps)?.clamp(-bound, bound);
                self.target_critic.min_q(target_theta, s2, a2)?
            }
            Algo::Sac => {
                let out = self.actor.forward(policy, s2, ActMode::Sample, noise)?;
                let q = self.target_critic.min_q(target_theta, s2, out.action)?;
                let lp = out.log_prob.expect("sample mode yields a log-density");
                q.sub(lp.scale(self.hyper.alpha))?
            }
        };
        Ok(r.add(not_done.mul(future)?.scale(self.hyper.gamma))?.detach())
    }

    /// Mean squared TD error, summed over twin critics.
    pub fn critic_loss<'g>(
        &self,
        theta: &[Var<'g>],
        target_theta: &[Var<'g>],
        policy: &[Var<'g>],
        batch: &Batch,
        noise: Option<&Tensor>,
    ) -> Result<Var<'g>> {
        let g = theta
            .first()
            .ok_or_else(|| Error::Architecture("critic has no parameters".into()))?
            .graph();
        let y = self.td_targets(g, target_theta, policy, batch, noise)?;
        let s = g.constant(batch.states.clone());
        let a = g.constant(batch.actions.clone());
        let (q1, q2) = self.critic.forward(theta, s, a)?;
        let mut loss = q1.sub(y)?.square().mean();
        if let Some(q2) = q2 {
            loss = loss.add(q2.sub(y)?.square().mean())?;
        }
        Ok(loss)
    }

    pub fn bind_target_policy<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        match &self.target_actor {
            Some(ta) => ta.bind_constants(g),
            None => self.actor.bind_constants(g),
        }
    }

    /// Regression targets as plain values.
    pub fn critic_targets(&self, batch: &Batch, noise: Option<&Tensor>) -> Result<Tensor> {
        let g = Graph::new();
        let target_theta = self.target_critic.bind_constants(&g);
        let policy = self.bind_target_policy(&g);
        let y = self.td_targets(&g, &target_theta, &policy, batch, noise)?;
        Ok(y.value().as_ref().clone())
    }

    /// One gradient step on the TD regression; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &Batch, noise: Option<&Tensor>) -> Result<f64> {
        let g = Graph::new();
        let theta = self.critic.bind(&g);
        let target_theta = self.target_critic.bind_constants(&g);
        let policy = self.bind_target_policy(&g);
        let loss = self.critic_loss(&theta, &target_theta, &policy, batch, noise)?;
        let value = check_finite(self.iterations, "critic loss", loss.item())?;
        let grads = g.gradients(loss, &theta)?;
        self.critic_opt.step(self.critic.params_mut(), &grads)?;
        Ok(value)
    }

    /// Actor loss and its gradient at the current parameters.
    pub fn actor_gradient(&self, batch: &Batch, noise: Option<&Tensor>) -> Result<(f64, Vec<Tensor>)> {
        let g = Graph::new();
        let phi = self.actor.bind(&g);
        let theta = self.critic.bind_constants(&g);
        let s = g.constant(batch.states.clone());
        let loss = self.actor_loss(&phi, &theta, s, noise)?;
        let value = check_finite(self.iterations, "actor loss", loss.item())?;
        Ok((value, g.gradients(loss, &phi)?))
    }

    pub fn apply_actor_gradient(&mut self, grads: &[Tensor]) -> Result<()> {
        self.actor_opt.step(self.actor.params_mut(), grads)
    }

    /// Plain actor step on the critic-provided loss.
    pub fn vanilla_actor_step(&mut self, batch: &Batch, noise: Option<&Tensor>) -> Result<ActorStepMetrics> {
        let (loss, grads) = self.actor_gradient(batch, noise)?;
        self.apply_actor_gradient(&grads)?;
        Ok(ActorStepMetrics {
            actor_loss: loss,
            ..Default::default()
        })
    }

    /// Training-time action: gaussian noise on the deterministic action
    /// (DDPG/TD3) or a policy sample (SAC), clamped to the bound.
    pub fn exploration_action(&self, state: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let bound = self.action_bound;
        let d = self.action_dim();
        let mut action = match self.algo {
            Algo::Sac => {
                let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                self.actor.act(state, ActMode::Sample, Some(&eps))?.0
            }
            _ => {
                let mut a = self.actor.act(state, ActMode::Deterministic, None)?.0;
                let sigma = self.hyper.expl_noise * bound;
                for v in a.iter_mut() {
                    *v += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                a
            }
        };
        for v in action.iter_mut() {
            *v = v.clamp(-bound, bound);
        }
        Ok(action)
    }

    /// Noise-free action used for evaluation.
    pub fn eval_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mode = match self.algo {
            Algo::Sac => ActMode::Mean,
            _ => ActMode::Deterministic,
        };
        Ok(self.actor.act(state, mode, None)?.0)
    }

    fn soft_update_actor(&mut self) -> Result<()> {
        let tau = self.hyper.tau;
        if let Some(ta) = &mut self.target_actor {
            crate::nets::polyak(&mut ta.feature, &self.actor.feature, tau)?;
            crate::nets::polyak(&mut ta.head, &self.actor.head, tau)?;
        }
        Ok(())
    }

    /// One gradient-step block. The sampling stream is consumed in a fixed
    /// order: training batch indices, critic target noise (TD3/SAC), actor
    /// noise (SAC, only when the actor is due), then whatever `actor_step`
    /// draws.
    pub fn iteration_with<R, F>(&mut self, buffer: &ReplayBuffer, rng: &mut R, actor_step: F) -> Result<IterMetrics>
    where
        R: Rng,
        F: FnOnce(&mut AlgoState, &Batch, Option<&Tensor>, &mut R) -> Result<ActorStepMetrics>,
    {
        self.iterations += 1;
        let n = self.hyper.batch_size;
        let d = self.action_dim();
        let batch = buffer.sample(n, rng)?;
        let critic_noise = self.critic_uses_noise().then(|| normal_tensor(n, d, rng));
        let critic_loss = self.critic_update(&batch, critic_noise.as_ref())?;

        let mut metrics = IterMetrics {
            critic_loss,
            ..Default::default()
        };
        let due = self.actor_due(self.iterations);
        if due {
            let actor_noise = (self.algo == Algo::Sac).then(|| normal_tensor(n, d, rng));
            let m = actor_step(self, &batch, actor_noise.as_ref(), rng)?;
            self.actor_updates += 1;
            metrics.actor_loss = Some(m.actor_loss);
            metrics.mcritic_loss = m.mcritic_loss;
            metrics.meta_loss = m.meta_loss;
        }

        let tau = self.hyper.tau;
        match self.algo {
            Algo::Ddpg | Algo::Sac => {
                self.target_critic.polyak_from(&self.critic, tau)?;
                self.soft_update_actor()?;
            }
            Algo::Td3 => {
                if due {
                    self.target_critic.polyak_from(&self.critic, tau)?;
                    self.soft_update_actor()?;
                }
            }
        }
        Ok(metrics)
    }

    pub fn vanilla_iteration(&mut self, buffer: &ReplayBuffer, rng: &mut impl Rng) -> Result<IterMetrics> {
        self.iteration_with(buffer, rng, |state, batch, noise, _| state.vanilla_actor_step(batch, noise))
    }
}
