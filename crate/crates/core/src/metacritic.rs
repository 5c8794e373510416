//! Online meta-critic: a learned auxiliary actor loss `h_omega` trained so
//! that an actor step taken with it lowers the critic-provided loss on a
//! fresh validation batch.

use std::fmt;
use std::str::FromStr;

use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nets::MetaCriticNet;
use crate::offpac::{normal_tensor, ActorStepMetrics, Algo, AlgoState, IterMetrics};
use crate::optim::{Optimizer, OptimizerKind};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaLossKind {
    /// `L(d_val; phi_new)`
    Plain,
    /// `tanh(L(d_val; phi_new) - L(d_val; phi_old))` with the second term
    /// held constant.
    Clip,
}

impl FromStr for MetaLossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(MetaLossKind::Plain),
            "clip" => Ok(MetaLossKind::Clip),
            other => Err(Error::Config(format!("unknown meta-loss `{other}`"))),
        }
    }
}

impl fmt::Display for MetaLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaLossKind::Plain => "plain",
            MetaLossKind::Clip => "clip",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub loss: MetaLossKind,
    /// Step size of the putative actor updates.
    pub inner_lr: f64,
    pub mc_lr: f64,
    pub mc_optimizer: OptimizerKind,
    /// Evaluate the auxiliary gradient at `phi_old` instead of `phi`.
    pub sequential_inner: bool,
    pub val_batch_size: usize,
    /// Build the inner step with a second-order path. Only tests turn this
    /// off, to check that the missing path is reported.
    pub create_graph: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            loss: MetaLossKind::Clip,
            inner_lr: 1e-3,
            mc_lr: 1e-3,
            mc_optimizer: OptimizerKind::Sgd,
            sequential_inner: false,
            val_batch_size: 64,
            create_graph: true,
        }
    }
}

/// Meta-critic network, its settings and its optimiser.
#[derive(Clone, Debug)]
pub struct MetaCritic {
    pub net: MetaCriticNet,
    pub cfg: MetaConfig,
    pub opt: Optimizer,
}

impl MetaCritic {
    pub fn new(net: MetaCriticNet, cfg: MetaConfig) -> Self {
        let opt = Optimizer::new(cfg.mc_optimizer, cfg.mc_lr);
        Self { net, cfg, opt }
    }
}

/// The two trial actor parameter sets of one iteration, living in graph `'g`.
pub struct PutativeUpdate<'g> {
    /// Live actor parameters the gradients were taken at.
    pub phi: Vec<Var<'g>>,
    /// `phi - eta grad L_critic`, constant.
    pub phi_old: Vec<Var<'g>>,
    /// `phi_old - eta grad h_omega`, a function of `omega`.
    pub phi_new: Vec<Var<'g>>,
    pub omega: Vec<Var<'g>>,
    pub grad_critic: Vec<Tensor>,
    pub grad_mcritic: Vec<Tensor>,
    pub l_critic_trn: f64,
    pub l_mcritic_trn: f64,
}

/// Putative actor updates on the training batch. The live actor is not
/// modified. `noise` is the SAC reparameterization noise for `d_trn`.
pub fn meta_train<'g>(
    g: &'g Graph,
    base: &AlgoState,
    mc: &MetaCritic,
    d_trn: &Batch,
    noise: Option<&Tensor>,
) -> Result<PutativeUpdate<'g>> {
    if d_trn.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let eta = mc.cfg.inner_lr;
    let phi = base.actor.bind(g);
    let theta = base.critic.bind_constants(g);
    let omega = mc.net.bind(g);
    let states = g.constant(d_trn.states.clone());
    let actions = g.constant(d_trn.actions.clone());

    let l_critic = base.actor_loss(&phi, &theta, states, noise)?;
    let grad_critic = g.gradients(l_critic, &phi)?;
    let phi_old_values: Vec<Tensor> = base
        .actor
        .params()
        .into_iter()
        .zip(&grad_critic)
        .map(|(p, gc)| {
            let mut t = p.clone();
            t.axpy(-eta, gc)?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let phi_old: Vec<Var<'g>> = phi_old_values.iter().map(|t| g.constant(t.clone())).collect();

    // Point at which the auxiliary gradient is taken.
    let at: Vec<Var<'g>> = if mc.cfg.sequential_inner {
        phi_old_values.into_iter().map(|t| g.variable(t)).collect()
    } else {
        phi.clone()
    };
    let h = mc.net.loss(&omega, &base.actor, &at, states, Some(actions))?;
    let grad_h = g.backward(h, &at, mc.cfg.create_graph)?;
    let phi_new = phi_old
        .iter()
        .zip(&grad_h)
        .map(|(p, gh)| Ok(p.sub(gh.scale(eta))?))
        .collect::<Result<Vec<_>>>()?;

    Ok(PutativeUpdate {
        phi,
        phi_old,
        phi_new,
        omega,
        grad_critic,
        grad_mcritic: grad_h.iter().map(|v| v.value().as_ref().clone()).collect(),
        l_critic_trn: l_critic.item(),
        l_mcritic_trn: h.item(),
    })
}

fn validation_loss<'g>(
    g: &'g Graph,
    base: &AlgoState,
    params: &[Var<'g>],
    d_val: &Batch,
    noise: Option<&Tensor>,
) -> Result<Var<'g>> {
    if d_val.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let theta = base.critic.bind_constants(g);
    let states = g.constant(d_val.states.clone());
    base.actor_loss(params, &theta, states, noise)
}

/// `L(d_val; phi_new)`.
pub fn meta_loss_plain<'g>(
    g: &'g Graph,
    base: &AlgoState,
    pu: &PutativeUpdate<'g>,
    d_val: &Batch,
    noise: Option<&Tensor>,
) -> Result<Var<'g>> {
    validation_loss(g, base, &pu.phi_new, d_val, noise)
}

/// `tanh(L(d_val; phi_new) - L(d_val; phi_old))`, baseline detached.
pub fn meta_loss_clip<'g>(
    g: &'g Graph,
    base: &AlgoState,
    pu: &PutativeUpdate<'g>,
    d_val: &Batch,
    noise: Option<&Tensor>,
) -> Result<Var<'g>> {
    let new = validation_loss(g, base, &pu.phi_new, d_val, noise)?;
    let old = validation_loss(g, base, &pu.phi_old, d_val, noise)?.detach();
    Ok(new.sub(old)?.tanh())
}

pub fn meta_loss<'g>(
    g: &'g Graph,
    base: &AlgoState,
    mc: &MetaCritic,
    pu: &PutativeUpdate<'g>,
    d_val: &Batch,
    noise: Option<&Tensor>,
) -> Result<Var<'g>> {
    match mc.cfg.loss {
        MetaLossKind::Plain => meta_loss_plain(g, base, pu, d_val, noise),
        MetaLossKind::Clip => meta_loss_clip(g, base, pu, d_val, noise),
    }
}

/// `grad_omega` of a meta-loss, failing if the loss cannot reach `omega`.
pub fn meta_gradient<'g>(g: &'g Graph, loss: Var<'g>, omega: &[Var<'g>]) -> Result<Vec<Tensor>> {
    if !omega.iter().any(|w| g.depends_on(loss, *w)) {
        return Err(Error::NoSecondOrderPath);
    }
    Ok(g.gradients(loss, omega)?)
}

/// Actor takes the summed step `-(grad L_critic + grad h)` through its
/// optimiser; omega descends the meta-loss.
pub fn meta_optimise<'g>(
    g: &'g Graph,
    base: &mut AlgoState,
    mc: &mut MetaCritic,
    pu: &PutativeUpdate<'g>,
    meta: Var<'g>,
) -> Result<ActorStepMetrics> {
    let step = base.iterations;
    let meta_value = meta.item();
    if !meta_value.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!("meta-loss = {meta_value}"),
        });
    }
    let grad_omega = meta_gradient(g, meta, &pu.omega)?;
    let combined: Vec<Tensor> = pu
        .grad_critic
        .iter()
        .zip(&pu.grad_mcritic)
        .map(|(a, b)| a.add(b))
        .collect::<std::result::Result<_, _>>()?;
    base.apply_actor_gradient(&combined)?;
    mc.opt.step(mc.net.params_mut(), &grad_omega)?;
    Ok(ActorStepMetrics {
        actor_loss: pu.l_critic_trn,
        mcritic_loss: Some(pu.l_mcritic_trn),
        meta_loss: Some(meta_value),
    })
}

/// Actor step used inside a meta-critic iteration: draws `d_val` (and its
/// SAC noise) from `rng` after everything the skeleton has consumed.
pub fn meta_actor_step<R: Rng>(
    base: &mut AlgoState,
    mc: &mut MetaCritic,
    buffer: &ReplayBuffer,
    d_trn: &Batch,
    trn_noise: Option<&Tensor>,
    rng: &mut R,
) -> Result<ActorStepMetrics> {
    let m = mc.cfg.val_batch_size;
    let d_val = buffer.sample(m, rng)?;
    let val_noise = (base.algo == Algo::Sac).then(|| normal_tensor(m, base.action_dim(), rng));
    let g = Graph::new();
    let pu = meta_train(&g, base, mc, d_trn, trn_noise)?;
    let meta = meta_loss(&g, base, mc, &pu, &d_val, val_noise.as_ref())?;
    meta_optimise(&g, base, mc, &pu, meta)
}

/// One gradient-step block. Without a meta-critic this is exactly
/// `AlgoState::vanilla_iteration`.
pub fn train_iteration<R: Rng>(
    base: &mut AlgoState,
    mc: Option<&mut MetaCritic>,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<IterMetrics> {
    match mc {
        None => base.vanilla_iteration(buffer, rng),
        Some(mc) => base.iteration_with(buffer, rng, |state, batch, noise, rng| {
            meta_actor_step(state, mc, buffer, batch, noise, rng)
        }),
    }
}

/// Base learner plus optional meta-critic.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub base: AlgoState,
    pub mc: Option<MetaCritic>,
}

impl MetaState {
    pub fn train_iteration<R: Rng>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<IterMetrics> {
        train_iteration(&mut self.base, self.mc.as_mut(), buffer, rng)
    }
}
