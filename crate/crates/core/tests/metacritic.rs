use mc_autodiff::{fd_gradient, max_relative_error, Graph, Tensor};
use mcrl::metacritic::{
    meta_gradient, meta_loss, meta_loss_clip, meta_loss_plain, meta_train, MetaConfig, MetaCritic, MetaLossKind,
    MetaState,
};
use mcrl::nets::{Actor, Critic, MetaCriticNet, MetaVariant};
use mcrl::offpac::{normal_tensor, Algo, AlgoState, Hyper};
use mcrl::optim::OptimizerKind;
use mcrl::replay::{Batch, ReplayBuffer, Transition};
use mcrl::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const S: usize = 3;
const A: usize = 2;

fn transition(rng: &mut impl Rng) -> Transition {
    Transition {
        s: (0..S).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: (0..A).map(|_| rng.random_range(-1.0..1.0)).collect(),
        r: rng.random_range(-1.0..1.0),
        s_next: (0..S).map(|_| rng.random_range(-1.0..1.0)).collect(),
        done: rng.random_range(0.0..1.0) < 0.1,
    }
}

fn batch(rng: &mut impl Rng, n: usize) -> Batch {
    let ts: Vec<Transition> = (0..n).map(|_| transition(rng)).collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap()
}

fn buffer(rng: &mut impl Rng, n: usize) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(n, S, A);
    for _ in 0..n {
        buf.push(transition(rng)).unwrap();
    }
    buf
}

fn base(algo: Algo, seed: u64) -> AlgoState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = Actor::init(S, &[6, 5], vec![1.0; A], algo.head_kind(), &mut rng);
    let critic = Critic::init(S, A, &[8, 8], algo.twin_critic(), &mut rng);
    let hyper = Hyper {
        batch_size: 8,
        ..Hyper::default()
    };
    AlgoState::from_parts(algo, hyper, 1.0, actor, critic)
}

fn meta_critic(variant: MetaVariant, actor: &Actor, cfg: MetaConfig, seed: u64) -> MetaCritic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MetaCritic::new(MetaCriticNet::init(variant, actor, 7, 0.05, &mut rng), cfg)
}

fn cfg(loss: MetaLossKind, inner_lr: f64) -> MetaConfig {
    MetaConfig {
        loss,
        inner_lr,
        val_batch_size: 8,
        ..MetaConfig::default()
    }
}

fn values(vars: &[mc_autodiff::Var<'_>]) -> Vec<f64> {
    vars.iter().flat_map(|v| v.value().data().to_vec()).collect()
}

fn flat(ts: &[Tensor]) -> Tensor {
    Tensor::vector(ts.iter().flat_map(|t| t.data().to_vec()).collect())
}

struct Setup {
    base: AlgoState,
    d_trn: Batch,
    d_val: Batch,
    trn_noise: Option<Tensor>,
    val_noise: Option<Tensor>,
}

fn setup(algo: Algo, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let d_trn = batch(&mut rng, 8);
    let d_val = batch(&mut rng, 8);
    let sac = algo == Algo::Sac;
    let trn_noise = sac.then(|| normal_tensor(8, A, &mut rng));
    let val_noise = sac.then(|| normal_tensor(8, A, &mut rng));
    Setup {
        base: base(algo, seed),
        d_trn,
        d_val,
        trn_noise,
        val_noise,
    }
}

fn meta_value(s: &Setup, mc: &MetaCritic) -> f64 {
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, mc, &s.d_trn, s.trn_noise.as_ref()).unwrap();
    meta_loss(&g, &s.base, mc, &pu, &s.d_val, s.val_noise.as_ref()).unwrap().item()
}

fn meta_grad(s: &Setup, mc: &MetaCritic) -> Vec<Tensor> {
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, mc, &s.d_trn, s.trn_noise.as_ref()).unwrap();
    let loss = meta_loss(&g, &s.base, mc, &pu, &s.d_val, s.val_noise.as_ref()).unwrap();
    meta_gradient(&g, loss, &pu.omega).unwrap()
}

#[test]
fn zero_inner_rate_leaves_parameters_and_omega_untouched() {
    let s = setup(Algo::Ddpg, 1);
    let mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Clip, 0.0), 2);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    assert_eq!(values(&pu.phi_old), s.base.actor.flat());
    assert_eq!(values(&pu.phi_new), values(&pu.phi_old));
    let loss = meta_loss(&g, &s.base, &mc, &pu, &s.d_val, None).unwrap();
    assert_eq!(loss.item(), 0.0);
    for grad in meta_gradient(&g, loss, &pu.omega).unwrap() {
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_input_layer_makes_auxiliary_step_vanish() {
    let s = setup(Algo::Td3, 3);
    let mut mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Clip, 0.1), 4);
    let net = mc.net.net.as_mut().unwrap();
    let w = &mut net.layers_mut()[0].weight;
    *w = Tensor::zeros(w.shape());
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    assert_eq!(values(&pu.phi_new), values(&pu.phi_old));
    assert!(pu.grad_mcritic.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

fn check_inner_step(variant: MetaVariant, sequential: bool) {
    let s = setup(Algo::Ddpg, 5);
    let eta = 0.05;
    let mut c = cfg(MetaLossKind::Clip, eta);
    c.sequential_inner = sequential;
    let mc = meta_critic(variant, &s.base.actor, c, 6);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    let step: Vec<f64> = values(&pu.phi_new)
        .iter()
        .zip(values(&pu.phi_old))
        .map(|(n, o)| (n - o) / -eta)
        .collect();

    let at = if sequential {
        Tensor::vector(values(&pu.phi_old))
    } else {
        Tensor::vector(s.base.actor.flat())
    };
    let h = |x: &Tensor| {
        let mut actor = s.base.actor.clone();
        actor.set_flat(x.data()).unwrap();
        let g = Graph::new();
        let phi = actor.bind(&g);
        let omega = mc.net.bind(&g);
        let states = g.constant(s.d_trn.states.clone());
        let actions = g.constant(s.d_trn.actions.clone());
        mc.net.loss(&omega, &actor, &phi, states, Some(actions)).unwrap().item()
    };
    let fd = fd_gradient(h, &at, 1e-6);
    let err = max_relative_error(&Tensor::vector(step), &fd, 1e-6);
    assert!(err < 1e-5, "{variant} sequential={sequential}: relative error {err}");
}

#[test]
fn auxiliary_step_matches_finite_differences() {
    for variant in [MetaVariant::Feature, MetaVariant::FeatureStateAction, MetaVariant::ParamReg] {
        check_inner_step(variant, false);
        check_inner_step(variant, true);
    }
}

#[test]
fn constant_critic_gives_flat_meta_loss() {
    let mut s = setup(Algo::Ddpg, 7);
    s.base.critic = Critic::constant(S + A, &[8, 8], false, 1.75);
    let mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Plain, 0.1), 8);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    assert!(pu.grad_critic.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    let loss = meta_loss_plain(&g, &s.base, &pu, &s.d_val, None).unwrap();
    assert_eq!(loss.item(), -1.75);
    for grad in meta_gradient(&g, loss, &pu.omega).unwrap() {
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn clip_loss_is_tanh_of_improvement() {
    let s = setup(Algo::Ddpg, 9);
    let mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Clip, 0.2), 10);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    let plain = meta_loss_plain(&g, &s.base, &pu, &s.d_val, None).unwrap().item();
    let theta = s.base.critic.bind_constants(&g);
    let old = s
        .base
        .actor_loss(&pu.phi_old, &theta, g.constant(s.d_val.states.clone()), None)
        .unwrap()
        .item();
    let clip = meta_loss_clip(&g, &s.base, &pu, &s.d_val, None).unwrap().item();
    assert_eq!(clip, (plain - old).tanh());

    let v = Graph::new();
    let d = v.scalar(-0.5);
    assert!((d.tanh().item() - (-0.46212)).abs() < 1e-5);
}

#[test]
fn clip_gradient_is_plain_gradient_times_tanh_derivative() {
    for algo in [Algo::Ddpg, Algo::Td3, Algo::Sac] {
        let s = setup(algo, 11);
        let clip_mc = meta_critic(MetaVariant::FeatureStateAction, &s.base.actor, cfg(MetaLossKind::Clip, 0.3), 12);

        let g = Graph::new();
        let pu = meta_train(&g, &s.base, &clip_mc, &s.d_trn, s.trn_noise.as_ref()).unwrap();
        let plain = meta_loss_plain(&g, &s.base, &pu, &s.d_val, s.val_noise.as_ref()).unwrap();
        let clip = meta_loss_clip(&g, &s.base, &pu, &s.d_val, s.val_noise.as_ref()).unwrap();
        let factor = 1.0 - clip.item() * clip.item();
        let gp = meta_gradient(&g, plain, &pu.omega).unwrap();
        let gc = meta_gradient(&g, clip, &pu.omega).unwrap();
        for (p, c) in gp.iter().zip(&gc) {
            for (&x, &y) in p.data().iter().zip(c.data()) {
                assert!((x * factor - y).abs() <= 1e-10 * x.abs().max(1.0), "{algo}: {x} * {factor} vs {y}");
            }
        }
    }
}

#[test]
fn baseline_term_is_cut_from_the_graph() {
    let s = setup(Algo::Sac, 13);
    let mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Clip, 0.1), 14);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, s.trn_noise.as_ref()).unwrap();
    let theta = s.base.critic.bind_constants(&g);
    let old = s
        .base
        .actor_loss(&pu.phi_old, &theta, g.constant(s.d_val.states.clone()), s.val_noise.as_ref())
        .unwrap();
    for w in pu.omega.iter().chain(&pu.phi) {
        assert!(!g.depends_on(old, *w));
    }
    let clip = meta_loss_clip(&g, &s.base, &pu, &s.d_val, s.val_noise.as_ref()).unwrap();
    assert!(pu.omega.iter().any(|w| g.depends_on(clip, *w)));
}

#[test]
fn missing_second_order_path_is_reported() {
    let s = setup(Algo::Ddpg, 15);
    let mut c = cfg(MetaLossKind::Clip, 0.1);
    c.create_graph = false;
    let mc = meta_critic(MetaVariant::Feature, &s.base.actor, c, 16);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    let loss = meta_loss(&g, &s.base, &mc, &pu, &s.d_val, None).unwrap();
    assert!(matches!(meta_gradient(&g, loss, &pu.omega), Err(Error::NoSecondOrderPath)));
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let variants = [MetaVariant::Feature, MetaVariant::FeatureStateAction, MetaVariant::ParamReg];
    let mut seed = 20;
    for algo in [Algo::Ddpg, Algo::Td3, Algo::Sac] {
        for variant in variants {
            for loss in [MetaLossKind::Plain, MetaLossKind::Clip] {
                seed += 1;
                let s = setup(algo, seed);
                let mc = meta_critic(variant, &s.base.actor, cfg(loss, 0.2), seed);
                let analytic = flat(&meta_grad(&s, &mc));
                let point = Tensor::vector(mc.net.flat());
                let fd = fd_gradient(
                    |x| {
                        let mut m = mc.clone();
                        m.net.set_flat(x.data()).unwrap();
                        meta_value(&s, &m)
                    },
                    &point,
                    1e-6,
                );
                let err = max_relative_error(&analytic, &fd, 1e-6);
                assert!(err < 1e-4, "{algo} {variant} {loss}: relative error {err}");
            }
        }
    }
}

#[test]
fn plain_sgd_actor_lands_on_putative_update() {
    let mut s = setup(Algo::Ddpg, 40);
    let eta = 0.05;
    s.base = {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let actor = Actor::init(S, &[6, 5], vec![1.0; A], Algo::Ddpg.head_kind(), &mut rng);
        let critic = Critic::init(S, A, &[8, 8], false, &mut rng);
        let hyper = Hyper {
            actor_optimizer: OptimizerKind::Sgd,
            actor_lr: eta,
            ..Hyper::default()
        };
        AlgoState::from_parts(Algo::Ddpg, hyper, 1.0, actor, critic)
    };
    let mut mc = meta_critic(MetaVariant::Feature, &s.base.actor, cfg(MetaLossKind::Clip, eta), 41);
    let g = Graph::new();
    let pu = meta_train(&g, &s.base, &mc, &s.d_trn, None).unwrap();
    let target = values(&pu.phi_new);
    let loss = meta_loss(&g, &s.base, &mc, &pu, &s.d_val, None).unwrap();
    let omega_before = mc.net.flat();
    mcrl::metacritic::meta_optimise(&g, &mut s.base, &mut mc, &pu, loss).unwrap();
    for (a, b) in s.base.actor.flat().iter().zip(&target) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_ne!(mc.net.flat(), omega_before);
}

fn run_iterations(algo: Algo, variant: Option<MetaVariant>, iterations: usize) -> (MetaState, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let buf = buffer(&mut rng, 64);
    let b = base(algo, 51);
    let mc = variant.map(|v| meta_critic(v, &b.actor, cfg(MetaLossKind::Clip, 1e-3), 52));
    let mut state = MetaState { base: b, mc };
    let mut trace = Vec::new();
    let mut sampling = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..iterations {
        let m = state.train_iteration(&buf, &mut sampling).unwrap();
        trace.push(m.critic_loss);
        trace.extend(m.actor_loss);
        trace.extend(m.meta_loss);
    }
    (state, trace)
}

#[test]
fn without_meta_critic_iteration_is_vanilla() {
    for algo in [Algo::Ddpg, Algo::Td3, Algo::Sac] {
        let (with_none, trace) = run_iterations(algo, None, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let buf = buffer(&mut rng, 64);
        let mut plain = base(algo, 51);
        let mut sampling = ChaCha8Rng::seed_from_u64(53);
        let mut plain_trace = Vec::new();
        for _ in 0..20 {
            let m = plain.vanilla_iteration(&buf, &mut sampling).unwrap();
            plain_trace.push(m.critic_loss);
            plain_trace.extend(m.actor_loss);
        }
        assert_eq!(trace, plain_trace);
        assert_eq!(with_none.base.actor.flat(), plain.actor.flat());
    }
}

#[test]
fn meta_training_is_deterministic() {
    for algo in [Algo::Ddpg, Algo::Td3, Algo::Sac] {
        let (a, ta) = run_iterations(algo, Some(MetaVariant::Feature), 10);
        let (b, tb) = run_iterations(algo, Some(MetaVariant::Feature), 10);
        assert_eq!(ta, tb);
        assert_eq!(a.base.actor.flat(), b.base.actor.flat());
        assert_eq!(a.mc.unwrap().net.flat(), b.mc.unwrap().net.flat());
    }
}

#[test]
fn delayed_actor_also_delays_omega() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let buf = buffer(&mut rng, 64);
    let b = base(Algo::Td3, 61);
    let mc = meta_critic(MetaVariant::Feature, &b.actor, cfg(MetaLossKind::Plain, 1e-2), 62);
    let mut state = MetaState { base: b, mc: Some(mc) };
    let mut sampling = ChaCha8Rng::seed_from_u64(63);
    for i in 1..=6u64 {
        let before = state.mc.as_ref().unwrap().net.flat();
        let m = state.train_iteration(&buf, &mut sampling).unwrap();
        let changed = state.mc.as_ref().unwrap().net.flat() != before;
        assert_eq!(changed, i % 2 == 0, "iteration {i}");
        assert_eq!(m.meta_loss.is_some(), i % 2 == 0);
    }
}
