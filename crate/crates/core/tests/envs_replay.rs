use mcrl::envs::{bellman_backup, tabular_optimal_return, Env, Environment, Pendulum, PointMass, TabularMdp};
use mcrl::replay::{ReplayBuffer, Transition};
use mcrl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tr(i: usize) -> Transition {
    Transition {
        s: vec![i as f64, 0.0],
        a: vec![i as f64],
        r: i as f64,
        s_next: vec![i as f64 + 1.0, 0.0],
        done: false,
    }
}

#[test]
fn tabular_transition_frequencies_match_table() {
    let mut env = TabularMdp::generate(11, 1_000_000, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = [[[0usize; 2]; 2]; 2];
    env.reset(&mut rng);
    for i in 0..100_000 {
        let s = env.current_state();
        let a = i % 2;
        let action = if a == 1 { 0.5 } else { -0.5 };
        env.step(&[action], &mut rng).unwrap();
        counts[s][a][env.current_state()] += 1;
    }
    for s in 0..2 {
        for a in 0..2 {
            let n = (counts[s][a][0] + counts[s][a][1]) as f64;
            assert!(n > 1000.0);
            for s2 in 0..2 {
                let freq = counts[s][a][s2] as f64 / n;
                let p = env.prob(s, a, s2);
                let tol = 4.0 * (p * (1.0 - p) / n).sqrt() + 1e-12;
                assert!((freq - p).abs() <= tol, "({s},{a})->{s2}: {freq} vs {p}");
            }
        }
    }
}

#[test]
fn finite_horizon_value_matches_brute_force_on_deterministic_chain() {
    let next = [[0, 1], [2, 0], [2, 1]];
    let rewards = vec![0.1, 0.0, 0.0, 1.0, 0.3, 0.2];
    let mdp = TabularMdp::deterministic(&next, rewards.clone(), vec![1.0, 0.0, 0.0], 6, 0.8).unwrap();
    let mut best = f64::NEG_INFINITY;
    for plan in 0..(1u32 << 6) {
        let (mut s, mut total, mut disc) = (0usize, 0.0, 1.0);
        for t in 0..6 {
            let a = ((plan >> t) & 1) as usize;
            total += disc * rewards[s * 2 + a];
            disc *= 0.8;
            s = next[s][a];
        }
        best = best.max(total);
    }
    assert!((tabular_optimal_return(&mdp, 0.8, Some(6)) - best).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bellman_backup_contracts(seed in 0u64..10_000, gamma in 0.05f64..0.99, v in prop::collection::vec(-10.0f64..10.0, 4)) {
        let mdp = TabularMdp::generate(seed, 10, gamma);
        let (v1, v2) = (&v[..2], &v[2..]);
        let b1 = bellman_backup(&mdp, gamma, v1);
        let b2 = bellman_backup(&mdp, gamma, v2);
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(sup(&b1, &b2) <= gamma * sup(v1, v2) + 1e-12);
    }

    #[test]
    fn emitted_rewards_respect_documented_range(seed in 0u64..1000, which in 0usize..3) {
        let mut env = Env::by_name(Env::NAMES[which], seed).unwrap();
        let (lo, hi) = env.reward_range();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = env.spec().action_dim;
        env.reset(&mut rng);
        for _ in 0..300 {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let st = env.step(&a, &mut rng).unwrap();
            prop_assert!(st.reward >= lo && st.reward <= hi, "{} outside [{lo}, {hi}]", st.reward);
            if st.done {
                env.reset(&mut rng);
            }
        }
    }
}

#[test]
fn trajectories_are_reproducible() {
    for name in Env::NAMES {
        let run = || {
            let mut env = Env::by_name(name, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut out = env.reset(&mut rng);
            let dim = env.spec().action_dim;
            for i in 0..250 {
                let a = vec![((i as f64) * 0.37).sin(); dim];
                let st = env.step(&a, &mut rng).unwrap();
                out.extend(&st.state);
                out.push(st.reward);
                if st.done {
                    out.extend(env.reset(&mut rng));
                }
            }
            out
        };
        assert_eq!(run(), run(), "{name}");
    }
}

#[test]
fn out_of_bound_actions_are_clamped() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = PointMass::default();
    let mut b = PointMass::default();
    a.set_state([0.5, -0.5], [0.1, 0.2]);
    b.set_state([0.5, -0.5], [0.1, 0.2]);
    let sa = a.step(&[5.0, -7.0], &mut rng).unwrap();
    let sb = b.step(&[1.0, -1.0], &mut rng).unwrap();
    assert_eq!(sa, sb);

    let mut p = Pendulum::default();
    let mut q = Pendulum::default();
    p.set_state(1.0, 0.5);
    q.set_state(1.0, 0.5);
    assert_eq!(p.step(&[50.0], &mut rng).unwrap(), q.step(&[2.0], &mut rng).unwrap());
}

#[test]
fn wrong_action_dimension_is_rejected() {
    let mut env = PointMass::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    assert!(matches!(env.step(&[0.0], &mut rng), Err(Error::Dim { .. })));
}

#[test]
fn replay_ring_keeps_newest_in_order() {
    let mut buf = ReplayBuffer::new(4, 2, 1);
    for i in 0..7 {
        buf.push(tr(i)).unwrap();
    }
    assert_eq!(buf.len(), 4);
    let rs: Vec<f64> = buf.iter().map(|t| t.r).collect();
    assert_eq!(rs, vec![3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn replay_rejects_bad_transitions() {
    let mut buf = ReplayBuffer::new(4, 2, 1);
    let mut bad = tr(0);
    bad.a = vec![0.0, 0.0];
    assert!(matches!(buf.push(bad), Err(Error::Dim { .. })));
    let mut nan = tr(0);
    nan.r = f64::NAN;
    assert!(matches!(buf.push(nan), Err(Error::NonFiniteReward(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(buf.sample(3, &mut rng), Err(Error::EmptyBuffer)));
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(10, 2, 1);
    for i in 0..10 {
        buf.push(tr(i)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 10];
    for t in buf.sample_transitions(100_000, &mut rng).unwrap() {
        counts[t.r as usize] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0).sum();
    // 99.9% quantile of chi-squared with 9 degrees of freedom is 27.88.
    assert!(chi2 < 27.88, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn batch_rows_follow_sampled_indices() {
    let mut buf = ReplayBuffer::new(8, 2, 1);
    for i in 0..8 {
        buf.push(tr(i)).unwrap();
    }
    let b = buf.gather(&[3, 0, 3]).unwrap();
    assert_eq!(b.rewards.data(), &[3.0, 0.0, 3.0]);
    assert_eq!(b.next_states.row(2), &[4.0, 0.0]);
    assert_eq!(b.dones.data(), &[0.0, 0.0, 0.0]);
}
