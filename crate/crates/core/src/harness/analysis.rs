//! Curve smoothing, trajectory PCA, reward surfaces and parameter scaling.

use nalgebra::{DMatrix, SymmetricEigen};

use super::curve::LearningCurve;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nets::Actor;
use crate::offpac::Algo;

/// Centred moving average, truncated at the edges. NaN entries are skipped;
/// a window with no finite entry yields NaN.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let before = (window - 1) / 2;
    let after = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(series.len() - 1);
            let (sum, n) = series[lo..=hi]
                .iter()
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Max over evaluation points of the across-seed mean of each seed's
/// smoothed evaluation return. All curves must share the same steps.
pub fn max_average_return(curves: &[LearningCurve], window: usize) -> Result<f64> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Analysis("no curves to summarise".into()))?;
    if first.rows.is_empty() {
        return Err(Error::Analysis("curves have no evaluation points".into()));
    }
    let steps = first.steps();
    if curves.iter().any(|c| c.steps() != steps) {
        return Err(Error::Analysis("curves disagree on evaluation steps".into()));
    }
    let smoothed: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| smooth(&c.column(|r| r.eval_return_mean), window))
        .collect();
    let best = (0..steps.len())
        .map(|i| smoothed.iter().map(|s| s[i]).sum::<f64>() / smoothed.len() as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

/// Area under a curve by the trapezoid rule over its steps.
pub fn area_under(steps: &[u64], values: &[f64]) -> f64 {
    steps
        .windows(2)
        .zip(values.windows(2))
        .map(|(s, v)| (s[1] - s[0]) as f64 * 0.5 * (v[0] + v[1]))
        .sum()
}

#[derive(Clone, Debug)]
pub struct Pca {
    /// Projection of every `phi_i - phi_last` onto the two leading directions.
    pub coords: Vec<[f64; 2]>,
    pub explained_variance_ratio: [f64; 2],
    /// Unit-norm leading directions in parameter space.
    pub components: [Vec<f64>; 2],
    /// All eigenvalues of the centred scatter matrix, descending.
    pub eigenvalues: Vec<f64>,
}

/// PCA of the difference matrix `[phi_0 - phi_n, ..., phi_{n-1} - phi_n]`.
pub fn pca_trajectory(snapshots: &[Vec<f64>]) -> Result<Pca> {
    if snapshots.len() < 3 {
        return Err(Error::Analysis("PCA needs at least three snapshots".into()));
    }
    let dim = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != dim) {
        return Err(Error::Analysis("snapshots differ in length".into()));
    }
    let last = &snapshots[snapshots.len() - 1];
    let diffs: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.iter().zip(last).map(|(a, b)| a - b).collect())
        .collect();
    let m = &diffs[..diffs.len() - 1];
    let n = m.len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, dim, |i, j| m[i][j] - mean[j]);
    let gram = &centred * centred.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 1e-300) {
        return Err(Error::Analysis("snapshots have zero variance".into()));
    }
    let tol = total * 1e-12;
    let components: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let lambda = eig.eigenvalues[k];
            if lambda <= tol {
                return vec![0.0; dim];
            }
            let u = eig.eigenvectors.column(k);
            let v = centred.transpose() * u / lambda.sqrt();
            v.iter().copied().collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let coords = diffs
        .iter()
        .map(|d| [dot(d, &components[0]), dot(d, &components[1])])
        .collect();
    let ratio = |k: usize| eigenvalues.get(k).copied().unwrap_or(0.0) / total;
    let mut it = components.into_iter();
    let c0 = it.next().expect("at least two snapshot differences");
    let c1 = it.next().unwrap_or_else(|| vec![0.0; dim]);
    Ok(Pca {
        coords,
        explained_variance_ratio: [ratio(0), ratio(1)],
        components: [c0, c1],
        eigenvalues,
    })
}

/// Mean evaluation return of `center + x d1 + y d2` on an `xs` by `ys` grid
/// (`out[j][i]` is `(xs[i], ys[j])`). Each point uses a fresh copy of the
/// evaluation stream from `eval_seed`, so points differ only in parameters.
pub fn reward_surface<E: Environment + Clone>(
    center: &Actor,
    d1: &[f64],
    d2: &[f64],
    xs: &[f64],
    ys: &[f64],
    env: &E,
    episodes: usize,
    eval_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let base = center.flat();
    if d1.len() != base.len() || d2.len() != base.len() {
        return Err(Error::Dim {
            context: "surface direction",
            expected: base.len(),
            actual: d1.len().min(d2.len()),
        });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (n1, n2) = (dot(d1, d1).sqrt(), dot(d2, d2).sqrt());
    if n1 == 0.0 || n2 == 0.0 || (dot(d1, d2) / (n1 * n2)).abs() > 1.0 - 1e-12 {
        return Err(Error::Analysis("surface directions must be linearly independent".into()));
    }
    let mut actor = center.clone();
    let mut grid = Vec::with_capacity(ys.len());
    for &y in ys {
        let mut row = Vec::with_capacity(xs.len());
        for &x in xs {
            let p: Vec<f64> = (0..base.len()).map(|k| base[k] + x * d1[k] + y * d2[k]).collect();
            actor.set_flat(&p)?;
            let mut rng = crate::rng::stream(eval_seed, 4);
            let mut e = env.clone();
            row.push(super::evaluate_actor(&actor, &mut e, episodes, &mut rng)?.0);
        }
        grid.push(row);
    }
    Ok(grid)
}

fn dense_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Actor plus critic parameter count for the given hidden widths.
pub fn param_count(algo: Algo, state_dim: usize, action_dim: usize, hidden: &[usize]) -> usize {
    let head = match algo {
        Algo::Sac => 2 * action_dim,
        _ => action_dim,
    };
    let mut actor = vec![state_dim];
    actor.extend_from_slice(hidden);
    actor.push(head);
    let mut critic = vec![state_dim + action_dim];
    critic.extend_from_slice(hidden);
    critic.push(1);
    let critics = if algo == Algo::Ddpg { 1 } else { 2 };
    dense_count(&actor) + critics * dense_count(&critic)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledNets {
    pub hidden: Vec<usize>,
    pub base_count: usize,
    pub target_count: f64,
    pub count: usize,
    /// Common width factor applied to every hidden layer.
    pub factor: f64,
}

/// Uniformly widens every hidden layer, `w_i -> round(c w_i)`, choosing `c`
/// by integer search over the first hidden width so the actor-plus-critic
/// parameter count is closest to `multiplier` times the original.
pub fn params_scale(
    algo: Algo,
    state_dim: usize,
    action_dim: usize,
    hidden: &[usize],
    multiplier: f64,
) -> Result<ScaledNets> {
    if !(multiplier >= 1.0) {
        return Err(Error::Config("params multiplier must be >= 1".into()));
    }
    let base_count = param_count(algo, state_dim, action_dim, hidden);
    let target = multiplier * base_count as f64;
    if multiplier == 1.0 {
        return Ok(ScaledNets {
            hidden: hidden.to_vec(),
            base_count,
            target_count: target,
            count: base_count,
            factor: 1.0,
        });
    }
    let w0 = hidden[0];
    let mut best: Option<ScaledNets> = None;
    // Counts grow at most quadratically in the factor, so the width never
    // needs to exceed multiplier times the original.
    let limit = ((w0 as f64) * multiplier).ceil() as usize + 1;
    for first in w0..=limit {
        let c = first as f64 / w0 as f64;
        let widths: Vec<usize> = hidden.iter().map(|&w| ((c * w as f64).round() as usize).max(1)).collect();
        let count = param_count(algo, state_dim, action_dim, &widths);
        let better = best
            .as_ref()
            .is_none_or(|b| (count as f64 - target).abs() < (b.count as f64 - target).abs());
        if better {
            best = Some(ScaledNets {
                hidden: widths,
                base_count,
                target_count: target,
                count,
                factor: c,
            });
        }
    }
    Ok(best.expect("search range is nonempty"))
}
