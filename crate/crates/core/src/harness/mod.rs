//! Seeded experiment runs, evaluation and run artifacts.

pub mod analysis;
pub mod config;
pub mod curve;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore};

pub use analysis::{max_average_return, params_scale, pca_trajectory, reward_surface, smooth};
pub use config::RunConfig;
pub use curve::{CurveRow, LearningCurve, CSV_HEADER};

use crate::envs::{Env, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::metacritic::{MetaCritic, MetaState};
use crate::nets::{ActMode, Actor, MetaCriticNet, Snapshot};
use crate::offpac::{AlgoState, IterMetrics};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::Streams;

/// Mean and population standard deviation of undiscounted episode returns.
pub fn evaluate_policy<E, P>(mut policy: P, env: &mut E, episodes: usize, rng: &mut dyn RngCore) -> Result<(f64, f64)>
where
    E: Environment + ?Sized,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        let mut total = 0.0;
        loop {
            let a = policy(&s)?;
            let st = env.step(&a, rng)?;
            total += st.reward;
            if st.done {
                break;
            }
            s = st.state;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Noise-free evaluation of an actor (tanh of the mean for gaussian heads).
pub fn evaluate_actor<E: Environment + ?Sized>(
    actor: &Actor,
    env: &mut E,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    evaluate_policy(|s| Ok(actor.act(s, ActMode::Deterministic, None)?.0), env, episodes, rng)
}

/// Network widths actually used by a run after parameter scaling.
pub fn scaled_nets(cfg: &RunConfig, spec: &EnvSpec) -> Result<analysis::ScaledNets> {
    params_scale(cfg.algo, spec.state_dim, spec.action_dim, &cfg.hidden, cfg.params_multiplier)
}

/// Fresh learner for one seed, drawing initial weights from `init`.
pub fn build_state(cfg: &RunConfig, spec: &EnvSpec, init: &mut impl Rng) -> Result<MetaState> {
    let mut hyper = cfg.hyper(spec.gamma);
    hyper.hidden = scaled_nets(cfg, spec)?.hidden;
    let base = AlgoState::new(cfg.algo, hyper, spec, init);
    let mc = cfg.mc_variant.map(|v| {
        let net = MetaCriticNet::init(v, &base.actor, cfg.mc_hidden, cfg.reg_init, init);
        MetaCritic::new(net, cfg.meta_config())
    });
    Ok(MetaState { base, mc })
}

/// Gradient-step blocks due at the `k`-th post-warmup env step for
/// multiplier `u`: `floor(u k) - floor(u (k - 1))`.
pub fn blocks_at(u: f64, k: u64) -> u64 {
    let f = |k: u64| (u * k as f64 + 1e-9).floor() as u64;
    f(k) - f(k - 1)
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub curve: LearningCurve,
    pub state: MetaState,
    pub snapshots: Vec<Snapshot>,
    pub env_steps: u64,
    pub train_steps: u64,
    pub gradient_blocks: u64,
    /// Smallest and largest meta-loss over every gradient step.
    pub meta_loss_range: Option<(f64, f64)>,
    /// Set when the run stopped on a non-finite value.
    pub failure: Option<String>,
}

#[derive(Default)]
struct Interval {
    critic: (f64, u64),
    mcritic: (f64, u64),
    meta: (f64, u64),
}

impl Interval {
    fn add(&mut self, m: &IterMetrics) {
        if let Some(v) = m.actor_loss {
            self.critic.0 += v;
            self.critic.1 += 1;
        }
        if let Some(v) = m.mcritic_loss {
            self.mcritic.0 += v;
            self.mcritic.1 += 1;
        }
        if let Some(v) = m.meta_loss {
            self.meta.0 += v;
            self.meta.1 += 1;
        }
    }

    fn mean((s, n): (f64, u64)) -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    }

    fn row(&mut self, step: u64, eval: (f64, f64)) -> CurveRow {
        let row = CurveRow {
            step,
            eval_return_mean: eval.0,
            eval_return_std: eval.1,
            loss_critic: Self::mean(self.critic),
            loss_mcritic: Self::mean(self.mcritic),
            loss_meta: Self::mean(self.meta),
        };
        *self = Interval::default();
        row
    }
}

/// One complete training run for `seed`.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    let template = Env::by_name(&cfg.env, cfg.env_seed)?;
    let spec = template.spec();
    let mut streams = Streams::new(seed);
    let mut state = build_state(cfg, &spec, &mut streams.init)?;
    let mut env = template.clone();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, spec.state_dim, spec.action_dim);

    let mut result = SeedResult {
        seed,
        curve: LearningCurve::default(),
        state: state.clone(),
        snapshots: Vec::new(),
        env_steps: 0,
        train_steps: 0,
        gradient_blocks: 0,
        meta_loss_range: None,
        failure: None,
    };
    let snapshot = |state: &MetaState, step: u64| Snapshot::new(step, state.base.actor.named_params());
    if cfg.snapshot_every > 0 {
        result.snapshots.push(snapshot(&state, 0));
    }

    let bound = spec.action_bound;
    let mut interval = Interval::default();
    let mut s = env.reset(&mut streams.env);
    for step in 1..=cfg.total_steps {
        let action: Vec<f64> = if step <= cfg.warmup_steps {
            (0..spec.action_dim)
                .map(|_| streams.exploration.random_range(-bound..=bound))
                .collect()
        } else {
            state.base.exploration_action(&s, &mut streams.exploration)?
        };
        let st = env.step(&action, &mut streams.env)?;
        buffer.push(Transition {
            s: std::mem::take(&mut s),
            a: action,
            r: st.reward,
            s_next: st.state.clone(),
            done: st.terminal,
        })?;
        s = if st.done { env.reset(&mut streams.env) } else { st.state };
        result.env_steps = step;

        if step > cfg.warmup_steps {
            result.train_steps += 1;
            for _ in 0..blocks_at(cfg.updates_multiplier, result.train_steps) {
                let m = match state.train_iteration(&buffer, &mut streams.sampling) {
                    Ok(m) => m,
                    Err(Error::NonFinite { detail, .. }) => {
                        let msg = format!("non-finite value at env step {step}: {detail}");
                        result.curve.rows.push(interval.row(step, (f64::NAN, f64::NAN)));
                        result.failure = Some(msg);
                        result.state = state;
                        return Ok(result);
                    }
                    Err(e) => return Err(e),
                };
                result.gradient_blocks += 1;
                if let Some(v) = m.meta_loss {
                    let (lo, hi) = result.meta_loss_range.unwrap_or((v, v));
                    result.meta_loss_range = Some((lo.min(v), hi.max(v)));
                }
                interval.add(&m);
            }
        }

        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            let mut eval_env = template.clone();
            let eval = evaluate_actor(
                &state.base.actor,
                &mut eval_env,
                cfg.eval_episodes,
                &mut streams.evaluation,
            )?;
            result.curve.rows.push(interval.row(step, eval));
        }
        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            result.snapshots.push(snapshot(&state, step));
        }
    }
    result.state = state;
    Ok(result)
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub seeds: Vec<SeedResult>,
    pub metadata: Vec<(String, String)>,
}

impl RunArtifacts {
    pub fn curves(&self) -> Vec<LearningCurve> {
        self.seeds.iter().map(|s| s.curve.clone()).collect()
    }

    pub fn failures(&self) -> Vec<String> {
        self.seeds
            .iter()
            .filter_map(|s| s.failure.as_ref().map(|f| format!("seed {}: {f}", s.seed)))
            .collect()
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Runs every configured seed in order. Seeds that hit a non-finite value
/// are reported in the result rather than as an error.
pub fn run(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let template = Env::by_name(&cfg.env, cfg.env_seed)?;
    let spec = template.spec();
    let nets = scaled_nets(cfg, &spec)?;

    let mut md: Vec<(String, String)> = vec![
        ("code_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("env_instance_seed".into(), cfg.env_seed.to_string()),
    ];
    for (k, v) in cfg.pairs() {
        md.push((format!("config.{k}"), v));
    }
    if let Env::Tabular(mdp) = &template {
        md.push(("tabular.rewards".into(), fmt_list(&mdp.rewards)));
        md.push(("tabular.transitions".into(), fmt_list(&mdp.transitions)));
        md.push(("tabular.initial".into(), fmt_list(&mdp.initial)));
    }
    md.push((
        "params.formula".into(),
        "hidden w_i -> round(c * w_i); count = sum over actor and critic layers of in*out + out".into(),
    ));
    md.push(("params.factor".into(), nets.factor.to_string()));
    md.push((
        "params.hidden".into(),
        nets.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
    ));
    md.push(("params.base_count".into(), nets.base_count.to_string()));
    md.push(("params.target_count".into(), nets.target_count.to_string()));
    md.push(("params.count".into(), nets.count.to_string()));
    md.push((
        "updates.formula".into(),
        "blocks at post-warmup step k = floor(u*k) - floor(u*(k-1))".into(),
    ));

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let r = run_seed(cfg, seed)?;
        let p = format!("seed{seed}.");
        md.push((format!("{p}env_steps"), r.env_steps.to_string()));
        md.push((format!("{p}train_steps"), r.train_steps.to_string()));
        md.push((format!("{p}gradient_blocks"), r.gradient_blocks.to_string()));
        md.push((format!("{p}iterations"), r.state.base.iterations.to_string()));
        md.push((format!("{p}actor_updates"), r.state.base.actor_updates.to_string()));
        if let Some((lo, hi)) = r.meta_loss_range {
            md.push((format!("{p}meta_loss_min"), lo.to_string()));
            md.push((format!("{p}meta_loss_max"), hi.to_string()));
        }
        md.push((
            format!("{p}status"),
            r.failure.clone().unwrap_or_else(|| "ok".into()),
        ));
        seeds.push(r);
    }
    Ok(RunArtifacts {
        config: cfg.clone(),
        seeds,
        metadata: md,
    })
}

pub fn format_metadata(md: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in md {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

pub fn parse_metadata(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn metadata_get<'a>(md: &'a [(String, String)], key: &str) -> Option<&'a str> {
    md.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn trace_file(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub fn actor_file(seed: u64) -> String {
    format!("actor_seed{seed}.params")
}

pub fn snapshots_file(seed: u64) -> String {
    format!("snapshots_seed{seed}.params")
}

/// Writes `config.txt`, `metadata.txt`, per-seed traces, final actor
/// parameters, snapshots and a plotting script into `dir`.
pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), art.config.to_text())?;
    std::fs::write(dir.join("metadata.txt"), format_metadata(&art.metadata))?;
    for r in &art.seeds {
        std::fs::write(dir.join(trace_file(r.seed)), r.curve.to_csv())?;
        let fin = Snapshot::new(r.env_steps, r.state.base.actor.named_params());
        std::fs::write(dir.join(actor_file(r.seed)), crate::nets::format_snapshots(&[fin]))?;
        if !r.snapshots.is_empty() {
            std::fs::write(
                dir.join(snapshots_file(r.seed)),
                crate::nets::format_snapshots(&r.snapshots),
            )?;
        }
    }
    std::fs::write(dir.join("plot.py"), plot_script(art.config.smooth_window))?;
    Ok(())
}

/// Runs and writes artifacts. Returns an error after writing if any seed
/// stopped on a non-finite value.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<RunArtifacts> {
    let art = run(cfg)?;
    write_artifacts(&art, dir)?;
    let failures = art.failures();
    if !failures.is_empty() {
        return Err(Error::NonFinite {
            step: art.seeds.iter().map(|s| s.env_steps).max().unwrap_or(0),
            detail: failures.join("; "),
        });
    }
    Ok(art)
}

pub fn plot_script(window: usize) -> String {
    format!(
        r#"#!/usr/bin/env python3
# Plots every trace_seed*.csv in this directory: smoothed evaluation return
# (mean over seeds) and the per-interval losses.
import csv, glob, math, os, sys
import matplotlib.pyplot as plt

WINDOW = {window}
here = os.path.dirname(os.path.abspath(__file__))

def smooth(xs, w):
    lo, hi = (w - 1) // 2, w // 2
    out = []
    for i in range(len(xs)):
        vals = [v for v in xs[max(0, i - lo):i + hi + 1] if not math.isnan(v)]
        out.append(sum(vals) / len(vals) if vals else float("nan"))
    return out

traces = []
for path in sorted(glob.glob(os.path.join(here, "trace_seed*.csv"))):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    traces.append({{k: [float(r[k]) for r in rows] for k in rows[0]}} if rows else None)
traces = [t for t in traces if t]
if not traces:
    sys.exit("no traces")

fig, axes = plt.subplots(1, 4, figsize=(18, 4))
cols = ["eval_return_mean", "loss_critic", "loss_mcritic", "loss_meta"]
for ax, col in zip(axes, cols):
    for t in traces:
        ax.plot(t["step"], smooth(t[col], WINDOW), alpha=0.5)
    ax.set_title(col)
    ax.set_xlabel("env step")
fig.tight_layout()
fig.savefig(os.path.join(here, "curves.png"), dpi=120)
"#
    )
}
