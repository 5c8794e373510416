use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mcrl::envs::{Env, Environment};
use mcrl::harness::analysis::area_under;
use mcrl::harness::{
    actor_file, build_state, evaluate_actor, max_average_return, pca_trajectory, reward_surface, run_to_dir,
    smooth, snapshots_file, trace_file, LearningCurve, RunConfig,
};
use mcrl::nets::{parse_snapshots, Actor};
use mcrl::rng::stream;

#[derive(Parser)]
#[command(name = "mcrl", version, about = "Off-policy actor-critic runs with an optional meta-critic")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured seed and write traces into the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate the final actor of a finished run.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Project a run's parameter snapshots onto their two leading directions.
    Pca {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate returns on a grid around the final actor, spanned by the PCA directions.
    Surface {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid runs over [-span, span] along each direction.
        #[arg(long)]
        span: Option<f64>,
        #[arg(long, default_value_t = 11)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        episodes: usize,
    },
    /// Summarise two finished runs side by side.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, out } => cmd_run(&config, seed, out),
        Cmd::Eval { run_dir, seed, episodes } => cmd_eval(&run_dir, seed, episodes),
        Cmd::Pca { run_dir, seed } => cmd_pca(&run_dir, seed),
        Cmd::Surface {
            run_dir,
            seed,
            span,
            points,
            episodes,
        } => cmd_surface(&run_dir, seed, span, points, episodes),
        Cmd::Compare { dir_a, dir_b } => cmd_compare(&dir_a, &dir_b),
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let dir = cfg.out_dir.clone();
    let art = run_to_dir(&cfg, &dir)?;
    for r in &art.seeds {
        let last = r.curve.rows.last().map_or(f64::NAN, |row| row.eval_return_mean);
        println!(
            "seed {}: {} env steps, {} gradient blocks, final eval return {last:.3}",
            r.seed, r.env_steps, r.gradient_blocks
        );
    }
    if art.seeds.iter().all(|s| !s.curve.rows.is_empty()) {
        println!(
            "max average return: {:.3}",
            max_average_return(&art.curves(), cfg.smooth_window)?
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join("config.txt");
    RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_actor(dir: &Path, cfg: &RunConfig, env: &Env, seed: u64) -> Result<Actor> {
    let path = dir.join(actor_file(seed));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let snaps = parse_snapshots(&text)?;
    let Some(snap) = snaps.last() else {
        bail!("{} holds no parameters", path.display());
    };
    // Only the architecture matters here; the weights are overwritten.
    let mut actor = build_state(cfg, &env.spec(), &mut ChaCha8Rng::seed_from_u64(0))?.base.actor;
    actor.set_flat(&snap.flat())?;
    Ok(actor)
}

fn cmd_eval(dir: &Path, seed: u64, episodes: usize) -> Result<()> {
    let cfg = load_config(dir)?;
    let env = Env::by_name(&cfg.env, cfg.env_seed)?;
    let actor = load_actor(dir, &cfg, &env, seed)?;
    let (mean, std) = evaluate_actor(&actor, &mut env.clone(), episodes, &mut stream(seed, 4))?;
    println!("{} seed {seed}: return {mean:.4} +- {std:.4} over {episodes} episodes", cfg.env);
    Ok(())
}

fn load_pca(dir: &Path, seed: u64) -> Result<(Vec<u64>, mcrl::harness::analysis::Pca)> {
    let path = dir.join(snapshots_file(seed));
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (was the run made with snapshot_every > 0?)", path.display()))?;
    let snaps = parse_snapshots(&text)?;
    let steps = snaps.iter().map(|s| s.step).collect();
    let flats: Vec<Vec<f64>> = snaps.iter().map(|s| s.flat()).collect();
    Ok((steps, pca_trajectory(&flats)?))
}

fn cmd_pca(dir: &Path, seed: u64) -> Result<()> {
    let (steps, pca) = load_pca(dir, seed)?;
    let mut out = String::from("step,pc1,pc2\n");
    for (step, [x, y]) in steps.iter().zip(&pca.coords) {
        let _ = writeln!(out, "{step},{x},{y}");
    }
    let path = dir.join(format!("pca_seed{seed}.csv"));
    std::fs::write(&path, out)?;
    println!(
        "explained variance: {:.4}, {:.4}; wrote {}",
        pca.explained_variance_ratio[0],
        pca.explained_variance_ratio[1],
        path.display()
    );
    Ok(())
}

fn cmd_surface(dir: &Path, seed: u64, span: Option<f64>, points: usize, episodes: usize) -> Result<()> {
    if points == 0 {
        bail!("--points must be at least 1");
    }
    let cfg = load_config(dir)?;
    let env = Env::by_name(&cfg.env, cfg.env_seed)?;
    let actor = load_actor(dir, &cfg, &env, seed)?;
    let (_, pca) = load_pca(dir, seed)?;
    // Default span covers the whole projected trajectory.
    let span = span.unwrap_or_else(|| {
        pca.coords
            .iter()
            .flat_map(|c| c.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
            .max(1e-3)
            * 1.2
    });
    let grid: Vec<f64> = if points == 1 {
        vec![0.0]
    } else {
        (0..points)
            .map(|i| -span + 2.0 * span * i as f64 / (points - 1) as f64)
            .collect()
    };
    let [d1, d2] = &pca.components;
    let surface = reward_surface(&actor, d1, d2, &grid, &grid, &env, episodes, seed)?;
    let mut out = String::from("x,y,return\n");
    for (j, row) in surface.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let _ = writeln!(out, "{},{},{v}", grid[i], grid[j]);
        }
    }
    let path = dir.join(format!("surface_seed{seed}.csv"));
    std::fs::write(&path, out)?;
    println!("{points}x{points} grid over [-{span:.4}, {span:.4}]; wrote {}", path.display());
    Ok(())
}

struct Summary {
    label: String,
    max_avg: f64,
    critic_area: f64,
    final_meta: f64,
}

/// Area over the rows that have a value (warmup rows carry no losses).
fn finite_area(steps: &[u64], values: &[f64]) -> f64 {
    let (s, v): (Vec<u64>, Vec<f64>) = steps
        .iter()
        .zip(values)
        .filter(|(_, v)| v.is_finite())
        .map(|(s, v)| (*s, *v))
        .unzip();
    area_under(&s, &v)
}

fn summarise(dir: &Path) -> Result<Summary> {
    let cfg = load_config(dir)?;
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let path = dir.join(trace_file(seed));
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        curves.push(LearningCurve::from_csv(&text)?);
    }
    let max_avg = max_average_return(&curves, cfg.smooth_window)?;
    let mean_over = |f: &dyn Fn(&LearningCurve) -> f64| curves.iter().map(f).sum::<f64>() / curves.len() as f64;
    let critic_area = mean_over(&|c| finite_area(&c.steps(), &smooth(&c.column(|r| r.loss_critic), cfg.smooth_window)));
    let final_meta = mean_over(&|c| c.rows.last().map_or(f64::NAN, |r| r.loss_meta));
    Ok(Summary {
        label: format!(
            "{}-{} on {}",
            cfg.algo,
            mcrl::harness::config::variant_name(cfg.mc_variant),
            cfg.env
        ),
        max_avg,
        critic_area,
        final_meta,
    })
}

fn cmd_compare(a: &Path, b: &Path) -> Result<()> {
    let (sa, sb) = (summarise(a)?, summarise(b)?);
    println!("{:<40} {:>16} {:>16} {:>14}", "run", "max avg return", "L_critic area", "final L_meta");
    for s in [&sa, &sb] {
        println!(
            "{:<40} {:>16.3} {:>16.3} {:>14.3e}",
            s.label, s.max_avg, s.critic_area, s.final_meta
        );
    }
    let margin = 0.05 * sa.max_avg.abs();
    let verdict = if sb.max_avg >= sa.max_avg - margin { "within" } else { "outside" };
    println!(
        "second run is {verdict} 5% of the first (difference {:+.3})",
        sb.max_avg - sa.max_avg
    );
    Ok(())
}
