#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mixstop::diffusion::{exit_time_ladder, DiffusionModel};
use mixstop::equilibrium::{run_full_report, GridSpec, ReportOptions, ValueFunctions, Verdict};
use mixstop::payoff::estimate_values;
use mixstop::solvers::{solve_mean_variance_gbm, solve_variance_gbm, MeanVarianceRegime};
use serde_json::json;

use config::{closed_form_values, Overrides, Resolved, RunConfig, ValuesSpec};
use output::{write_text, Table};

#[derive(Parser, Debug)]
#[command(
    name = "mixstop",
    version,
    about = "Mixed equilibrium stopping times for time-inconsistent stopping problems"
)]
struct Cli {
    /// Master seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Monte Carlo paths per estimate.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Simulation time step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Simulation horizon; paths still running are censored.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Output file (CSV for tables, JSON for reports).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium of the variance problem under GBM.
    SolveVariance {
        #[arg(long, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 10.0)]
        hi: f64,
        #[arg(long, default_value_t = 101)]
        n: usize,
    },
    /// Regime and threshold of the mean-variance problem under GBM.
    SolveMeanvariance {
        #[arg(long, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        gamma: f64,
        /// Right end of the CSV grid (default 2b).
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long, default_value_t = 101)]
        n: usize,
    },
    /// Checks a strategy described in a JSON configuration.
    Verify { config: PathBuf },
    /// Figure data: fig1 is the variance problem at (-0.1, 0.15), fig2 the
    /// mean-variance problem at (0.07, 0.45, 1.1).
    Figure {
        #[arg(value_enum)]
        name: Figure,
        #[arg(long, default_value_t = 101)]
        n: usize,
    },
    /// Exit-time scaling `h²/E τ_h` and `E τ_h²/E τ_h` over a ladder of `h`.
    LimitsCheck {
        #[arg(long, value_enum, default_value_t = ModelKind::Wiener)]
        model: ModelKind,
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
        x: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.04,0.02,0.01")]
        h: Vec<f64>,
    },
    /// Monte Carlo `φ`, `ψ`, `J` for the strategy of a configuration.
    Simulate {
        config: PathBuf,
        /// Single starting point instead of the configured grid.
        #[arg(long, allow_negative_numbers = true)]
        x: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Figure {
    Fig1,
    Fig2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKind {
    Wiener,
    Gbm,
}

/// Process outcome, mapped onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Outcome::Pass,
            Verdict::Fail => Outcome::Fail,
            Verdict::Inconclusive => Outcome::Inconclusive,
        }
    }
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Inconclusive => 3,
        }
    }
}

const INPUT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(INPUT_ERROR)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let over = Overrides {
        seed: cli.seed,
        dt: cli.dt,
        horizon: cli.horizon,
        paths: cli.paths,
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::SolveVariance {
            mu,
            sigma2,
            lo,
            hi,
            n,
        } => solve_variance(*mu, *sigma2, GridSpec::new(*lo, *hi, *n)?, out),
        Command::SolveMeanvariance {
            mu,
            sigma2,
            gamma,
            hi,
            n,
        } => solve_meanvariance(*mu, *sigma2, *gamma, *hi, *n, out),
        Command::Verify { config } => verify(config, over, out),
        Command::Figure { name, n } => figure(*name, *n, out),
        Command::LimitsCheck {
            model,
            mu,
            sigma2,
            x,
            h,
        } => limits_check(*model, *mu, *sigma2, *x, h, over, out),
        Command::Simulate { config, x } => simulate(config, *x, over, out),
    }
}

fn solve_variance(mu: f64, sigma2: f64, grid: GridSpec, out: Option<&Path>) -> Result<Outcome> {
    let s = solve_variance_gbm(mu, sigma2)?;
    println!("lambda = {}", s.lambda);
    println!("coefficient = {}", s.j_coefficient);
    println!("psi_slope = {}", s.psi_slope);
    println!("phi_coefficient = {}", s.phi_coefficient);
    println!("J(x) = {} * x^2", s.j_coefficient);
    if let Some(path) = out {
        let mut t = Table::new(&["x", "J"]);
        for x in grid.points() {
            t.push(vec![x, s.j(x)]);
        }
        t.write(Some(path))?;
    }
    Ok(Outcome::Pass)
}

fn solve_meanvariance(
    mu: f64,
    sigma2: f64,
    gamma: f64,
    hi: Option<f64>,
    n: usize,
    out: Option<&Path>,
) -> Result<Outcome> {
    let s = solve_mean_variance_gbm(mu, sigma2, gamma)?;
    println!("regime = {}", s.regime.name());
    println!("xi = {}", s.xi);
    match s.regime {
        MeanVarianceRegime::Threshold { b } => {
            println!("b = {b}");
            let tv = s.threshold().expect("threshold regime");
            println!("J(b) = {}", tv.j(b));
            if let Some(path) = out {
                let grid = GridSpec::new(0.0, hi.unwrap_or(2.0 * b), n)?;
                figure_table(&grid.points(), Some(b), |x| tv.j(x)).write(Some(path))?;
            }
        }
        MeanVarianceRegime::StopImmediately => {
            println!("J(x) = x");
            if let Some(path) = out {
                let grid = GridSpec::new(0.0, hi.unwrap_or(1.0), n)?;
                figure_table(&grid.points(), None, |x| x).write(Some(path))?;
            }
        }
        MeanVarianceRegime::NoEquilibrium => {
            println!("no pure or mixed equilibrium exists for these parameters");
            if out.is_some() {
                eprintln!("no value function to write");
            }
        }
        MeanVarianceRegime::ValueUnbounded => {
            println!("the objective is unbounded; no value function exists");
            if out.is_some() {
                eprintln!("no value function to write");
            }
        }
    }
    Ok(Outcome::Pass)
}

/// `x, J, diag` rows, with `extra` inserted into the grid.
fn figure_table(xs: &[f64], extra: Option<f64>, j: impl Fn(f64) -> f64) -> Table {
    let mut xs = xs.to_vec();
    xs.extend(extra);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut t = Table::new(&["x", "J", "diag"]);
    for x in xs {
        t.push(vec![x, j(x), x]);
    }
    t
}

fn figure(name: Figure, n: usize, out: Option<&Path>) -> Result<Outcome> {
    let table = match name {
        Figure::Fig1 => {
            let s = solve_variance_gbm(-0.1, 0.15)?;
            let mut t = Table::new(&["x", "J"]);
            for x in GridSpec::new(0.0, 10.0, n)?.points() {
                t.push(vec![x, s.j(x)]);
            }
            t
        }
        Figure::Fig2 => {
            let tv = solve_mean_variance_gbm(0.07, 0.45, 1.1)?
                .threshold()
                .expect("figure parameters lie in the threshold regime");
            figure_table(&GridSpec::new(0.0, 0.5, n)?.points(), Some(tv.b), |x| {
                tv.j(x)
            })
        }
    };
    table.write(out)?;
    Ok(Outcome::Pass)
}

fn verify(path: &Path, over: Overrides, out: Option<&Path>) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = RunConfig::load(path)?;
    let resolved = Resolved::new(Some(&cfg), over)?;
    let (problem, model, strategy) = cfg.build()?;
    let vf = match cfg.values {
        ValuesSpec::ClosedForm => closed_form_values(&problem, &model, &strategy)?,
        ValuesSpec::MonteCarlo { .. } => {
            let xs: Vec<f64> = cfg
                .grid
                .points()
                .into_iter()
                .filter(|&x| model.contains(x))
                .collect();
            ValueFunctions::monte_carlo(
                &problem,
                &model,
                &strategy,
                &xs,
                &resolved.path,
                resolved.paths,
            )?
        }
    };
    let options = ReportOptions {
        config: resolved.path,
        evidence_paths: resolved.evidence_paths,
        ..ReportOptions::default()
    };
    let report = run_full_report(&problem, &model, &strategy, &vf, &cfg.grid, &options)?;
    let runtime = start.elapsed().as_secs_f64();

    println!(
        "strategy: {} (intensity {}, C = {})",
        strategy.label,
        strategy.intensity.describe(),
        strategy.continuation
    );
    for v in &report.verdicts {
        let worst = v
            .worst_residual()
            .map(|r| format!(", worst residual {r:.6e}"))
            .unwrap_or_default();
        println!(
            "condition {}: {} ({} points{worst})",
            v.condition,
            v.overall,
            v.points.len()
        );
        if let Some(note) = &v.note {
            println!("  note: {note}");
        }
        for ladder in &v.evidence {
            if let Some(g) = ladder.finest() {
                println!(
                    "  deviation gain at h = {}: {:.6e} (se {:.2e})",
                    g.h, g.gain, g.std_error
                );
            }
        }
    }
    let failed = report.failures();
    if !failed.is_empty() {
        let names: Vec<String> = failed.iter().map(|c| c.to_string()).collect();
        println!("failed: {}", names.join(", "));
    }
    println!("summary: {}", report.summary);

    let doc = json!({
        "config": {
            "run": cfg,
            "resolved": resolved,
            "strategy": report.strategy,
            "mode": report.mode,
        },
        "verdicts": report.verdicts,
        "summary": report.summary,
        "runtime_seconds": runtime,
    });
    let target = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.report.as_ref().map(PathBuf::from));
    if let Some(p) = target {
        write_text(Some(&p), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    Ok(report.summary.into())
}

const SCALED_RATE_TOL: f64 = 0.05;

#[allow(clippy::too_many_arguments)]
fn limits_check(
    kind: ModelKind,
    mu: Option<f64>,
    sigma2: Option<f64>,
    x: f64,
    hs: &[f64],
    over: Overrides,
    out: Option<&Path>,
) -> Result<Outcome> {
    let model = match kind {
        ModelKind::Wiener => {
            if mu.is_some() || sigma2.is_some() {
                bail!("--mu and --sigma2 apply to the gbm model only");
            }
            DiffusionModel::wiener()
        }
        ModelKind::Gbm => match (mu, sigma2) {
            (Some(mu), Some(s2)) => DiffusionModel::gbm(mu, s2)?,
            _ => bail!("the gbm model needs --mu and --sigma2"),
        },
    };
    model.check_interior(x)?;
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0)) {
        bail!("--h needs positive values");
    }
    for &h in hs {
        model.check_interior(x - h)?;
        model.check_interior(x + h)?;
    }
    let resolved = Resolved::new(None, over)?;
    let stats = exit_time_ladder(&model, x, hs, &resolved.path, resolved.paths)?;
    let target = model.variance(x);
    let mut t = Table::new(&[
        "h",
        "scaled_rate",
        "scaled_rate_se",
        "second_moment_ratio",
        "sigma2",
    ]);
    for s in &stats {
        let se = s.scaled_rate() * s.mean_tau.std_error / s.mean_tau.estimate;
        t.push(vec![
            s.h,
            s.scaled_rate(),
            se,
            s.second_moment_ratio(),
            target,
        ]);
    }
    let mut by_h: Vec<_> = stats.iter().collect();
    by_h.sort_by(|a, b| b.h.total_cmp(&a.h));
    let finest = by_h.last().expect("non-empty ladder");
    let rel = (finest.scaled_rate() - target).abs() / target;
    let decreasing = by_h
        .windows(2)
        .all(|w| w[1].second_moment_ratio() < w[0].second_moment_ratio());
    match out {
        Some(_) => t.write(out)?,
        None => print!("{}", t.render()),
    }
    eprintln!(
        "sigma2(x) = {target}; relative error at h = {}: {rel:.4}; second column decreasing: {decreasing}",
        finest.h
    );
    Ok(if rel < SCALED_RATE_TOL && decreasing {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}

fn simulate(path: &Path, x: Option<f64>, over: Overrides, out: Option<&Path>) -> Result<Outcome> {
    let cfg = RunConfig::load(path)?;
    let resolved = Resolved::new(Some(&cfg), over)?;
    let (problem, model, strategy) = cfg.build()?;
    let xs: Vec<f64> = match x {
        Some(x) => {
            model.check_interior(x)?;
            vec![x]
        }
        None => cfg
            .grid
            .points()
            .into_iter()
            .filter(|&x| model.contains(x))
            .collect(),
    };
    let mut t = Table::new(&["x", "phi", "phi_se", "psi", "psi_se", "J", "J_se"]);
    for x in xs {
        let v = estimate_values(
            &problem,
            &model,
            &strategy,
            x,
            &resolved.path,
            resolved.paths,
        )?;
        if v.phi.high_censoring {
            eprintln!(
                "warning: {:.1}% of paths from x = {x} were censored at the horizon",
                100.0 * v.phi.censored_fraction
            );
        }
        t.push(vec![
            x,
            v.phi.estimate,
            v.phi.std_error,
            v.psi.estimate,
            v.psi.std_error,
            v.j,
            v.j_std_error,
        ]);
    }
    t.write(out)?;
    Ok(Outcome::Pass)
}
