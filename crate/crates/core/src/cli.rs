//! Command-line runner: one subcommand per experiment, CSV on stdout or to a
//! file, exit code 0 on success, 2 when a check fails and 1 on usage errors.
//!
//! Every CSV starts with a comment line `# ppde <version>, seed=<s>, timestamp=<ts>`.
//! Timestamps and runtimes are written as 0 unless `--timing` is passed, so
//! that identical inputs give identical bytes. `PPDE_WORKERS` sets the size of
//! the worker pool.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::acceptance::{self, Suite};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::expectation::{lower_expectation, upper_expectation, McConfig};
use crate::measures::{build_lattice, simulate_paths_with, ControlPair, ControlProcess, Refinement};
use crate::oracles::{self, Tolerances};
use crate::pathspace::{fmt_f64, write_batch_csv, AdaptedFunctional, DiscretePath, HittingTimeSpec, TimeGrid};
use crate::rng::NoiseKind;
use crate::snell::{brute_force_stopping, snell_envelope, verify_supermartingale, TreeKernel, TreeSpec, BRUTE_FORCE_MAX_DEPTH};
use crate::solvers::{perron_scheme, solve_first_order, solve_hjb, solve_semilinear, HjbProblem, Modulus, SolveConfig, SolverOutput};
use crate::viscosity::{check_both, CheckConfig, Verdict};

/// Environment variable holding the worker count.
pub const WORKERS_VAR: &str = "PPDE_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "ppde", version, about = "Path-dependent PDE laboratory")]
pub struct Cli {
    /// Record wall-clock timestamps and runtimes in the output.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate controlled paths with constant drift and diffusion.
    Simulate(SimulateArgs),
    /// Upper or lower nonlinear expectation of a terminal functional.
    Expectation(ExpectationArgs),
    /// Optimal stopping value on a tree, checked against brute force.
    Snell(SnellArgs),
    /// Semilinear solver on a heat-equation oracle.
    SolveSemilinear(SemilinearArgs),
    /// Uncertain-volatility HJB solver.
    SolveHjb(HjbArgs),
    /// First-order dynamic programming on `MAXDRIFT`.
    SolveFirstOrder(FirstOrderArgs),
    /// Exit-skeleton Perron bounds.
    Perron(PerronArgs),
    /// Viscosity sub- and supersolution checks at sampled points.
    CheckViscosity(ViscosityArgs),
    /// Classification checks of one registered oracle.
    VerifyExample(VerifyArgs),
    /// Acceptance suite.
    Acceptance(AcceptanceArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub diffusion: Option<f64>,
    /// gaussian or rademacher.
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExpectationArgs {
    #[command(flatten)]
    pub common: Common,
    /// Oracle name, `square` or `neg-square`; its terminal data is used.
    #[arg(long)]
    pub functional: Option<String>,
    #[arg(long = "l")]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Report the lower expectation instead.
    #[arg(long)]
    pub lower: bool,
}

#[derive(Debug, Args)]
pub struct SnellArgs {
    #[command(flatten)]
    pub common: Common,
    /// Oracle whose value functional is the reward.
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long = "l")]
    pub l: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Radius of the ball hitting time; the horizon alone when absent.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SemilinearArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dates: Option<usize>,
    /// Full tree enumeration (one dimension, few steps).
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct HjbArgs {
    #[command(flatten)]
    pub common: Common,
    /// `square`, `neg-square` or an oracle name (its terminal data).
    #[arg(long)]
    pub problem: Option<String>,
    /// Volatility band, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct FirstOrderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long = "l")]
    pub l: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Sampled anchors besides the origin (needs a seed).
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PerronArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Lipschitz constant of the modulus of continuity.
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ViscosityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub oracle: Option<String>,
    /// Adds `c(T − t)` to the solution before checking.
    #[arg(long, allow_negative_numbers = true)]
    pub corrupt: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long = "l")]
    pub l: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub name: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AcceptanceArgs {
    /// List the criteria without running them.
    #[arg(long)]
    pub list: bool,
    /// Criteria to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<u8>>,
    /// Multiplier on every Monte Carlo path count.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

enum Status {
    Ok,
    CheckFailed,
}

/// A CSV document with its metadata line.
struct Table {
    seed: Option<u64>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(seed: Option<u64>, header: &[&str]) -> Self {
        Self { seed, header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn render(&self, timing: bool) -> Result<Vec<u8>> {
        let ts = if timing { SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()) } else { 0 };
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        let mut buf = format!("# ppde {}, seed={seed}, timestamp={ts}\n", env!("CARGO_PKG_VERSION")).into_bytes();
        let mut wr = csv::Writer::from_writer(&mut buf);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        drop(wr);
        Ok(buf)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let workers = std::env::var(WORKERS_VAR).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&k| k > 0);
    run_with_workers(args, out, workers)
}

/// As [`run`] with an explicit worker count (`None` uses the global pool).
pub fn run_with_workers<I, S>(args: I, out: &mut dyn Write, workers: Option<usize>) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let mut buf = Vec::new();
    let result = match workers {
        None => dispatch(&cli, &mut buf),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &mut buf)),
            Err(e) => Err(Error::Config(format!("cannot build a pool of {k} workers: {e}"))),
        },
    };
    let result = result.and_then(|s| out.write_all(&buf).map(|_| s).map_err(Error::from));
    match result {
        Ok(Status::Ok) => 0,
        Ok(Status::CheckFailed) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> Result<Status> {
    match &cli.command {
        Command::Simulate(a) => emit(cli, &a.common, "simulate", out, |cfg| simulate(a, cfg)),
        Command::Expectation(a) => emit(cli, &a.common, "expectation", out, |cfg| expectation(a, cfg)),
        Command::Snell(a) => emit(cli, &a.common, "snell", out, |cfg| snell(a, cfg)),
        Command::SolveSemilinear(a) => emit(cli, &a.common, "solve-semilinear", out, |cfg| semilinear(a, cfg, cli.timing)),
        Command::SolveHjb(a) => emit(cli, &a.common, "solve-hjb", out, |cfg| hjb(a, cfg, cli.timing)),
        Command::SolveFirstOrder(a) => emit(cli, &a.common, "solve-first-order", out, |cfg| first_order(a, cfg, cli.timing)),
        Command::Perron(a) => emit(cli, &a.common, "perron", out, |cfg| perron(a, cfg, cli.timing)),
        Command::CheckViscosity(a) => emit(cli, &a.common, "check-viscosity", out, |cfg| viscosity(a, cfg)),
        Command::VerifyExample(a) => {
            let common = Common { config: None, seed: a.seed, output: a.output.clone() };
            emit(cli, &common, "verify-example", out, |cfg| verify(a, cfg))
        }
        Command::Acceptance(a) => {
            let common = Common { config: None, seed: a.seed, output: a.output.clone() };
            emit(cli, &common, "acceptance", out, |cfg| run_acceptance(a, cfg))
        }
    }
}

/// Loads the config, merges the shared flags and writes the table.
fn emit(
    cli: &Cli,
    common: &Common,
    name: &str,
    out: &mut dyn Write,
    body: impl FnOnce(&ExperimentConfig) -> Result<(Table, Status)>,
) -> Result<Status> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig { schema: crate::config::SCHEMA_VERSION, ..Default::default() },
    };
    if let Some(c) = &cfg.command {
        if c != name {
            return Err(Error::Config(format!("config is for `{c}`, not `{name}`")));
        }
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.output.is_some() {
        cfg.output = common.output.clone();
    }
    let (table, status) = body(&cfg)?;
    let bytes = table.render(cli.timing)?;
    match &cfg.output {
        Some(p) => std::fs::write(p, bytes)?,
        None => out.write_all(&bytes)?,
    }
    Ok(status)
}

fn seed_of(cfg: &ExperimentConfig, what: &str) -> Result<u64> {
    cfg.seed.ok_or_else(|| Error::Config(format!("{what} is stochastic: pass --seed or set `seed` in the config")))
}

fn name_of(flag: &Option<String>, cfg: &ExperimentConfig, default: &str) -> String {
    flag.clone().or_else(|| cfg.problem.clone()).unwrap_or_else(|| default.to_string())
}

fn noise_of(cfg: &ExperimentConfig, flag: &Option<String>) -> Result<NoiseKind> {
    match flag.as_ref().or(cfg.numerics.noise.as_ref()) {
        None => Ok(NoiseKind::Gaussian),
        Some(s) => s.parse(),
    }
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{what} must be positive, got {v}")))
    }
}

fn count(v: usize, what: &str) -> Result<usize> {
    if v > 0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{what} must be positive")))
    }
}

/// Terminal data by name: `square`, `neg-square` or a registered oracle.
pub fn terminal_by_name(name: &str) -> Result<(String, Arc<dyn AdaptedFunctional>, f64)> {
    match name.to_ascii_lowercase().as_str() {
        "square" => Ok(("square".into(), Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2)), oracles::HORIZON)),
        "neg-square" => Ok(("neg-square".into(), Arc::new(|t: f64, p: &DiscretePath| -p.x(t).powi(2)), oracles::HORIZON)),
        _ => {
            let e = oracles::find(name)?;
            Ok((e.name.to_string(), e.terminal.clone(), e.horizon))
        }
    }
}

fn runtime(o: &SolverOutput, timing: bool) -> String {
    if timing { o.runtime_ms } else { 0 }.to_string()
}

fn solver_cells(o: &SolverOutput, timing: bool) -> Vec<String> {
    vec![
        o.scheme.to_string(),
        o.problem.clone(),
        fmt_f64(o.dt),
        o.npaths.to_string(),
        o.seed.to_string(),
        fmt_f64(o.value),
        fmt_f64(o.stderr),
        runtime(o, timing),
    ]
}

const SOLVER_HEADER: [&str; 8] = ["scheme", "problem", "dt", "npaths", "seed", "value", "stderr", "runtime_ms"];

fn with_solver_header(extra: &[&'static str]) -> Vec<&'static str> {
    SOLVER_HEADER.iter().chain(extra).copied().collect()
}

fn simulate(a: &SimulateArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let seed = seed_of(cfg, "simulate")?;
    let nm = &cfg.numerics;
    let n = count(a.n.or(nm.n).unwrap_or(4), "n")?;
    let steps = count(a.steps.or(nm.steps).unwrap_or(100), "steps")?;
    let horizon = positive(a.horizon.or(nm.horizon).unwrap_or(1.0), "horizon")?;
    let drift = a.drift.or(nm.drift).unwrap_or(0.0);
    let diffusion = a.diffusion.or(nm.diffusion).unwrap_or(1.0);
    let pair = ControlPair::scalar(1, &[drift], diffusion)?;
    let bound = drift.abs().max(pair.half_trace_sq()).max(f64::MIN_POSITIVE);
    let c = ControlProcess::constant(TimeGrid::uniform(0.0, horizon, steps)?, pair, bound)?;
    let paths = simulate_paths_with(&c, n, seed, noise_of(cfg, &a.noise)?);
    let mut buf = Vec::new();
    write_batch_csv(&paths, &mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Error::Evaluation(e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let mut t = Table::new(Some(seed), &header);
    t.rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((t, Status::Ok))
}

fn refinement_of(cfg: &ExperimentConfig) -> Refinement {
    cfg.numerics.refinement.unwrap_or_default()
}

fn expectation(a: &ExpectationArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let seed = seed_of(cfg, "expectation")?;
    let nm = &cfg.numerics;
    let (name, xi, horizon) = terminal_by_name(&name_of(&a.functional, cfg, "square"))?;
    let l = positive(a.l.or(nm.l).unwrap_or(1.0), "L")?;
    let n = count(a.n.or(nm.n).unwrap_or(10_000), "n")?;
    let steps = count(a.steps.or(nm.steps).unwrap_or(32), "steps")?;
    let lattice = build_lattice(l, 1, refinement_of(cfg))?;
    let mc = McConfig::new(TimeGrid::uniform(0.0, nm.horizon.unwrap_or(horizon), steps)?, n, seed).with_noise(noise_of(cfg, &nm.noise)?);
    let est = if a.lower { lower_expectation(xi.as_ref(), &lattice, &mc)? } else { upper_expectation(xi.as_ref(), &lattice, &mc)? };
    let mut t = Table::new(Some(seed), &["functional", "L", "n", "seed", "value", "stderr", "arg_control"]);
    t.rows.push(vec![name, fmt_f64(l), n.to_string(), seed.to_string(), fmt_f64(est.value), fmt_f64(est.stderr), est.arg_label]);
    Ok((t, Status::Ok))
}

fn snell(a: &SnellArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let e = oracles::find(&name_of(&a.reward, cfg, "HEAT-RUNMAX"))?;
    let l = positive(a.l.or(nm.l).unwrap_or(1.0), "L")?;
    let depth = count(a.depth.or(nm.depth).unwrap_or(8), "depth")?;
    let horizon = nm.horizon.unwrap_or(e.horizon).min(e.horizon);
    let dt = horizon / depth as f64;
    let h = match a.eps.or(nm.eps.as_ref().and_then(|v| v.first().copied())) {
        Some(eps) => HittingTimeSpec::radius(positive(eps, "eps")?)?,
        None => HittingTimeSpec::horizon(1.0)?,
    };
    let kernel = TreeKernel::second_order(&build_lattice(l, 1, refinement_of(cfg))?, dt)?;
    let spec = TreeSpec::new(depth, dt);
    let st = snell_envelope(e.u.as_ref(), &h, &kernel, spec)?;
    let violations = verify_supermartingale(&st).len();
    let (oracle, matched) = if depth <= BRUTE_FORCE_MAX_DEPTH {
        let bf = brute_force_stopping(e.u.as_ref(), &h, &kernel, spec)?;
        (fmt_f64(bf), (bf - st.y0()).abs() <= 1e-12 && violations == 0)
    } else {
        (String::new(), violations == 0)
    };
    let mut t = Table::new(cfg.seed, &["depth", "L", "Y0", "tau_star_mean", "oracle_value", "match"]);
    t.rows.push(vec![depth.to_string(), fmt_f64(l), fmt_f64(st.y0()), fmt_f64(st.tau_star_mean()), oracle, matched.to_string()]);
    Ok((t, if matched { Status::Ok } else { Status::CheckFailed }))
}

fn semilinear(a: &SemilinearArgs, cfg: &ExperimentConfig, timing: bool) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let e = oracles::find(&name_of(&a.problem, cfg, "QUADRATIC"))?;
    let p = e.semilinear_problem()?;
    let dt = positive(a.dt.or(nm.dt).unwrap_or(0.01), "dt")?;
    let scfg = if a.exact || nm.exact == Some(true) {
        SolveConfig::exact(dt)
    } else {
        let seed = seed_of(cfg, "solve-semilinear")?;
        let mut s = SolveConfig::new(dt, count(a.n.or(nm.n).unwrap_or(10_000), "n")?, seed).with_dates(a.dates.or(nm.dates).unwrap_or(20));
        s.noise = noise_of(cfg, &nm.noise)?;
        s
    };
    let o = solve_semilinear(&p, &scfg)?;
    let exact = e.u.eval(0.0, &DiscretePath::at_origin(0.0, 1));
    let mut t = Table::new(cfg.seed, &with_solver_header(&["basis_size", "min_rank", "oracle_value", "error"]));
    let mut row = solver_cells(&o, timing);
    row.extend([o.basis_size.to_string(), o.min_rank.to_string(), fmt_f64(exact), fmt_f64(o.value - exact)]);
    t.rows.push(row);
    Ok((t, Status::Ok))
}

fn hjb(a: &HjbArgs, cfg: &ExperimentConfig, timing: bool) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let (name, xi, horizon) = terminal_by_name(&name_of(&a.problem, cfg, "square"))?;
    let sigmas = a.sigmas.clone().or_else(|| nm.sigmas.clone()).unwrap_or_else(|| vec![0.5, 1.0]);
    let p = HjbProblem::uncertain_volatility(name, horizon, sigmas, xi);
    let dt = positive(a.dt.or(nm.dt).unwrap_or(0.05), "dt")?;
    let scfg = if a.exact || nm.exact == Some(true) {
        SolveConfig::exact(dt)
    } else {
        SolveConfig::new(dt, count(a.n.or(nm.n).unwrap_or(10_000), "n")?, seed_of(cfg, "solve-hjb")?)
    };
    let o = solve_hjb(&p, &scfg)?;
    let mut t = Table::new(cfg.seed, &with_solver_header(&["basis_size", "min_rank", "control"]));
    let mut row = solver_cells(&o, timing);
    row.extend([o.basis_size.to_string(), o.min_rank.to_string(), o.control.clone().unwrap_or_default()]);
    t.rows.push(row);
    Ok((t, Status::Ok))
}

fn first_order(a: &FirstOrderArgs, cfg: &ExperimentConfig, timing: bool) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let e = oracles::find(&name_of(&a.problem, cfg, "MAXDRIFT"))?;
    let l = positive(a.l.or(nm.l).unwrap_or(1.0), "L")?;
    let dt = positive(a.dt.or(nm.dt).unwrap_or(0.05), "dt")?;
    let p = e.first_order_problem(l, refinement_of(cfg))?;
    let mut anchors = vec![(0.0, DiscretePath::at_origin(0.0, 1))];
    let k = a.points.or(nm.points).unwrap_or(0);
    if k > 0 {
        anchors.extend(oracles::sample_points(&e, k, seed_of(cfg, "sampling anchors")?)?);
    }
    let mut t = Table::new(cfg.seed, &with_solver_header(&["t", "oracle_value", "error"]));
    for (s, prefix) in &anchors {
        let o = solve_first_order(&p, *s, prefix, dt, 1 << 24)?;
        let exact = e.u.eval(*s, prefix);
        let mut row = solver_cells(&o, timing);
        row.extend([fmt_f64(*s), fmt_f64(exact), fmt_f64(o.value - exact)]);
        t.rows.push(row);
    }
    Ok((t, Status::Ok))
}

fn perron(a: &PerronArgs, cfg: &ExperimentConfig, timing: bool) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let seed = seed_of(cfg, "perron")?;
    let e = oracles::find(&name_of(&a.problem, cfg, "QUADRATIC"))?;
    let rho = positive(a.rho.unwrap_or(1.0), "rho")?;
    let p = e.semilinear_problem()?.with_modulus(Modulus::Lipschitz(rho));
    let eps = a.eps.clone().or_else(|| nm.eps.clone()).unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let scfg = SolveConfig::new(positive(a.dt.or(nm.dt).unwrap_or(0.01), "dt")?, count(a.n.or(nm.n).unwrap_or(10_000), "n")?, seed);
    let exact = e.u.eval(0.0, &DiscretePath::at_origin(0.0, 1));
    let mut t = Table::new(Some(seed), &with_solver_header(&["eps", "upper", "lower", "gap", "oracle_value", "within"]));
    let mut all = true;
    for &x in &eps {
        let r = perron_scheme(&p, positive(x, "eps")?, &scfg)?;
        let within = (r.psi - exact).abs() <= r.half_gap + 3.0 * r.stderr;
        all &= within;
        let o = SolverOutput { value: r.psi, stderr: r.stderr, ..perron_output(&p.name, &scfg) };
        let mut row = solver_cells(&o, timing);
        row.extend([fmt_f64(x), fmt_f64(r.upper), fmt_f64(r.lower), fmt_f64(r.gap), fmt_f64(exact), within.to_string()]);
        t.rows.push(row);
    }
    Ok((t, if all { Status::Ok } else { Status::CheckFailed }))
}

fn perron_output(problem: &str, cfg: &SolveConfig) -> SolverOutput {
    SolverOutput {
        scheme: "perron",
        problem: problem.to_string(),
        dt: cfg.dt,
        npaths: cfg.n,
        seed: cfg.seed,
        value: f64::NAN,
        stderr: 0.0,
        runtime_ms: 0,
        basis_size: 0,
        min_rank: 0,
        control: None,
        notes: Vec::new(),
        field: None,
    }
}

fn viscosity(a: &ViscosityArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let nm = &cfg.numerics;
    let seed = seed_of(cfg, "check-viscosity")?;
    let e = oracles::find(&name_of(&a.oracle, cfg, "HEAT-INTEGRAL"))?;
    let l = positive(a.l.or(nm.l).unwrap_or(1.0), "L")?;
    let points = count(a.points.or(nm.points).unwrap_or(10), "points")?;
    let c = a.corrupt.unwrap_or(0.0);
    let horizon = e.horizon;
    let u: Arc<dyn AdaptedFunctional> = if c == 0.0 {
        e.u.clone()
    } else {
        let base = e.u.clone();
        Arc::new(move |t: f64, p: &DiscretePath| base.eval(t, p) + c * (horizon - t))
    };
    let check = CheckConfig::new(horizon);
    let mut t = Table::new(Some(seed), &["point", "t", "side", "verdict", "members", "candidates", "max_operator"]);
    let mut failed = false;
    for (i, (s, path)) in oracles::sample_points(&e, points, seed)?.iter().enumerate() {
        let (sub, sup) = check_both(u.clone(), &e.generator, l, *s, path, &check)?;
        for rep in [sub, sup] {
            failed |= rep.verdict == Verdict::Violation;
            let worst = rep.members().map(|r| r.operator).fold(f64::NAN, f64::max);
            t.rows.push(vec![
                i.to_string(),
                fmt_f64(*s),
                rep.side.to_string(),
                rep.verdict.to_string(),
                rep.members().count().to_string(),
                rep.records.len().to_string(),
                fmt_f64(worst),
            ]);
        }
    }
    Ok((t, if failed { Status::CheckFailed } else { Status::Ok }))
}

fn verify(a: &VerifyArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let e = oracles::find(&a.name)?;
    let mut tol = Tolerances::default();
    if let Some(s) = cfg.seed {
        tol.seed = s;
    }
    let rows = oracles::verify_entry(&e, &tol)?;
    let pass = rows.iter().all(|r| r.pass);
    let mut t = Table::new(Some(tol.seed), &["oracle", "check", "points", "max_defect", "pass"]);
    t.rows = rows
        .into_iter()
        .map(|r| vec![r.oracle, r.check, r.points.to_string(), fmt_f64(r.max_defect), r.pass.to_string()])
        .collect();
    Ok((t, if pass { Status::Ok } else { Status::CheckFailed }))
}

fn run_acceptance(a: &AcceptanceArgs, cfg: &ExperimentConfig) -> Result<(Table, Status)> {
    let mut suite = Suite::default();
    if let Some(s) = cfg.seed {
        suite.seed = s;
    }
    if let Some(k) = a.scale {
        suite.scale = positive(k, "scale")?;
    }
    let ids: Vec<u8> = match &a.only {
        Some(v) => v.clone(),
        None => acceptance::CRITERIA.iter().map(|c| c.id).collect(),
    };
    let mut t = Table::new(Some(suite.seed), &["id", "criterion", "measured", "target", "pass"]);
    let mut all = true;
    for id in ids {
        let c = acceptance::criterion(id).ok_or_else(|| Error::Config(format!("no acceptance criterion {id}")))?;
        if a.list {
            t.rows.push(vec![id.to_string(), c.name.to_string(), String::new(), c.target.to_string(), String::new()]);
            continue;
        }
        let o = acceptance::run_criterion(id, &suite);
        all &= o.pass;
        eprintln!("{}", o.line());
        t.rows.push(vec![id.to_string(), o.name.to_string(), o.measured, o.target.to_string(), o.pass.to_string()]);
    }
    Ok((t, if all { Status::Ok } else { Status::CheckFailed }))
}
