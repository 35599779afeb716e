//! `divbar` subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use divbar::boundary::{check_boundary_conditions, integrate_boundary_with, BoundaryReport, BoundarySolution};
use divbar::config::{OutputFormat, RunConfig, SweepParameter};
use divbar::io::{self, BoundaryHeader, PayoffRecord, Provenance};
use divbar::mc::{estimate_payoff_with, payoff_samples, z_score};
use divbar::reflect::{simulate_path, Deviation};
use divbar::surface::{u_grid, verify_hjb, Bound, Check, HjbReport, ValueSurface};
use divbar::sweep::{monotonicity, run_sweep, Comparison};
use divbar::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DIVBAR_OUT_DIR";

/// Most paths `simulate --dump` will write.
pub const MAX_DUMPED_PATHS: usize = 100;

/// Boundary residual tolerance used by `verify`.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// `U` below `-U_ROUNDOFF` counts as negative in the heat-map summary.
pub const U_ROUNDOFF: f64 = 1e-12;

/// Largest |z| accepted by `payoff`.
pub const Z_LIMIT: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "divbar", version, about = "Equilibrium dividend barriers: solve, verify, sweep, simulate")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory [default: config output.directory, then $DIVBAR_OUT_DIR, then .]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides sim.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for simulation and grid checks.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the free boundary and write it out.
    Solve,
    /// Check boundary conditions and the variational inequalities.
    Verify {
        #[arg(long, hide = true, allow_hyphen_values = true)]
        corrupt_a3: Option<f64>,
    },
    /// Solve for each value of rho or q and compare the boundaries.
    Sweep {
        /// rho or q [default: config sweep.parameter]
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated increasing values [default: config sweep.values]
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Compare Monte Carlo payoffs with the closed-form value at points.
    Payoff {
        /// CSV with columns x,m.
        #[arg(long)]
        points: PathBuf,
    },
    /// Simulate equilibrium paths from one state.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        x0: f64,
        /// Initial running minimum [default: x0]
        #[arg(long, allow_hyphen_values = true)]
        m0: Option<f64>,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        /// Write each path as CSV (at most 100 paths).
        #[arg(long)]
        dump: bool,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

/// Exit code for an error that stops a command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::InvalidParameter { .. }
        | Error::InconsistentLambda { .. }
        | Error::InvalidInitial { .. }
        | Error::OutOfDomain { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

struct Ctx {
    cfg: RunConfig,
    prov: Provenance,
    out: PathBuf,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| config_failure("--config PATH is required"))?;
        let src = fs::read_to_string(path).map_err(|e| config_failure(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml_str(&src)
            .map_err(|e| config_failure(format!("{}: {e}", path.display())))?;
        if let Some(seed) = cli.seed {
            cfg.sim.seed = seed;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.output.directory.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out).map_err(|e| config_failure(format!("{}: {e}", out.display())))?;
        let prov = Provenance::new(cfg.hash());
        Ok(Ctx { cfg, prov, out })
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.cfg.output.wants(f)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("{}: {e}", path.display()),
        })?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        if self.wants(OutputFormat::Json) {
            let mut text = serde_json::to_string_pretty(value).expect("report serializes");
            text.push('\n');
            self.write(name, text.as_bytes())?;
        }
        Ok(())
    }

    fn write_csv(&self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> divbar::Result<()>) -> Result<(), Failure> {
        if self.wants(OutputFormat::Csv) {
            let mut buf = Vec::new();
            fill(&mut buf)?;
            self.write(name, &buf)?;
        }
        Ok(())
    }
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_failure("--threads must be at least 1"));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx::load(cli)?;
    match &cli.command {
        Command::Solve => cmd_solve(&ctx),
        Command::Verify { corrupt_a3 } => cmd_verify(&ctx, *corrupt_a3),
        Command::Sweep { parameter, values } => cmd_sweep(&ctx, parameter.as_deref(), values.as_deref()),
        Command::Payoff { points } => cmd_payoff(&ctx, points),
        Command::Simulate { x0, m0, paths, dump } => cmd_simulate(&ctx, *x0, m0.unwrap_or(*x0), *paths, *dump),
    }
}

fn solve(ctx: &Ctx) -> Result<(BoundarySolution, Option<(f64, f64)>), Failure> {
    match integrate_boundary_with(&ctx.cfg.params, &ctx.cfg.lambda, &ctx.cfg.solver) {
        Ok(sol) => Ok((sol, None)),
        Err(Error::SingularSystem {
            m,
            det,
            partial: Some(partial),
        }) => Ok((*partial, Some((m, det)))),
        Err(e) => Err(e.into()),
    }
}

fn write_boundary(ctx: &Ctx, sol: &BoundarySolution, truncated: Option<(f64, f64)>) -> Result<(), Failure> {
    ctx.write_csv("boundary.csv", |buf| {
        io::write_boundary_csv(buf, sol, &ctx.prov)?;
        if let Some((m, det)) = truncated {
            buf.extend_from_slice(io::truncation_marker(m, det).as_bytes());
        }
        Ok(())
    })?;
    ctx.write_json("boundary.json", &BoundaryHeader::new(sol, &ctx.cfg.params, &ctx.prov))
}

fn cmd_solve(ctx: &Ctx) -> Result<u8, Failure> {
    let (sol, truncated) = solve(ctx)?;
    write_boundary(ctx, &sol, truncated)?;
    println!(
        "b0 = {:.10}  F0 = {:.10}  m* = {:.10}  termination = {:?}  nodes = {}",
        sol.b0,
        sol.f0,
        sol.m_star,
        sol.termination,
        sol.len()
    );
    if let Some((m, det)) = truncated {
        eprintln!("error: singular boundary system at m = {m} (det = {det:e}); partial boundary written");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    passed: bool,
    boundary: BoundaryReport,
    boundary_checks: Vec<Check>,
    hjb: HjbReport,
    u_min: f64,
    u_negative_threshold: f64,
    u_negative_cells: usize,
    u_cells: usize,
}

/// Pass/fail view of the boundary residuals.
pub fn boundary_checks(r: &BoundaryReport) -> Vec<Check> {
    vec![
        Check::new("boundary_residual", r.max_residual(), BOUNDARY_TOL, Bound::AtMost, true),
        Check::new("boundary_nonincreasing", r.max_increase, 1e-12, Bound::AtMost, true),
    ]
}

fn cmd_verify(ctx: &Ctx, corrupt_a3: Option<f64>) -> Result<u8, Failure> {
    let (sol, truncated) = solve(ctx)?;
    if let Some((m, det)) = truncated {
        write_boundary(ctx, &sol, truncated)?;
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("singular boundary system at m = {m} (det = {det:e}); nothing verified"),
        });
    }
    let boundary = check_boundary_conditions(&sol);
    let mut surf = ValueSurface::new(sol, ctx.cfg.params)?;
    if let Some(offset) = corrupt_a3 {
        surf = surf.with_coefficient_offset(2, offset);
    }
    let hjb = verify_hjb(&surf, &ctx.cfg.verify);
    let cells = u_grid(&surf, ctx.cfg.verify.n_u, ctx.cfg.verify.n_v);
    ctx.write_csv("u_grid.csv", |buf| io::write_u_csv(buf, &ctx.prov, &cells))?;
    let u_negative_cells = cells.iter().filter(|c| c.2 < -U_ROUNDOFF).count();
    let u_min = cells.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let boundary_checks = boundary_checks(&boundary);
    let passed = hjb.passed() && boundary_checks.iter().all(|c| c.passed);
    for c in boundary_checks.iter().chain(&hjb.checks) {
        let status = match (c.asserted, c.passed) {
            (false, _) => "info",
            (true, true) => "ok",
            (true, false) => "FAIL",
        };
        println!("{status:>4}  {:<30} {:>12.3e}  (tol {:.0e})", c.name, c.value, c.tolerance);
    }
    println!(
        "U < -{U_ROUNDOFF:.0e} on {u_negative_cells} of {} grid cells (min U = {u_min:.3e})",
        cells.len()
    );
    ctx.write_json(
        "verify.json",
        &VerifyReport {
            provenance: &ctx.prov,
            passed,
            boundary,
            boundary_checks: boundary_checks.clone(),
            u_min,
            u_negative_threshold: -U_ROUNDOFF,
            u_negative_cells,
            u_cells: cells.len(),
            hjb: hjb.clone(),
        },
    )?;
    if passed {
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = boundary_checks
            .iter()
            .chain(&hjb.checks)
            .filter(|c| c.asserted && !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        eprintln!("verification failed: {}", names.join(", "));
        Ok(EXIT_VERIFICATION)
    }
}

#[derive(Serialize)]
struct SweepEntry {
    value: f64,
    ok: bool,
    error: Option<String>,
    b0: Option<f64>,
    m_star: Option<f64>,
    nodes: Option<usize>,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    parameter: &'static str,
    runs: Vec<SweepEntry>,
    comparisons: Vec<Comparison>,
    monotone: bool,
}

fn cmd_sweep(ctx: &Ctx, parameter: Option<&str>, values: Option<&[f64]>) -> Result<u8, Failure> {
    let from_config = ctx.cfg.sweep.as_ref();
    let parameter = match parameter {
        Some("rho") => SweepParameter::Rho,
        Some("q") => SweepParameter::Q,
        Some(other) => return Err(config_failure(format!("--parameter: cannot sweep {other:?} (rho or q)"))),
        None => from_config
            .map(|s| s.parameter)
            .ok_or_else(|| config_failure("no sweep parameter (give --parameter or a [sweep] section)"))?,
    };
    let values: Vec<f64> = match values {
        Some(v) => v.to_vec(),
        None => from_config
            .map(|s| s.values.clone())
            .ok_or_else(|| config_failure("no sweep values (give --values or a [sweep] section)"))?,
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_failure("sweep values must be finite and strictly increasing"));
    }
    let runs = run_sweep(&ctx.cfg.params, &ctx.cfg.lambda, parameter, &values, &ctx.cfg.solver);
    let solved: Vec<(f64, &BoundarySolution)> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|s| (r.value, s)))
        .collect();
    ctx.write_csv("sweep.csv", |buf| io::write_sweep_csv(buf, &ctx.prov, &solved))?;
    let comparisons = monotonicity(&runs, parameter);
    let monotone = comparisons.iter().all(|c| c.passed);
    let mut failed = false;
    let entries: Vec<SweepEntry> = runs
        .iter()
        .map(|r| match &r.result {
            Ok(s) => {
                println!("{} = {:<8}  b0 = {:.10}  m* = {:.10}", parameter.name(), r.value, s.b0, s.m_star);
                SweepEntry {
                    value: r.value,
                    ok: true,
                    error: None,
                    b0: Some(s.b0),
                    m_star: Some(s.m_star),
                    nodes: Some(s.len()),
                }
            }
            Err(e) => {
                failed = true;
                println!("{} = {:<8}  failed: {e}", parameter.name(), r.value);
                SweepEntry {
                    value: r.value,
                    ok: false,
                    error: Some(e.to_string()),
                    b0: None,
                    m_star: None,
                    nodes: None,
                }
            }
        })
        .collect();
    for c in &comparisons {
        println!(
            "{} -> {}: {:?} {} (max violation {:.3e} over {} points)",
            c.from,
            c.to,
            c.direction,
            if c.passed { "holds" } else { "BROKEN" },
            c.max_violation,
            c.points
        );
    }
    ctx.write_json(
        "sweep.json",
        &SweepSummary {
            provenance: &ctx.prov,
            parameter: parameter.name(),
            runs: entries,
            comparisons,
            monotone,
        },
    )?;
    Ok(if failed {
        EXIT_NUMERICAL
    } else if !monotone {
        EXIT_VERIFICATION
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct PayoffReport<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    n_paths: usize,
    seed: u64,
    dt: f64,
    horizon: f64,
    records: Vec<PayoffRecord>,
    passed: bool,
}

fn cmd_payoff(ctx: &Ctx, points: &Path) -> Result<u8, Failure> {
    let file = fs::File::open(points).map_err(|e| config_failure(format!("{}: {e}", points.display())))?;
    let rows = io::read_points_csv(file).map_err(|e| config_failure(format!("{}: {e}", points.display())))?;
    let (sol, truncated) = solve(ctx)?;
    if truncated.is_some() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: "singular boundary system; cannot evaluate payoffs".into(),
        });
    }
    let surf = ValueSurface::new(sol, ctx.cfg.params)?;
    let settings = ctx.cfg.sim.settings(&ctx.cfg.params);
    let hash = ctx.prov.config_hash.clone();
    let mut records = Vec::new();
    for row in rows {
        let (x, m) = match &row.point {
            Ok(p) => *p,
            Err(_) => (f64::NAN, f64::NAN),
        };
        let mut rec = PayoffRecord {
            line: row.line,
            x,
            m,
            estimate: None,
            std_err: None,
            reference: None,
            z: None,
            exact_match: false,
            error: None,
        };
        let outcome = row.point.and_then(|(x, m)| {
            let reference = surf.eval_v(x, m)?;
            let est = estimate_payoff_with(&surf, x, m, ctx.cfg.sim.n_paths, &settings, ctx.cfg.sim.seed, hash.clone())?;
            Ok((reference, est))
        });
        match outcome {
            Ok((reference, est)) => {
                rec.reference = Some(reference);
                rec.estimate = Some(est.mean);
                rec.std_err = Some(est.std_err);
                rec.z = z_score(&est, reference);
                rec.exact_match = est.std_err == 0.0 && (est.mean - reference).abs() <= 1e-12;
                match rec.z {
                    Some(z) => println!(
                        "line {}: ({x}, {m})  MC {:.6} +- {:.2e}  V {:.6}  z {z:+.2}",
                        row.line, est.mean, est.std_err, reference
                    ),
                    None => println!(
                        "line {}: ({x}, {m})  MC {:.6}  V {:.6}  {}",
                        row.line,
                        est.mean,
                        reference,
                        if rec.exact_match { "exact match" } else { "MISMATCH (zero variance)" }
                    ),
                }
            }
            Err(e) => {
                println!("line {}: error: {e}", row.line);
                rec.error = Some(e.to_string());
            }
        }
        records.push(rec);
    }
    let passed = records
        .iter()
        .filter(|r| r.error.is_none())
        .all(|r| r.exact_match || r.z.is_some_and(|z| z.abs() <= Z_LIMIT));
    ctx.write_json(
        "payoff.json",
        &PayoffReport {
            provenance: &ctx.prov,
            n_paths: ctx.cfg.sim.n_paths,
            seed: ctx.cfg.sim.seed,
            dt: settings.dt,
            horizon: settings.horizon,
            records,
            passed,
        },
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFICATION })
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    x0: f64,
    m0: f64,
    n_paths: usize,
    seed: u64,
    dt: f64,
    horizon: f64,
    mean_payoff: f64,
    std_err: Option<f64>,
    dumped: usize,
}

fn cmd_simulate(ctx: &Ctx, x0: f64, m0: f64, paths: usize, dump: bool) -> Result<u8, Failure> {
    if paths == 0 {
        return Err(config_failure("--paths must be at least 1"));
    }
    if dump && paths > MAX_DUMPED_PATHS {
        return Err(config_failure(format!(
            "refusing to dump {paths} paths (limit {MAX_DUMPED_PATHS})"
        )));
    }
    let (sol, truncated) = solve(ctx)?;
    if truncated.is_some() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: "singular boundary system; cannot simulate".into(),
        });
    }
    let surf = ValueSurface::new(sol, ctx.cfg.params)?;
    let settings = ctx.cfg.sim.settings(&ctx.cfg.params);
    let seed = ctx.cfg.sim.seed;
    let (mean, std_err) = if paths >= 2 {
        let est = estimate_payoff_with(&surf, x0, m0, paths, &settings, seed, ctx.prov.config_hash.clone())?;
        (est.mean, Some(est.std_err))
    } else {
        (payoff_samples(&surf, x0, m0, Deviation::None, 1, &settings, seed)?[0], None)
    };
    if dump {
        let dir = ctx.out.join("paths");
        fs::create_dir_all(&dir).map_err(|e| config_failure(format!("{}: {e}", dir.display())))?;
        for i in 0..paths {
            let path = simulate_path(&surf.boundary, &surf.params, x0, m0, &settings, seed, i as u64)?;
            ctx.write_csv(&format!("paths/path_{i:04}.csv"), |buf| io::write_path_csv(buf, &ctx.prov, &path))?;
        }
    }
    match std_err {
        Some(se) => println!("{paths} paths from ({x0}, {m0}): mean payoff {mean:.6} +- {se:.2e}"),
        None => println!("1 path from ({x0}, {m0}): payoff {mean:.6}"),
    }
    ctx.write_json(
        "simulate.json",
        &SimulateReport {
            provenance: &ctx.prov,
            x0,
            m0,
            n_paths: paths,
            seed,
            dt: settings.dt,
            horizon: settings.horizon,
            mean_payoff: mean,
            std_err,
            dumped: if dump { paths } else { 0 },
        },
    )?;
    Ok(EXIT_OK)
}
