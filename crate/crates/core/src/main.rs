//! `gvp`: run Gauss-variational experiments described by scenario files.
//!
//! Usage:
//!   gvp <command> --scenario <file> [--out <dir>] [--gap-tol <f>] [--max-iters <n>] [--seed <n>] [--mode full|aux]

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use gvp::diagnostics::{coarse_bound_check, exhaustion_sweep, sigma_threshold, solvable_cone_scan, SweepSetup};
use gvp::energy::EnergyContext;
use gvp::projection::{balayage, capacity, equilibrium_measure};
use gvp::scenario::{Scenario, ScenarioError, SPEC_VERSION};
use gvp::selftest;
use gvp::solver::{solve, Mode, ProblemSpec};
use gvp::tolerances::EQUILIBRIUM_REL;
use gvp::GvpError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_SELFTEST_FAILED: u8 = 1;

const SWEEP_HEADER: [&str; 7] = ["R", "value", "aux_value", "sigma_ell", "a_ell", "window_mass", "verdict"];

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Solve,
    Project,
    Equilibrium,
    Capacity,
    Diagnose,
    Sweep,
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    Aux,
}

#[derive(Parser, Debug)]
#[command(name = "gvp", version, about = "Discrete Gauss variational problems on condensers with Riesz kernels")]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Scenario JSON file (not needed for `selftest`).
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Directory receiving report.json and CSV tables.
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Relative duality-gap tolerance.
    #[arg(long)]
    gap_tol: Option<f64>,

    #[arg(long)]
    max_iters: Option<usize>,

    /// Seed for node generation.
    #[arg(long)]
    seed: Option<u64>,

    /// Problem solved by `solve`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

/// Outcome of one command before it is written out.
struct Run {
    results: Value,
    residuals: Value,
    converged: bool,
    tables: Vec<(&'static str, Vec<u8>)>,
    summary: String,
}

#[derive(Serialize)]
struct Report<'a> {
    spec_version: &'static str,
    command: &'a str,
    version: &'static str,
    seed: Option<u64>,
    wallclock_secs: f64,
    status: &'static str,
    inputs: Option<&'a Scenario>,
    results: &'a Value,
    residuals: &'a Value,
}

/// Pretty JSON with every float printed to 17 significant digits.
struct Fixed17<'a>(PrettyFormatter<'a>);

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ScenarioError>() {
            return match e {
                ScenarioError::Io { .. } => EXIT_IO,
                ScenarioError::Invalid(_) => EXIT_VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<GvpError>() {
            return match e {
                GvpError::NonConvergence { .. } | GvpError::IllConditioned { .. } | GvpError::NegativeRadicand(_) => {
                    EXIT_NONCONVERGENCE
                }
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<io::Error>() || cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GVP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("GVP_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let Some(path) = &cli.scenario else {
        bail!("--scenario is required for this command");
    };
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    let mut s = Scenario::parse_raw(&text)?;
    if let Some(t) = cli.gap_tol {
        s.solver.gap_tol = t;
    }
    if let Some(n) = cli.max_iters {
        s.solver.max_iters = Some(n);
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(m) = cli.mode {
        s.solver.mode = match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Aux => Mode::Auxiliary,
        };
    }
    Ok(s.validated()?)
}

fn context(s: &Scenario) -> Result<EnergyContext> {
    Ok(EnergyContext::with_options(&s.kernel, s.condenser()?, &s.context_options())?)
}

fn require_ell(s: &Scenario) -> Result<usize> {
    s.ell()
        .ok_or_else(|| GvpError::Precondition("no plate ell: set \"ell\" or add a negative plate".into()).into())
}

fn run_solve(s: &Scenario) -> Result<Run> {
    let ctx = context(s)?;
    let spec = match s.solver.mode {
        Mode::Full => ProblemSpec::full(&ctx),
        Mode::Auxiliary => {
            let mut constrained: Vec<usize> = (0..s.plates.len()).filter(|&i| !s.plates[i].unbounded).collect();
            if constrained.len() == s.plates.len() {
                let ell = require_ell(s)?;
                constrained.retain(|&i| i != ell);
            }
            ProblemSpec::auxiliary(constrained)
        }
    };
    let r = solve(&ctx, &spec, &s.solve_options())?;
    let masses: Vec<f64> = r.minimizer.components.iter().map(|c| c.mass()).collect();
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["plate", "node", "weight"])?;
    for (i, c) in r.minimizer.components.iter().enumerate() {
        for (k, &w) in c.weights.iter().enumerate() {
            table.write_record([i.to_string(), k.to_string(), float(w)])?;
        }
    }
    Ok(Run {
        summary: format!(
            "value {} gap {} (tol {}) after {} iterations, kkt {}",
            float(r.value),
            float(r.duality_gap),
            float(r.gap_tol),
            r.iterations,
            if r.kkt.passed { "passed" } else { "failed" }
        ),
        converged: r.converged,
        results: json!({
            "mode": r.mode,
            "constrained": r.constrained,
            "value": r.value,
            "duality_gap": r.duality_gap,
            "gap_tol": r.gap_tol,
            "converged": r.converged,
            "iterations": r.iterations,
            "masses": masses,
            "minimizer": r.minimizer,
        }),
        residuals: json!({
            "feasibility": r.feasibility_residuals,
            "kkt": r.kkt,
        }),
        tables: vec![("minimizer.csv", table.into_inner().map_err(|e| e.into_error())?)],
    })
}

fn run_project(s: &Scenario) -> Result<Run> {
    let ctx = context(s)?;
    if ctx.condenser.chi.is_empty() {
        return Err(GvpError::Precondition("`project` sweeps chi, which is empty".into()).into());
    }
    let b = balayage(&ctx, &ctx.condenser.chi, s.target_plate)?;
    let p = &b.projection;
    let worst = p.kkt_residuals.iter().fold(0.0f64, |m, &r| m.max((-r).max(0.0)));
    Ok(Run {
        summary: format!("swept mass {} onto plate {}", float(b.swept_mass), s.target_plate),
        converged: true,
        residuals: json!({
            "domination_violation": worst,
            "complementarity": p.complementarity_residual,
            "kkt_tol": p.kkt_tol,
            "kkt_ok": p.kkt_ok(),
            "mass_bound_ok": b.mass_bound_ok,
        }),
        results: json!({ "plate": s.target_plate, "balayage": b }),
        tables: Vec::new(),
    })
}

fn run_equilibrium(s: &Scenario) -> Result<Run> {
    let ctx = context(s)?;
    let e = equilibrium_measure(&ctx, &ctx.plate_index[s.target_plate])?;
    Ok(Run {
        summary: format!("capacity {} of plate {}", float(e.capacity), s.target_plate),
        converged: true,
        residuals: json!({
            "identity_ok": e.identity_ok(),
            "identity_gap": (e.capacity - e.energy).abs(),
            "potential_ok": e.potential_ok(EQUILIBRIUM_REL),
        }),
        results: json!({ "plate": s.target_plate, "equilibrium": e }),
        tables: Vec::new(),
    })
}

fn run_capacity(s: &Scenario) -> Result<Run> {
    let ctx = context(s)?;
    let caps = ctx
        .plate_index
        .iter()
        .map(|idx| capacity(&ctx, idx))
        .collect::<gvp::Result<Vec<f64>>>()?;
    Ok(Run {
        summary: format!("capacities {}", caps.iter().map(|&c| float(c)).collect::<Vec<_>>().join(", ")),
        converged: true,
        results: json!({ "capacities": caps }),
        residuals: json!({}),
        tables: Vec::new(),
    })
}

fn run_diagnose(s: &Scenario) -> Result<Run> {
    let ctx = context(s)?;
    let ell = require_ell(s)?;
    let sigma = sigma_threshold(&ctx, ell, &s.solve_options())?;
    let coarse = coarse_bound_check(&ctx, ell)?;
    Ok(Run {
        summary: format!(
            "plate {ell}: sigma {} vs a {} -> {}; coarse bound {}{}",
            float(sigma.sigma_ell),
            float(sigma.a_ell),
            sigma.verdict,
            float(coarse.bound),
            if coarse.triggered { " (triggered)" } else { "" }
        ),
        converged: sigma.aux_converged,
        residuals: json!({ "aux_converged": sigma.aux_converged }),
        results: json!({ "sigma_threshold": sigma, "coarse_bound": coarse }),
        tables: Vec::new(),
    })
}

fn run_sweep(s: &Scenario) -> Result<Run> {
    let Some(cfg) = &s.sweep else {
        return Err(GvpError::Precondition("`sweep` needs a \"sweep\" section".into()).into());
    };
    let ell = require_ell(s)?;
    let condenser = s.condenser()?;
    let mut setup = SweepSetup::new(s.kernel.clone(), condenser.clone(), ell);
    setup.context = s.context_options();
    setup.solve = s.solve_options();
    setup.node_cap = cfg.node_cap;
    setup.window_radius = cfg.window_radius;
    let records = exhaustion_sweep(&setup, &cfg.radii)?;

    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(SWEEP_HEADER)?;
    for r in &records {
        table.write_record([
            float(r.truncation_radius),
            float(r.value),
            float(r.aux_value),
            float(r.sigma_estimate),
            float(r.a_ell),
            float(r.plate_mass_in_window),
            r.verdict.map_or_else(|| "error".to_string(), |v| v.to_string()),
        ])?;
    }

    let cone = if cfg.a_ell_grid.is_empty() {
        None
    } else {
        let ctx = EnergyContext::with_options(&s.kernel, condenser, &s.context_options())?;
        Some(solvable_cone_scan(&ctx, ell, &cfg.a_ell_grid, &s.solve_options())?)
    };
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    Ok(Run {
        summary: format!("{} radii swept, {failed} failed", records.len()),
        converged: records.iter().all(|r| r.converged),
        residuals: json!({
            "kkt_passed": records.iter().map(|r| r.kkt_passed).collect::<Vec<_>>(),
            "converged": records.iter().map(|r| r.converged).collect::<Vec<_>>(),
        }),
        results: json!({ "ell": ell, "records": records, "cone_scan": cone }),
        tables: vec![("results.csv", table.into_inner().map_err(|e| e.into_error())?)],
    })
}

fn write_outputs(out: &Path, report: &Report, tables: &[(&'static str, Vec<u8>)]) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("report.json");
    fs::write(&path, to_json(report)?).with_context(|| format!("writing {}", path.display()))?;
    for (name, bytes) in tables {
        let p = out.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(path)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Solve => "solve",
        Command::Project => "project",
        Command::Equilibrium => "equilibrium",
        Command::Capacity => "capacity",
        Command::Diagnose => "diagnose",
        Command::Sweep => "sweep",
        Command::Selftest => "selftest",
    }
}

fn run_selftest(cli: &Cli, start: Instant) -> Result<u8> {
    let report = selftest::run();
    for c in report.cases.iter().filter(|c| !c.passed) {
        eprintln!("FAIL {}::{}: {}", c.module, c.name, c.detail.as_deref().unwrap_or(""));
    }
    println!("selftest: {} passed, {} failed", report.passed, report.failed);
    let results = serde_json::to_value(&report)?;
    let residuals = json!({});
    let r = Report {
        spec_version: SPEC_VERSION,
        command: "selftest",
        version: env!("CARGO_PKG_VERSION"),
        seed: None,
        wallclock_secs: start.elapsed().as_secs_f64(),
        status: if report.all_passed() { "ok" } else { "failed" },
        inputs: None,
        results: &results,
        residuals: &residuals,
    };
    write_outputs(&cli.out, &r, &[])?;
    Ok(if report.all_passed() { 0 } else { EXIT_SELFTEST_FAILED })
}

fn execute(cli: &Cli) -> Result<u8> {
    let start = Instant::now();
    configure_threads()?;
    if let Command::Selftest = cli.command {
        return run_selftest(cli, start);
    }
    let scenario = load_scenario(cli)?;
    let run = match cli.command {
        Command::Solve => run_solve(&scenario)?,
        Command::Project => run_project(&scenario)?,
        Command::Equilibrium => run_equilibrium(&scenario)?,
        Command::Capacity => run_capacity(&scenario)?,
        Command::Diagnose => run_diagnose(&scenario)?,
        Command::Sweep => run_sweep(&scenario)?,
        Command::Selftest => unreachable!(),
    };
    let name = command_name(cli.command);
    let report = Report {
        spec_version: SPEC_VERSION,
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(scenario.seed),
        wallclock_secs: start.elapsed().as_secs_f64(),
        status: if run.converged { "ok" } else { "not_converged" },
        inputs: Some(&scenario),
        results: &run.results,
        residuals: &run.residuals,
    };
    let path = write_outputs(&cli.out, &report, &run.tables)?;
    println!("{name}: {}", run.summary);
    println!("wrote {}", path.display());
    if run.converged {
        Ok(0)
    } else {
        eprintln!("{name}: solver did not converge");
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
