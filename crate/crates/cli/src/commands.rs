//! The `generate`, `solve`, `verify` and `bench` subcommands. Each returns a
//! [`CliError`] whose [`CliError::exit_code`] is the process exit status.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use storage_lagrange::{
    check_feasible, dp_solve, kkt_residuals, marginal_envelope, objective_of, solve, solve_bounds,
    solve_horizon, Dispatch, DpConfig, Error, PolicyVariant, RangePolicy, Schedule, SearchConfig,
};

use crate::bench::{self, BenchConfig};
use crate::scenario::{
    read_scenario, read_schedule_file, scenario_to_json, write_schedule, write_schedule_file,
    Scenario, ScenarioError,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Convergence(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn solver_error(e: Error) -> CliError {
    match e {
        Error::NoConvergence { .. } | Error::NoProgress { .. } => {
            CliError::Convergence(e.to_string())
        }
        _ => CliError::Input(e.to_string()),
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Builds the global worker pool, capped by `STORAGE_SOLVER_THREADS` when set.
pub fn init_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STORAGE_SOLVER_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "STORAGE_SOLVER_THREADS={raw:?} is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

pub fn generate(scenario: &Scenario, out: Option<&Path>) -> Result<(), CliError> {
    let text = scenario_to_json(scenario) + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_error(path)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Input(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Single(PolicyVariant),
    Bounds,
    Horizon,
}

#[derive(Debug, Clone)]
pub struct SolveArgs {
    pub scenario: PathBuf,
    pub epsilon: f64,
    pub positive_range: bool,
    pub max_iterations: u32,
    pub mode: SolveMode,
    /// Schedule CSV destination in horizon mode; stdout when absent.
    pub out: Option<PathBuf>,
}

/// Returns the text printed on stdout.
pub fn solve_cmd(args: &SolveArgs) -> Result<String, CliError> {
    let s = read_scenario(&args.scenario)?;
    let cfg = SearchConfig {
        range: if args.positive_range {
            RangePolicy::PositiveValue
        } else {
            RangePolicy::Envelope
        },
        max_iterations: args.max_iterations,
        ..SearchConfig::with_epsilon(args.epsilon)
    };
    let mut text = String::new();
    match args.mode {
        SolveMode::Single(variant) => {
            let sol = solve(&s.spec, &s.costs, &s.terminal, &cfg, variant).map_err(solver_error)?;
            let d = sol.first_control;
            writeln!(
                text,
                "theta={:.6} net={:.6} p_plus={:.6} p_minus={:.6} prefix_len={} iterations={} clamped={}",
                sol.theta,
                d.net(),
                d.p_plus,
                d.p_minus,
                sol.prefix_len,
                sol.iterations,
                sol.first_clamped
            )
            .unwrap();
            if sol.is_degenerate(&s.spec, &s.costs, 1e-6) {
                writeln!(
                    text,
                    "degenerate: bracket [{:.9}, {:.9}] spans a flat marginal",
                    sol.bracket.0, sol.bracket.1
                )
                .unwrap();
            }
        }
        SolveMode::Bounds => {
            let b = solve_bounds(&s.spec, &s.costs, &s.terminal, &cfg).map_err(solver_error)?;
            writeln!(
                text,
                "theta_lo={:.6} theta_hi={:.6} p_lo={:.6} p_hi={:.6} alt_p_lo={:.6} alt_p_hi={:.6} iterations={},{}",
                b.theta_lo, b.theta_hi, b.p_lo, b.p_hi, b.alt_p_lo, b.alt_p_hi, b.iterations.0, b.iterations.1
            )
            .unwrap();
        }
        SolveMode::Horizon => {
            let h = solve_horizon(&s.spec, &s.costs, &s.terminal, &cfg).map_err(solver_error)?;
            match &args.out {
                Some(path) => {
                    write_schedule_file(&h, path)?;
                    writeln!(text, "objective={:.9} periods={}", h.objective, h.horizon()).unwrap();
                }
                None => {
                    let mut buf = Vec::new();
                    write_schedule(&h, &mut buf).map_err(|e| CliError::Input(e.to_string()))?;
                    text.push_str(&String::from_utf8(buf).expect("csv output is utf-8"));
                }
            }
        }
    }
    Ok(text)
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub scenarios: Vec<PathBuf>,
    pub grid: DpConfig,
    /// Relative objective gap allowed against the grid oracle.
    pub tolerance: f64,
    /// Absolute KKT tolerance; `1e-3` times the marginal envelope when absent.
    pub kkt_tolerance: Option<f64>,
    /// Replay this schedule instead of solving.
    pub schedule: Option<PathBuf>,
    /// Added to the period-1 net dispatch before checking.
    pub perturb_first: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub objective: f64,
    pub dp_objective: f64,
    pub gap: f64,
    /// `None` when the schedule carries no multiplier trace.
    pub kkt: Option<storage_lagrange::KktReport>,
    pub kkt_tolerance: f64,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Shifts the period-1 net dispatch by `delta` and rebuilds the state of
/// charge; the multiplier trace is kept as it was.
pub fn perturb_first(
    spec: &storage_lagrange::StorageSpec,
    schedule: &Schedule,
    delta: f64,
) -> Schedule {
    let mut dispatches: Vec<Dispatch> = schedule.steps.iter().map(|s| s.dispatch).collect();
    if let Some(first) = dispatches.first_mut() {
        *first = Dispatch::from_net(first.net() + delta);
    }
    let mut out = Schedule::from_dispatches(spec, &dispatches);
    out.theta = schedule.theta.clone();
    out
}

pub fn verify_one(s: &Scenario, args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let cfg = SearchConfig::with_epsilon(args.epsilon);
    let mut schedule = match &args.schedule {
        Some(path) => read_schedule_file(path)?,
        None => solve_horizon(&s.spec, &s.costs, &s.terminal, &cfg).map_err(solver_error)?,
    };
    if schedule.horizon() != s.horizon() {
        return Err(CliError::Input(format!(
            "schedule has {} periods, scenario has {}",
            schedule.horizon(),
            s.horizon()
        )));
    }
    if let Some(delta) = args.perturb_first {
        schedule = perturb_first(&s.spec, &schedule, delta);
    }
    let (_, envelope) = marginal_envelope(
        &s.costs,
        &s.terminal,
        s.spec.power(),
        s.spec.capacity(),
        s.spec.eta(),
    )
    .map_err(solver_error)?;
    let kkt_tolerance = args.kkt_tolerance.unwrap_or(1e-3 * envelope);
    let dp = dp_solve(&s.spec, &s.costs, &s.terminal, &args.grid).map_err(solver_error)?;
    let objective = objective_of(&s.costs, &s.terminal, &schedule).map_err(solver_error)?;
    let gap = (objective - dp.objective).abs() / dp.objective.abs().max(f64::MIN_POSITIVE);

    let mut failures = Vec::new();
    let mut kkt = None;
    match check_feasible(&s.spec, &schedule) {
        Err(e) => failures.push(e.to_string()),
        Ok(()) if schedule.theta.is_some() => {
            let r =
                kkt_residuals(&s.spec, &s.costs, &s.terminal, &schedule).map_err(solver_error)?;
            if r.max_residual().is_nan() || r.max_residual() > kkt_tolerance {
                failures.push(format!(
                    "KKT residual {:.3e} exceeds {:.3e} (period {})",
                    r.max_residual(),
                    kkt_tolerance,
                    r.worst_period
                ));
            }
            kkt = Some(r);
        }
        Ok(()) => {}
    }
    if gap.is_nan() || gap > args.tolerance {
        failures.push(format!(
            "objective gap {gap:.3e} exceeds {:.3e}",
            args.tolerance
        ));
    }
    Ok(VerifyReport {
        objective,
        dp_objective: dp.objective,
        gap,
        kkt,
        kkt_tolerance,
        failures,
    })
}

fn describe(path: &Path, r: &VerifyReport) -> String {
    let mut line = format!(
        "{}: objective={:.9} dp_objective={:.9} gap={:.3e}",
        path.display(),
        r.objective,
        r.dp_objective,
        r.gap
    );
    match &r.kkt {
        Some(k) => write!(
            line,
            " stationarity={:.3e} complementarity={:.3e} terminal={:.3e} worst_period={}",
            k.stationarity, k.complementarity, k.terminal, k.worst_period
        )
        .unwrap(),
        None => line.push_str(" kkt=skipped"),
    }
    if r.passed() {
        line.push_str(" status=ok");
    } else {
        write!(line, " status=FAIL ({})", r.failures.join("; ")).unwrap();
    }
    line
}

/// Verifies every scenario on the worker pool. The text lists one line per
/// scenario; the error, if any, is the most severe one.
pub fn verify_cmd(args: &VerifyArgs) -> (String, Result<(), CliError>) {
    let outcomes: Vec<Result<VerifyReport, CliError>> = args
        .scenarios
        .par_iter()
        .map(|path| verify_one(&read_scenario(path)?, args))
        .collect();
    let mut text = String::new();
    let mut worst: Option<CliError> = None;
    for (path, outcome) in args.scenarios.iter().zip(outcomes) {
        let err = match outcome {
            Ok(r) => {
                text.push_str(&describe(path, &r));
                text.push('\n');
                (!r.passed()).then(|| {
                    CliError::Verification(format!("{}: verification failed", path.display()))
                })
            }
            Err(e) => {
                writeln!(text, "{}: error: {e}", path.display()).unwrap();
                Some(e)
            }
        };
        if let Some(e) = err {
            // Input errors outrank convergence, which outranks verification.
            let rank = |e: &CliError| match e {
                CliError::Input(_) => 0,
                CliError::Convergence(_) => 1,
                CliError::Verification(_) => 2,
            };
            if worst.as_ref().is_none_or(|w| rank(&e) < rank(w)) {
                worst = Some(e);
            }
        }
    }
    (text, worst.map_or(Ok(()), Err))
}

pub fn bench_cmd(cfg: &BenchConfig, out: Option<&Path>) -> Result<(), CliError> {
    let report = bench::run(cfg)?;
    let write = |w: &mut dyn Write| {
        report
            .write_csv(w)
            .map_err(|e| CliError::Input(e.to_string()))
    };
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path).map_err(io_error(path))?;
            write(&mut f)
        }
        None => write(&mut std::io::stdout().lock()),
    }
}
