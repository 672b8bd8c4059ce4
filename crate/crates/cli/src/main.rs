use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use storage_lagrange::{DpConfig, PolicyVariant};
use storage_lagrange_cli::alloc_probe::CountingAlloc;
use storage_lagrange_cli::bench::{BenchConfig, BenchFamily};
use storage_lagrange_cli::commands::{self, CliError, SolveArgs, SolveMode, VerifyArgs};
use storage_lagrange_cli::scenario::{
    generate_interior, generate_pwl, generate_quadratic, PwlParams, QuadraticParams,
};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(
    name = "storage-solver",
    version,
    about = "Look-ahead storage dispatch by multiplier bisection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Quadratic,
    Pwl,
    Interior,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Relaxed,
    ChargePreferring,
    DischargePreferring,
    /// Both tie-breaks: multiplier and first-control bounds.
    Bounds,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded scenario as JSON.
    Generate {
        #[arg(long, value_enum, default_value = "quadratic")]
        family: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "horizon", short = 'T', default_value_t = 24)]
        horizon: usize,
        /// Segments per period (pwl).
        #[arg(long, short = 'J', default_value_t = 100)]
        segments: usize,
        #[arg(long, default_value_t = 30.0)]
        c_max: f64,
        #[arg(long, default_value_t = 2.0)]
        demand_span: f64,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        alpha: Option<Vec<f64>>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        beta: Option<Vec<f64>>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Solve for the initial multiplier, the bounds, or the whole horizon.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "relaxed")]
        variant: Variant,
        /// Solve the full horizon and emit the schedule CSV.
        #[arg(long)]
        horizon_mode: bool,
        /// Search `[0, max marginal / eta]` instead of the symmetric envelope.
        #[arg(long)]
        positive_range: bool,
        /// Bisection steps allowed before giving up (exit 3).
        #[arg(long, default_value_t = 200)]
        max_iterations: u32,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check schedules against the grid oracle and the KKT conditions.
    Verify {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value_t = 401)]
        soc_grid: usize,
        #[arg(long, default_value_t = 201)]
        power_grid: usize,
        /// Minimize only over the power grid.
        #[arg(long)]
        grid_only: bool,
        /// Relative objective gap allowed.
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        /// Absolute KKT tolerance [default: 1e-3 x marginal envelope].
        #[arg(long)]
        kkt_tolerance: Option<f64>,
        /// Replay a schedule CSV instead of solving.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Add this to the period-1 net dispatch before checking.
        #[arg(long, allow_negative_numbers = true)]
        perturb_first: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Time `solve` over a list of horizons and emit CSV.
    Bench {
        #[arg(long, value_enum, default_value = "quadratic")]
        family: Family,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        horizons: Vec<usize>,
        #[arg(long, short = 'J', default_value_t = 5000)]
        segments: usize,
        #[arg(long, default_value_t = 21)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Also time the grid oracle for horizons up to 100.
        #[arg(long)]
        dp: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn range(v: Option<Vec<f64>>, default: (f64, f64)) -> (f64, f64) {
    v.map_or(default, |v| (v[0], v[1]))
}

fn run(cli: Cli) -> Result<(), CliError> {
    commands::init_pool()?;
    match cli.command {
        Command::Generate {
            family,
            seed,
            horizon,
            segments,
            c_max,
            demand_span,
            alpha,
            beta,
            out,
        } => {
            let d = QuadraticParams::default();
            let q = QuadraticParams {
                alpha: range(alpha, d.alpha),
                beta: range(beta, d.beta),
            };
            let s = match family {
                Family::Quadratic => generate_quadratic(seed, horizon, q)?,
                Family::Interior => generate_interior(seed, horizon, q)?,
                Family::Pwl => generate_pwl(
                    seed,
                    horizon,
                    PwlParams {
                        segments,
                        c_max,
                        demand_span,
                    },
                )?,
            };
            commands::generate(&s, out.as_deref())
        }
        Command::Solve {
            scenario,
            epsilon,
            variant,
            horizon_mode,
            positive_range,
            max_iterations,
            out,
        } => {
            let mode = match (horizon_mode, variant) {
                (true, _) => SolveMode::Horizon,
                (false, Variant::Bounds) => SolveMode::Bounds,
                (false, Variant::Relaxed) => SolveMode::Single(PolicyVariant::Relaxed),
                (false, Variant::ChargePreferring) => {
                    SolveMode::Single(PolicyVariant::ChargePreferring)
                }
                (false, Variant::DischargePreferring) => {
                    SolveMode::Single(PolicyVariant::DischargePreferring)
                }
            };
            let text = commands::solve_cmd(&SolveArgs {
                scenario,
                epsilon,
                positive_range,
                max_iterations,
                mode,
                out,
            })?;
            print!("{text}");
            Ok(())
        }
        Command::Verify {
            scenarios,
            soc_grid,
            power_grid,
            grid_only,
            tolerance,
            kkt_tolerance,
            schedule,
            perturb_first,
            epsilon,
        } => {
            let (text, result) = commands::verify_cmd(&VerifyArgs {
                scenarios,
                grid: DpConfig {
                    soc_points: soc_grid,
                    power_points: power_grid,
                    cell_search: !grid_only,
                },
                tolerance,
                kkt_tolerance,
                schedule,
                perturb_first,
                epsilon,
            });
            print!("{text}");
            result
        }
        Command::Bench {
            family,
            horizons,
            segments,
            trials,
            warmup,
            seed,
            epsilon,
            dp,
            out,
        } => {
            let cfg = BenchConfig {
                family: match family {
                    Family::Quadratic => BenchFamily::Quadratic,
                    Family::Pwl => BenchFamily::Pwl,
                    Family::Interior => BenchFamily::Interior,
                },
                horizons,
                segments,
                trials,
                warmup,
                seed,
                epsilon,
                dp,
            };
            commands::bench_cmd(&cfg, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
