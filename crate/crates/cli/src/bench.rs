//! Runtime and heap measurements of `solve` across horizons.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;
use storage_lagrange::{
    dp_solve, solve, CostFunction, DpConfig, PolicyVariant, SearchConfig, StorageSpec, TerminalCost,
};

use crate::alloc_probe::measure_peak;
use crate::scenario::{
    generate_interior, generate_pwl, generate_quadratic, PwlParams, QuadraticParams, ScenarioError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFamily {
    Quadratic,
    Pwl,
    /// Quadratic costs on a device no multiplier can saturate.
    Interior,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub family: BenchFamily,
    pub horizons: Vec<usize>,
    /// Segments per period for the piecewise-linear family.
    pub segments: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Also time the grid oracle, for horizons up to [`DP_MAX_HORIZON`].
    pub dp: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            family: BenchFamily::Quadratic,
            horizons: vec![1_000, 10_000, 100_000],
            segments: 5000,
            trials: 21,
            warmup: 3,
            seed: 0,
            epsilon: 1e-3,
            dp: false,
        }
    }
}

pub const DP_MAX_HORIZON: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "J")]
    pub segments: usize,
    pub trials: usize,
    pub median_ns: u64,
    pub p90_ns: u64,
    pub iterations_median: u32,
    /// Heap bytes live at the peak of one untimed call.
    pub peak_state_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `median(hi) / median(lo)` for the `solve` rows at two horizons.
    pub fn ratio(&self, lo: usize, hi: usize) -> Option<f64> {
        let median = |t: usize| {
            self.rows
                .iter()
                .find(|r| r.method == "solve" && r.horizon == t)
                .map(|r| r.median_ns as f64)
        };
        Some(median(hi)? / median(lo)?)
    }
}

/// Median and nearest-rank 90th percentile.
pub fn summarize(samples: &mut [Duration]) -> (u64, u64) {
    assert!(!samples.is_empty(), "need at least one sample");
    samples.sort_unstable();
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2].as_nanos()
    } else {
        (samples[n / 2 - 1].as_nanos() + samples[n / 2].as_nanos()) / 2
    };
    let p90 = samples[(9 * n).div_ceil(10) - 1].as_nanos();
    (median as u64, p90 as u64)
}

fn instance(
    cfg: &BenchConfig,
    horizon: usize,
) -> Result<(StorageSpec, Vec<CostFunction>, TerminalCost), ScenarioError> {
    let s = match cfg.family {
        BenchFamily::Quadratic => {
            generate_quadratic(cfg.seed, horizon, QuadraticParams::default())?
        }
        BenchFamily::Interior => generate_interior(cfg.seed, horizon, QuadraticParams::default())?,
        BenchFamily::Pwl => generate_pwl(
            cfg.seed,
            horizon,
            PwlParams {
                segments: cfg.segments,
                ..PwlParams::default()
            },
        )?,
    };
    Ok((s.spec, s.costs, s.terminal))
}

/// Times a single-shot `solve` per horizon on one thread, after `warmup`
/// untimed runs. The solver does not collect its prefix, so its working state
/// is independent of the horizon.
pub fn run(cfg: &BenchConfig) -> Result<BenchReport, ScenarioError> {
    if cfg.trials == 0 {
        return Err(ScenarioError::Format("trials must be at least 1".into()));
    }
    if cfg.horizons.is_empty() {
        return Err(ScenarioError::Format("no horizons given".into()));
    }
    let search = SearchConfig {
        collect_prefix: false,
        ..SearchConfig::with_epsilon(cfg.epsilon)
    };
    let segments = match cfg.family {
        BenchFamily::Pwl => cfg.segments,
        _ => 0,
    };
    let fail = |t: usize| {
        move |e: storage_lagrange::Error| ScenarioError::Invalid {
            context: format!("T = {t}"),
            source: e,
        }
    };
    let mut report = BenchReport::default();
    for &t in &cfg.horizons {
        let (spec, costs, term) = instance(cfg, t)?;
        let once = || solve(&spec, &costs, &term, &search, PolicyVariant::Relaxed);
        for _ in 0..cfg.warmup {
            once().map_err(fail(t))?;
        }
        let mut samples = Vec::with_capacity(cfg.trials);
        let mut iterations = Vec::with_capacity(cfg.trials);
        for _ in 0..cfg.trials {
            let start = Instant::now();
            let sol = once();
            samples.push(start.elapsed());
            iterations.push(sol.map_err(fail(t))?.iterations);
        }
        iterations.sort_unstable();
        let (_, heap) = measure_peak(once);
        let (median_ns, p90_ns) = summarize(&mut samples);
        report.rows.push(BenchRow {
            method: "solve".into(),
            horizon: t,
            segments,
            trials: cfg.trials,
            median_ns,
            p90_ns,
            iterations_median: iterations[iterations.len() / 2],
            peak_state_bytes: heap.peak_bytes,
        });

        if cfg.dp && t <= DP_MAX_HORIZON {
            let grid = DpConfig::default();
            let dp = || dp_solve(&spec, &costs, &term, &grid);
            let mut samples = Vec::with_capacity(cfg.trials);
            for _ in 0..cfg.trials {
                let start = Instant::now();
                dp().map_err(fail(t))?;
                samples.push(start.elapsed());
            }
            let (_, heap) = measure_peak(dp);
            let (median_ns, p90_ns) = summarize(&mut samples);
            report.rows.push(BenchRow {
                method: "dp".into(),
                horizon: t,
                segments,
                trials: cfg.trials,
                median_ns,
                p90_ns,
                iterations_median: 0,
                peak_state_bytes: heap.peak_bytes,
            });
        }
    }
    Ok(report)
}
