//! Seeded scenario families and the on-disk formats.
//!
//! Random draws use ChaCha20 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and switched to stream `t` for period `t`, so each
//! period's costs depend only on `(seed, t)`. A `u64` draw `u` maps to
//! `(u >> 11) * 2^-53` in `[0, 1)` and then to `a + (b - a) * u`.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use storage_lagrange::{
    CostFunction, CostSource, Dispatch, Schedule, ScheduleStep, StorageSpec, TerminalCost,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const RNG_NAME: &str = "chacha20/stream-per-period";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{context}: {source}")]
    Invalid {
        context: String,
        source: storage_lagrange::Error,
    },
    #[error("{0}")]
    Format(String),
}

fn invalid(context: impl Into<String>) -> impl FnOnce(storage_lagrange::Error) -> ScenarioError {
    let context = context.into();
    move |source| ScenarioError::Invalid { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    QuadraticTracking,
    PwlDispatch,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: StorageSpec,
    pub costs: Vec<CostFunction>,
    pub terminal: TerminalCost,
    pub seed: u64,
    pub family: Family,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.costs.len()
    }

    /// Rejects mismatched horizons and cost domains narrower than `[-P, P]`.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.costs.is_empty() {
            return Err(ScenarioError::Invalid {
                context: "costs".into(),
                source: storage_lagrange::Error::EmptyHorizon,
            });
        }
        storage_lagrange::cost::check_domains(&self.costs, self.spec.power())
            .map_err(invalid("costs"))
    }
}

/// Uniform `[0, 1)` from the top 53 bits.
#[inline]
fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

fn period_rng(seed: u64, t: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

pub const ALPHA_FLOOR: f64 = 1e-3;

/// Parameters of the generation-tracking family
/// `O_t(p) = alpha_t / 2 * (beta_t - p)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticParams {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for QuadraticParams {
    fn default() -> Self {
        Self {
            alpha: (0.0, 10.0),
            beta: (-10.0, 0.0),
        }
    }
}

impl QuadraticParams {
    fn check(&self) -> Result<(f64, f64), ScenarioError> {
        let (a0, a1) = self.alpha;
        let (b0, b1) = self.beta;
        let lo = a0.max(ALPHA_FLOOR);
        if !(a0.is_finite() && a1.is_finite() && lo <= a1) {
            return Err(ScenarioError::Format(format!(
                "alpha range [{a0}, {a1}] is empty after clipping at {ALPHA_FLOOR}"
            )));
        }
        if !(b0.is_finite() && b1.is_finite() && b0 <= b1) {
            return Err(ScenarioError::Format(format!(
                "beta range [{b0}, {b1}] is empty"
            )));
        }
        Ok((lo, a1))
    }

    fn draw(&self, seed: u64, t: usize) -> CostFunction {
        let (lo, hi) = self.check().expect("validated ranges");
        let mut rng = period_rng(seed, t);
        let alpha = uniform(&mut rng, lo, hi);
        let beta = uniform(&mut rng, self.beta.0, self.beta.1);
        CostFunction::quadratic(alpha, beta).expect("alpha is clipped above zero")
    }
}

fn reference_storage() -> (StorageSpec, TerminalCost) {
    let spec = StorageSpec::reference();
    (spec, TerminalCost::fill_to(spec.capacity()))
}

/// Generation-tracking costs on the reference device (P = 1, E = 4, e0 = 2,
/// eta = 0.92) with terminal cost `(E - e)^2 / 2`.
pub fn generate_quadratic(
    seed: u64,
    horizon: usize,
    params: QuadraticParams,
) -> Result<Scenario, ScenarioError> {
    if horizon == 0 {
        return Err(ScenarioError::Format("horizon must be at least 1".into()));
    }
    params.check()?;
    let (spec, terminal) = reference_storage();
    Ok(Scenario {
        spec,
        costs: (0..horizon).map(|t| params.draw(seed, t)).collect(),
        terminal,
        seed,
        family: Family::QuadraticTracking,
    })
}

/// The quadratic family on a device large enough that no multiplier in the
/// search range drives the state of charge to a bound: every emulation walks
/// the full horizon. The terminal curvature is `1 / E` so the search range
/// does not grow with `T`.
pub fn generate_interior(
    seed: u64,
    horizon: usize,
    params: QuadraticParams,
) -> Result<Scenario, ScenarioError> {
    let mut s = generate_quadratic(seed, horizon, params)?;
    let (spec, terminal) = interior_storage(horizon);
    s.spec = spec;
    s.terminal = terminal;
    s.family = Family::Custom;
    Ok(s)
}

fn interior_storage(horizon: usize) -> (StorageSpec, TerminalCost) {
    let r = StorageSpec::reference();
    let capacity = 2.0 * r.power() * horizon as f64 / r.eta() + 1.0;
    let spec =
        StorageSpec::new(r.power(), capacity, r.eta(), 0.5 * capacity).expect("positive capacity");
    let terminal = TerminalCost::new(1.0 / capacity, capacity, 0.0).expect("finite");
    (spec, terminal)
}

/// Quadratic costs drawn on demand, matching [`generate_quadratic`] or
/// [`generate_interior`] period by period without holding the sequence.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticStream {
    seed: u64,
    horizon: usize,
    params: QuadraticParams,
}

impl QuadraticStream {
    pub fn new(seed: u64, horizon: usize, params: QuadraticParams) -> Result<Self, ScenarioError> {
        params.check()?;
        Ok(Self {
            seed,
            horizon,
            params,
        })
    }

    /// Storage and terminal cost of the interior family for this horizon.
    pub fn interior_storage(&self) -> (StorageSpec, TerminalCost) {
        interior_storage(self.horizon)
    }
}

impl CostSource for QuadraticStream {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn cost(&self, t: usize) -> Cow<'_, CostFunction> {
        Cow::Owned(self.params.draw(self.seed, t))
    }
}

/// Parameters of the piecewise-linear dispatch family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwlParams {
    pub segments: usize,
    pub c_max: f64,
    pub demand_span: f64,
}

impl Default for PwlParams {
    fn default() -> Self {
        Self {
            segments: 100,
            c_max: 30.0,
            demand_span: 2.0,
        }
    }
}

/// Merit-order costs on the reference device with terminal cost
/// `(E - e)^2 / 2`.
///
/// Each period draws `J` generator prices uniformly in `[0, c_max]` and sorts
/// them into a supply curve over `J` cells of `[-span, span]`, with `J - 1`
/// uniformly drawn, sorted interior breakpoints kept at least
/// `1e-9 * span` apart. Discharging `p` displaces the most expensive
/// generation, so the storage marginal at `p` is the negated price of the
/// cell at `-p`: marginals lie in `[-c_max, 0]`.
pub fn generate_pwl(
    seed: u64,
    horizon: usize,
    params: PwlParams,
) -> Result<Scenario, ScenarioError> {
    if horizon == 0 {
        return Err(ScenarioError::Format("horizon must be at least 1".into()));
    }
    if params.segments == 0 {
        return Err(ScenarioError::Format("need at least one segment".into()));
    }
    let (spec, _) = reference_storage();
    if !params.demand_span.is_finite() || params.demand_span < spec.power() {
        return Err(ScenarioError::Format(format!(
            "demand span {} must be at least the power rating {}",
            params.demand_span,
            spec.power()
        )));
    }
    if !(params.c_max >= 0.0 && params.c_max.is_finite()) {
        return Err(ScenarioError::Format(
            "c_max must be finite and >= 0".into(),
        ));
    }
    let costs = (0..horizon)
        .map(|t| pwl_period(seed, t, &params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scenario {
        spec,
        costs,
        terminal: TerminalCost::fill_to(spec.capacity()),
        seed,
        family: Family::PwlDispatch,
    })
}

fn pwl_period(seed: u64, t: usize, params: &PwlParams) -> Result<CostFunction, ScenarioError> {
    let j = params.segments;
    let span = params.demand_span;
    let mut rng = period_rng(seed, t);
    let mut prices: Vec<f64> = (0..j)
        .map(|_| uniform(&mut rng, 0.0, params.c_max))
        .collect();
    prices.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..j).map(|_| uniform(&mut rng, -span, span)).collect();
    cuts.sort_by(f64::total_cmp);
    let sep = 1e-9 * span;
    // Push duplicates apart from the left, then pull back from the right end.
    let mut prev = -span;
    for c in cuts.iter_mut() {
        *c = c.max(prev + sep);
        prev = *c;
    }
    let mut next = span;
    for c in cuts.iter_mut().rev() {
        *c = c.min(next - sep);
        next = *c;
    }
    let mut bounds = Vec::with_capacity(j + 1);
    bounds.push(-span);
    bounds.extend_from_slice(&cuts);
    bounds.push(span);
    let segments: Vec<(f64, f64)> = (1..=j).map(|k| (-prices[j - k], -bounds[j - k])).collect();
    CostFunction::piecewise_linear(-span, &segments).map_err(invalid(format!("period {}", t + 1)))
}

// On-disk layout.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StorageFile {
    #[serde(rename = "P")]
    power: f64,
    #[serde(rename = "E")]
    capacity: f64,
    eta: f64,
    e0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalFile {
    kappa: f64,
    e_ref: f64,
    slope: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum CostFile {
    #[serde(rename = "quad")]
    Quadratic { alpha: f64, beta: f64 },
    #[serde(rename = "pwl")]
    PiecewiseLinear {
        q_lo: f64,
        segments: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    family: Family,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<String>,
    storage: StorageFile,
    #[serde(rename = "T")]
    horizon: usize,
    terminal: TerminalFile,
    costs: Vec<CostFile>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let costs = s
            .costs
            .iter()
            .map(|c| match c {
                CostFunction::Quadratic(q) => CostFile::Quadratic {
                    alpha: q.alpha(),
                    beta: q.beta(),
                },
                CostFunction::PiecewiseLinear(p) => CostFile::PiecewiseLinear {
                    q_lo: p.lower(),
                    segments: p.segments().iter().map(|g| (g.marginal, g.upper)).collect(),
                },
            })
            .collect();
        ScenarioFile {
            version: SCHEMA_VERSION,
            family: s.family,
            seed: s.seed,
            rng: Some(RNG_NAME.to_string()),
            storage: StorageFile {
                power: s.spec.power(),
                capacity: s.spec.capacity(),
                eta: s.spec.eta(),
                e0: s.spec.initial(),
            },
            horizon: s.costs.len(),
            terminal: TerminalFile {
                kappa: s.terminal.kappa(),
                e_ref: s.terminal.e_ref(),
                slope: s.terminal.slope(),
            },
            costs,
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = ScenarioError;

    fn try_from(f: ScenarioFile) -> Result<Self, ScenarioError> {
        if f.version != SCHEMA_VERSION {
            return Err(ScenarioError::Format(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                f.version
            )));
        }
        let st = &f.storage;
        let spec =
            StorageSpec::new(st.power, st.capacity, st.eta, st.e0).map_err(invalid("storage"))?;
        let terminal = TerminalCost::new(f.terminal.kappa, f.terminal.e_ref, f.terminal.slope)
            .map_err(invalid("terminal"))?;
        if f.costs.len() != f.horizon {
            return Err(ScenarioError::Format(format!(
                "T = {} but {} costs are listed",
                f.horizon,
                f.costs.len()
            )));
        }
        let costs = f
            .costs
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                match c {
                    CostFile::Quadratic { alpha, beta } => CostFunction::quadratic(alpha, beta),
                    CostFile::PiecewiseLinear { q_lo, segments } => {
                        CostFunction::piecewise_linear(q_lo, &segments)
                    }
                }
                .map_err(invalid(format!("costs[{i}]")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let s = Scenario {
            spec,
            costs,
            terminal,
            seed: f.seed,
            family: f.family,
        };
        s.validate()?;
        Ok(s)
    }
}

pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("plain data serializes")
}

pub fn scenario_from_json(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|source| ScenarioError::Json {
        path: origin.to_string(),
        source,
    })?;
    file.try_into()
}

pub fn write_scenario(s: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    fs::write(path, scenario_to_json(s) + "\n").map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scenario_from_json(&text, &path.display().to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    t: usize,
    p_plus: f64,
    p_minus: f64,
    net: f64,
    soc: f64,
    theta: Option<f64>,
}

/// Writes `t, p_plus, p_minus, net, soc, theta`, starting with a `t = 0` row
/// that holds the initial state and `theta_0`.
pub fn write_schedule<W: std::io::Write>(schedule: &Schedule, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let theta = |t: usize| schedule.theta.as_ref().map(|th| th[t]);
    w.serialize(ScheduleRow {
        t: 0,
        p_plus: 0.0,
        p_minus: 0.0,
        net: 0.0,
        soc: schedule.initial_soc,
        theta: theta(0),
    })?;
    for (i, s) in schedule.steps.iter().enumerate() {
        w.serialize(ScheduleRow {
            t: i + 1,
            p_plus: s.dispatch.p_plus,
            p_minus: s.dispatch.p_minus,
            net: s.dispatch.net(),
            soc: s.soc,
            theta: theta(i + 1),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schedule_file(schedule: &Schedule, path: &Path) -> Result<(), ScenarioError> {
    let file = fs::File::create(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_schedule(schedule, file).map_err(|source| ScenarioError::Csv {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a schedule written by [`write_schedule`]. The objective is left at
/// zero; the multiplier trace is kept only when every row carries one.
pub fn read_schedule_file(path: &Path) -> Result<Schedule, ScenarioError> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|source| ScenarioError::Csv {
        path: name.clone(),
        source,
    })?;
    let rows = r
        .deserialize::<ScheduleRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| ScenarioError::Csv {
            path: name.clone(),
            source,
        })?;
    let Some(first) = rows.first() else {
        return Err(ScenarioError::Format(format!("{name}: empty schedule")));
    };
    for (i, row) in rows.iter().enumerate() {
        if row.t != i {
            return Err(ScenarioError::Format(format!(
                "{name}: row {} has t = {}, expected {i}",
                i + 2,
                row.t
            )));
        }
    }
    let theta: Option<Vec<f64>> = rows.iter().map(|r| r.theta).collect();
    Ok(Schedule {
        initial_soc: first.soc,
        steps: rows[1..]
            .iter()
            .map(|r| ScheduleStep {
                dispatch: Dispatch {
                    p_plus: r.p_plus,
                    p_minus: r.p_minus,
                },
                soc: r.soc,
            })
            .collect(),
        theta,
        objective: 0.0,
    })
}
