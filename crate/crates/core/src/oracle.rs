//! Reference checks that share nothing with the bisection solver: a grid
//! dynamic program over the physical problem, a KKT residual checker for
//! schedules that carry a multiplier trace, and plain objective evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{check_domains, CostFunction, CostSource, TerminalCost};
use crate::error::{Error, Result};
use crate::policy::{soc_step, Dispatch, StorageSpec};
use crate::schedule::{Schedule, ScheduleStep};

/// Grid sizes for [`dp_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpConfig {
    /// Evenly spaced state-of-charge points on `[0, E]`, ends included.
    pub soc_points: usize,
    /// Evenly spaced net dispatch points on `[-P, P]`. An odd count keeps
    /// idling on the grid.
    pub power_points: usize,
    /// Besides the power grid, minimize exactly over continuous power
    /// against the interpolated value function, one state-of-charge cell at
    /// a time. Without it every period is restricted to the power grid,
    /// which can move the first control by several grid steps when the
    /// objective is flat near the optimum.
    pub cell_search: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            soc_points: 401,
            power_points: 201,
            cell_search: true,
        }
    }
}

impl DpConfig {
    /// Spacing of the power grid for a device with rating `power`.
    pub fn power_step(&self, power: f64) -> f64 {
        2.0 * power / (self.power_points - 1) as f64
    }
}

/// `Σ O_t(p_t) + C_T(e_T)` for the net dispatch of each step.
pub fn objective_of<S: CostSource + ?Sized>(
    costs: &S,
    terminal: &TerminalCost,
    schedule: &Schedule,
) -> Result<f64> {
    if schedule.horizon() != costs.horizon() {
        return Err(Error::InfeasibleSchedule {
            period: schedule.horizon().min(costs.horizon()) + 1,
            reason: "schedule length differs from the horizon",
        });
    }
    let mut total = 0.0;
    for (t, step) in schedule.steps.iter().enumerate() {
        total += costs.cost(t).eval(step.dispatch.net())?;
    }
    Ok(total + terminal.eval(schedule.final_soc()))
}

// Linear interpolation of `values` over the uniform grid on `[0, cap]`.
#[inline]
fn interpolate(values: &[f64], cap: f64, soc: f64) -> f64 {
    let n = values.len() - 1;
    let pos = (soc / cap * n as f64).clamp(0.0, n as f64);
    let i = (pos as usize).min(n - 1);
    let w = pos - i as f64;
    let (a, b) = (values[i], values[i + 1]);
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + w * (b - a)
    }
}

// One backward-induction stage: `O_t` plus the interpolated `V_t`.
struct Stage<'a> {
    spec: &'a StorageSpec,
    cost: &'a CostFunction,
    next: &'a [f64],
    // Power grid with `O_t` evaluated at each point.
    grid: &'a [(f64, f64)],
    cell_search: bool,
}

impl Stage<'_> {
    // Cost-to-go of net power `q` from state `s`, or `None` when infeasible.
    #[inline]
    fn value(&self, s: f64, q: f64, o: f64) -> Option<(f64, f64)> {
        let cap = self.spec.capacity();
        let slack = 1e-12 * cap.max(1.0);
        let e = soc_step(self.spec, s, &Dispatch::from_net(q));
        if e < -slack || e > cap + slack {
            return None;
        }
        let e = e.clamp(0.0, cap);
        Some((o + interpolate(self.next, cap, e), e))
    }

    /// Best `(value, power, next state)` from state `s`.
    fn best(&self, s: f64) -> Result<(f64, f64, f64)> {
        let idle = self.cost.eval(0.0)?;
        let mut best = (f64::INFINITY, 0.0, s);
        let mut consider = |q: f64, o: f64| {
            if let Some((v, e)) = self.value(s, q, o) {
                if v < best.0 {
                    best = (v, q, e);
                }
            }
        };
        consider(0.0, idle);
        for &(q, o) in self.grid {
            consider(q, o);
        }
        if !self.cell_search {
            return Ok(best);
        }
        let spec = self.spec;
        let (cap, eta, power) = (spec.capacity(), spec.eta(), spec.power());
        let n = self.next.len() - 1;
        let h = cap / n as f64;
        let node = |j: usize| cap * j as f64 / n as f64;
        let slope = |j: usize| (self.next[j + 1] - self.next[j]) / h;

        // Discharge: next state s - q / eta over [s - q_max / eta, s].
        let q_max = power.min(s * eta);
        let lowest = (s - q_max / eta).max(0.0);
        let first = ((lowest / h) as usize).min(n - 1);
        let mut j = first;
        while j < n && node(j) < s {
            let (a, b) = (node(j).max(lowest), node(j + 1).min(s));
            if b > a {
                let (q_lo, q_hi) = (((s - b) * eta).max(0.0), ((s - a) * eta).min(q_max));
                // The cell's upper end is the next cell's lower end, or idling.
                consider(q_hi, self.cost.eval(q_hi)?);
                let q_star = self.cost.inverse_marginal(slope(j) / eta);
                if q_star > q_lo && q_star < q_hi {
                    consider(q_star, self.cost.eval(q_star)?);
                }
            }
            j += 1;
        }

        // Charge: next state s - q * eta over [s, s + q_max * eta].
        let q_max = power.min((cap - s) / eta);
        let highest = (s + q_max * eta).min(cap);
        let mut j = ((s / h) as usize).min(n - 1);
        while j < n && node(j) < highest {
            let (a, b) = (node(j).max(s), node(j + 1).min(highest));
            if b > a {
                let (q_lo, q_hi) = ((-(b - s) / eta).max(-q_max), (-(a - s) / eta).min(0.0));
                consider(q_lo, self.cost.eval(q_lo)?);
                let q_star = self.cost.inverse_marginal(slope(j) * eta);
                if q_star > q_lo && q_star < q_hi {
                    consider(q_star, self.cost.eval(q_star)?);
                }
            }
            j += 1;
        }
        Ok(best)
    }
}

/// Solves the physical problem (charge and discharge never overlap) by
/// backward value iteration on a state-of-charge grid, then rolls a policy
/// forward from the exact initial state.
///
/// Actions are net powers: the power grid, plus the exact minimizer within
/// each state-of-charge cell when [`DpConfig::cell_search`] is set. The
/// forward pass keeps the state continuous and only evaluates the value
/// tables by interpolation, so the returned schedule is exactly feasible and
/// its objective is evaluated without grid error.
pub fn dp_solve<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    cfg: &DpConfig,
) -> Result<Schedule> {
    if cfg.soc_points < 2 {
        return Err(Error::InvalidGrid(
            "need at least two state-of-charge points",
        ));
    }
    if cfg.power_points < 3 || cfg.power_points % 2 == 0 {
        return Err(Error::InvalidGrid(
            "power points must be odd and at least 3",
        ));
    }
    let horizon = costs.horizon();
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    check_domains(costs, spec.power())?;

    let cap = spec.capacity();
    let ns = cfg.soc_points;
    let np = cfg.power_points;
    let soc_grid: Vec<f64> = (0..ns).map(|i| cap * i as f64 / (ns - 1) as f64).collect();
    let half = (np - 1) / 2;
    let power_grid: Vec<f64> = (0..np)
        .map(|k| spec.power() * (k as f64 - half as f64) / half as f64)
        .collect();
    let mut grid = Vec::with_capacity(np);

    // values[t] holds V_t on the grid, t = 0..=horizon.
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    for (v, &s) in values[horizon].iter_mut().zip(&soc_grid) {
        *v = terminal.eval(s);
    }
    for t in (0..horizon).rev() {
        let cost = costs.cost(t);
        grid.clear();
        for &q in &power_grid {
            grid.push((q, cost.eval(q)?));
        }
        let (head, tail) = values.split_at_mut(t + 1);
        let stage = Stage {
            spec,
            cost: &cost,
            next: &tail[0],
            grid: &grid,
            cell_search: cfg.cell_search,
        };
        for (v, &s) in head[t].iter_mut().zip(&soc_grid) {
            *v = stage.best(s)?.0;
        }
    }

    let mut steps = Vec::with_capacity(horizon);
    let mut soc = spec.initial();
    for t in 0..horizon {
        let cost = costs.cost(t);
        grid.clear();
        for &q in &power_grid {
            grid.push((q, cost.eval(q)?));
        }
        let stage = Stage {
            spec,
            cost: &cost,
            next: &values[t + 1],
            grid: &grid,
            cell_search: cfg.cell_search,
        };
        let (_, q, e) = stage.best(soc)?;
        soc = e;
        steps.push(ScheduleStep {
            dispatch: Dispatch::from_net(q),
            soc,
        });
    }
    let mut schedule = Schedule {
        initial_soc: spec.initial(),
        steps,
        theta: None,
        objective: 0.0,
    };
    schedule.objective = objective_of(costs, terminal, &schedule)?;
    Ok(schedule)
}

/// Largest KKT violations of a schedule against its multiplier trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// Distance of zero from the stationarity subdifferential of either
    /// dispatch component, after crediting admissible box multipliers.
    pub stationarity: f64,
    /// Multiplier jumps not explained by an active state-of-charge bound.
    pub complementarity: f64,
    /// `|theta_T + c_T(e_T)|`.
    pub terminal: f64,
    /// Period (1-based) of the largest stationarity or complementarity
    /// residual; 0 when every residual is zero.
    pub worst_period: usize,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.terminal)
    }
}

// Left derivative at `p - delta` and right derivative at `p + delta`, so a
// dispatch rounded off a breakpoint still sees both adjacent slopes.
fn widened_subgradient(cost: &CostFunction, p: f64, delta: f64) -> Result<(f64, f64)> {
    if let CostFunction::Quadratic(_) = cost {
        return cost.subgradient(p);
    }
    let (lo, hi) = cost.domain();
    let left = cost.subgradient((p - delta).max(lo).min(p))?.0;
    let right = cost.subgradient((p + delta).min(hi).max(p))?.1;
    Ok((left, right))
}

// Residual of `0 ∈ [a, b] + box multipliers` for a variable on `[0, cap]`.
fn box_residual(value: f64, cap: f64, a: f64, b: f64, tol: f64) -> f64 {
    let at_zero = value <= tol;
    let at_cap = value >= cap - tol;
    let interior = if a > 0.0 {
        a
    } else if b < 0.0 {
        -b
    } else {
        0.0
    };
    match (at_zero, at_cap) {
        (true, true) => 0.0,
        // A lower-bound multiplier can absorb any positive gradient.
        (true, false) => (-b).max(0.0),
        (false, true) => a.max(0.0),
        (false, false) => interior,
    }
}

/// Dispatch within `[0, P]`, state of charge within `[0, E]` and consistent
/// with the dynamics from `schedule.initial_soc`, all to `1e-9` relative.
/// The initial state must match `spec`.
pub fn check_feasible(spec: &StorageSpec, schedule: &Schedule) -> Result<()> {
    if (schedule.initial_soc - spec.initial()).abs() > 1e-9 * spec.capacity().max(1.0) {
        return Err(Error::InfeasibleSchedule {
            period: 0,
            reason: "initial state of charge differs from the storage",
        });
    }
    let cap = spec.capacity();
    let power = spec.power();
    let tol = 1e-9 * cap.max(1.0);
    let ptol = 1e-9 * power.max(1.0);
    let mut prev = schedule.initial_soc;
    for (t, step) in schedule.steps.iter().enumerate() {
        let d = &step.dispatch;
        let period = t + 1;
        if !(d.p_plus >= -ptol && d.p_plus <= power + ptol)
            || !(d.p_minus >= -ptol && d.p_minus <= power + ptol)
        {
            return Err(Error::InfeasibleSchedule {
                period,
                reason: "dispatch outside [0, P]",
            });
        }
        if !(step.soc >= -tol && step.soc <= cap + tol) {
            return Err(Error::InfeasibleSchedule {
                period,
                reason: "state of charge outside [0, E]",
            });
        }
        if (soc_step(spec, prev, d) - step.soc).abs() > tol {
            return Err(Error::InfeasibleSchedule {
                period,
                reason: "state of charge does not follow the dynamics",
            });
        }
        prev = step.soc;
    }
    Ok(())
}

/// Checks stationarity, complementary slackness and the terminal condition
/// for `schedule`, whose `theta` must hold `theta_0 ..= theta_T`.
///
/// Stationarity of `p_plus` uses the subdifferential of `O_t` at `p_plus`
/// and that of `p_minus` the subdifferential at `-p_minus`: the conditions
/// of the relaxation `O_t(p_plus) + O_t(-p_minus) - O_t(0)`, which agrees
/// with `O_t(p_plus - p_minus)` on one-sided dispatch.
///
/// The schedule is first checked with [`check_feasible`].
pub fn kkt_residuals<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    schedule: &Schedule,
) -> Result<KktReport> {
    let horizon = costs.horizon();
    if schedule.horizon() != horizon || horizon == 0 {
        return Err(Error::InfeasibleSchedule {
            period: schedule.horizon().min(horizon) + 1,
            reason: "schedule length differs from the horizon",
        });
    }
    let theta = schedule
        .theta
        .as_deref()
        .ok_or(Error::InvalidConfig("schedule carries no multiplier trace"))?;
    if theta.len() != horizon + 1 {
        return Err(Error::InvalidConfig(
            "multiplier trace must have T + 1 entries",
        ));
    }
    check_domains(costs, spec.power())?;

    check_feasible(spec, schedule)?;

    let cap = spec.capacity();
    let power = spec.power();
    let tol = 1e-9 * cap.max(1.0);
    let ptol = 1e-9 * power.max(1.0);
    let eta = spec.eta();
    let mut report = KktReport::default();
    let mut worst = 0.0;
    for (t, step) in schedule.steps.iter().enumerate() {
        let d = &step.dispatch;
        let cost = costs.cost(t);
        let x = theta[t];
        // Each component is checked at its own operating point, as the policy
        // sets it; this matches the net-cost conditions whenever at most one
        // component is nonzero and x >= 0.
        let (lo, hi) = widened_subgradient(&cost, d.p_plus.clamp(0.0, power), ptol)?;
        let r_plus = box_residual(d.p_plus, power, lo + x / eta, hi + x / eta, ptol);
        let (lo, hi) = widened_subgradient(&cost, -d.p_minus.clamp(0.0, power), ptol)?;
        let r_minus = box_residual(d.p_minus, power, -hi - x * eta, -lo - x * eta, ptol);
        let stat = r_plus.max(r_minus);

        let delta = theta[t + 1] - x;
        let comp = if step.soc >= cap - tol && step.soc <= tol {
            0.0
        } else if step.soc >= cap - tol {
            (-delta).max(0.0)
        } else if step.soc <= tol {
            delta.max(0.0)
        } else {
            delta.abs()
        };

        report.stationarity = report.stationarity.max(stat);
        report.complementarity = report.complementarity.max(comp);
        if stat.max(comp) > worst {
            worst = stat.max(comp);
            report.worst_period = t + 1;
        }
    }
    report.terminal = (theta[horizon] + terminal.marginal(schedule.final_soc())).abs();
    Ok(report)
}
