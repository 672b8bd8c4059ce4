//! Bisection on the initial state-of-charge multiplier.
//!
//! A guess `x` is classified by emulating the policy at `x`: overflowing the
//! capacity first means `x` is at or above the optimum, running dry first
//! means it is at or below, and a trace that stays inside the bounds is
//! decided by comparing `x` with the terminal marginal value `-c_T(sigma_T)`.

use alloc::vec::Vec;

use crate::cost::{check_domains, marginal_envelope, CostFunction, CostSource, Tail, TerminalCost};
use crate::error::{Error, Result};
use crate::oracle::objective_of;
use crate::policy::{
    dispatch_unchecked, soc_step, walk, Crossing, Dispatch, PolicyVariant, StorageSpec,
};
use crate::schedule::{Schedule, ScheduleStep};

/// Initial multiplier bracket.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RangePolicy {
    /// `(-h, h)` from [`marginal_envelope`]; encloses negative multipliers.
    #[default]
    Envelope,
    /// `(0, max o_t(p) / eta)`: assumes stored energy never has negative value.
    PositiveValue,
    Fixed {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Width of the final multiplier bracket.
    pub epsilon: f64,
    pub range: RangePolicy,
    /// Hard cap on bisection steps; exceeding it is reported as
    /// [`Error::NoConvergence`].
    pub max_iterations: u32,
    /// Record the committed prefix. Without it `solve` holds constant state.
    pub collect_prefix: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            range: RangePolicy::Envelope,
            max_iterations: 200,
            collect_prefix: true,
        }
    }
}

impl SearchConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    AboveOrEqual,
    BelowOrEqual,
    Equal,
}

/// Places `x` relative to the optimal multiplier given the emulated trace at
/// `x`.
pub fn classify(x: f64, crossing: &Crossing, terminal: &TerminalCost) -> Classification {
    match *crossing {
        Crossing::HitUpper { .. } => Classification::AboveOrEqual,
        Crossing::HitLower { .. } => Classification::BelowOrEqual,
        Crossing::Completed { soc } => {
            let target = -terminal.marginal(soc);
            if x > target {
                Classification::AboveOrEqual
            } else if x < target {
                Classification::BelowOrEqual
            } else {
                Classification::Equal
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefixEntry {
    pub dispatch: Dispatch,
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Midpoint of the final bracket.
    pub theta: f64,
    /// Policy dispatch at `theta` for period 1, pulled back onto the violated
    /// bound when its emulated state of charge leaves `[0, E]`.
    pub first_control: Dispatch,
    pub first_clamped: bool,
    /// Leading periods over which the emulated traces at both bracket ends stay
    /// strictly inside `(0, E)`; filled only with `collect_prefix`.
    pub prefix: Vec<PrefixEntry>,
    pub prefix_len: usize,
    pub iterations: u32,
    pub bracket: (f64, f64),
    pub initial_range: (f64, f64),
    /// The search stopped on an exact terminal match.
    pub exact: bool,
    pub variant: PolicyVariant,
}

impl DualSolution {
    /// Dispatches at the two bracket ends differ by more than `tol` in period
    /// 1: the multiplier sits on a flat piece of some marginal curve.
    pub fn is_degenerate<S: CostSource + ?Sized>(
        &self,
        spec: &StorageSpec,
        costs: &S,
        tol: f64,
    ) -> bool {
        let c = costs.cost(0);
        let lo = dispatch_unchecked(spec, &c, self.bracket.0, self.variant);
        let hi = dispatch_unchecked(spec, &c, self.bracket.1, self.variant);
        (lo.net() - hi.net()).abs() > tol
    }
}

/// Dual and first-period bounds for the problem with non-simultaneous
/// charge and discharge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsResult {
    /// From the charge-preferring search (highest emulated state of charge).
    pub theta_lo: f64,
    /// From the discharge-preferring search (lowest emulated state of charge).
    pub theta_hi: f64,
    /// Charge-preferring net dispatch at `theta_hi`.
    pub p_lo: f64,
    /// Discharge-preferring net dispatch at `theta_lo`.
    pub p_hi: f64,
    /// Charge-preferring net dispatch at `theta_lo` (the opposite pairing).
    pub alt_p_lo: f64,
    /// Discharge-preferring net dispatch at `theta_hi`.
    pub alt_p_hi: f64,
    pub iterations: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarmControl {
    Dispatch(Dispatch),
    /// The emulated state of charge left `[0, E]`; solve again from the
    /// current state.
    Resolve,
}

/// `ceil(log2(width / epsilon))`, the number of halvings that bring `width`
/// below `epsilon`.
pub fn bisection_budget(width: f64, epsilon: f64) -> u32 {
    let mut n = 0;
    let mut w = epsilon;
    while w < width && n < 2048 {
        w *= 2.0;
        n += 1;
    }
    n
}

fn validate(spec: &StorageSpec, horizon: usize, cfg: &SearchConfig) -> Result<()> {
    // Spec fields are private and validated on construction; recheck the
    // initial state for specs rebuilt by callers.
    if !(spec.initial() >= 0.0 && spec.initial() <= spec.capacity()) {
        return Err(Error::InvalidStorage(
            "initial state of charge must lie in [0, E]",
        ));
    }
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be finite and > 0"));
    }
    Ok(())
}

fn initial_range<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    range: RangePolicy,
) -> Result<(f64, f64)> {
    let (lo, hi) = match range {
        RangePolicy::Envelope => {
            marginal_envelope(costs, terminal, spec.power(), spec.capacity(), spec.eta())?
        }
        RangePolicy::PositiveValue => {
            let mut hi = f64::NEG_INFINITY;
            for t in 0..costs.horizon() {
                let c = costs.cost(t);
                hi = hi.max(c.marginal(-spec.power())?.max(c.marginal(spec.power())?));
            }
            (0.0, hi / spec.eta())
        }
        RangePolicy::Fixed { lo, hi } => (lo, hi),
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        if lo == hi && lo.is_finite() {
            return Ok((lo, hi));
        }
        return Err(Error::InvalidConfig("search range must satisfy L < R"));
    }
    Ok((lo, hi))
}

struct Bracket {
    lo: f64,
    hi: f64,
    iterations: u32,
    exact: bool,
}

#[inline]
fn trace_at<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    x: f64,
    variant: PolicyVariant,
) -> Crossing {
    walk(
        spec,
        costs,
        |c| dispatch_unchecked(spec, c, x, variant),
        |_| {},
    )
}

/// Halves `[b.lo, b.hi]` until it is narrower than `width`.
fn bisect<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    variant: PolicyVariant,
    b: &mut Bracket,
    width: f64,
    cap: u32,
) -> Result<()> {
    while !b.exact && b.hi - b.lo >= width {
        if b.iterations >= cap {
            return Err(Error::NoConvergence {
                iterations: b.iterations,
                lo: b.lo,
                hi: b.hi,
            });
        }
        let x = 0.5 * (b.lo + b.hi);
        if x <= b.lo || x >= b.hi {
            // Adjacent floats; the bracket cannot shrink further.
            break;
        }
        let crossing = trace_at(spec, costs, x, variant);
        b.iterations += 1;
        match classify(x, &crossing, terminal) {
            Classification::AboveOrEqual => b.hi = x,
            Classification::BelowOrEqual => b.lo = x,
            Classification::Equal => {
                b.lo = x;
                b.hi = x;
                b.exact = true;
            }
        }
    }
    Ok(())
}

// Strictly inside `(0, E)`: touching a bound ends the emulation, so it also
// ends the committed prefix.
#[inline]
fn interior(spec: &StorageSpec, soc: f64) -> bool {
    soc > 0.0 && soc < spec.capacity()
}

/// Pulls a dispatch taken from state `prev` back so the state of charge lands
/// on the bound it would otherwise cross. Returns the adjusted dispatch, the
/// landing state and whether anything changed.
fn clamp_step(spec: &StorageSpec, prev: f64, d: Dispatch) -> (Dispatch, f64, bool) {
    let soc = soc_step(spec, prev, &d);
    let eta = spec.eta();
    let cap = spec.capacity();
    if soc > cap {
        let p_minus = ((cap - prev + d.p_plus / eta) / eta).clamp(0.0, d.p_minus);
        let d = Dispatch {
            p_plus: d.p_plus,
            p_minus,
        };
        (d, soc_step(spec, prev, &d).min(cap), true)
    } else if soc < 0.0 {
        let p_plus = (eta * (prev + d.p_minus * eta)).clamp(0.0, d.p_plus);
        let d = Dispatch {
            p_plus,
            p_minus: d.p_minus,
        };
        (d, soc_step(spec, prev, &d).max(0.0), true)
    } else {
        (d, soc, false)
    }
}

/// Finds the initial multiplier by bisection and returns the first control
/// together with the prefix that is optimal for every multiplier in the final
/// bracket.
pub fn solve<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    cfg: &SearchConfig,
    variant: PolicyVariant,
) -> Result<DualSolution> {
    validate(spec, costs.horizon(), cfg)?;
    check_domains(costs, spec.power())?;
    let range = initial_range(spec, costs, terminal, cfg.range)?;
    let mut b = Bracket {
        lo: range.0,
        hi: range.1,
        iterations: 0,
        exact: range.0 == range.1,
    };
    bisect(
        spec,
        costs,
        terminal,
        variant,
        &mut b,
        cfg.epsilon,
        cfg.max_iterations,
    )?;
    let theta = 0.5 * (b.lo + b.hi);

    let first = dispatch_unchecked(spec, &costs.cost(0), theta, variant);
    let (first_control, _, first_clamped) = clamp_step(spec, spec.initial(), first);

    let mut prefix = Vec::new();
    let mut prefix_len = 0;
    let (mut s_lo, mut s_hi, mut s_mid) = (spec.initial(), spec.initial(), spec.initial());
    for t in 0..costs.horizon() {
        let c = costs.cost(t);
        let d_mid = dispatch_unchecked(spec, &c, theta, variant);
        s_lo = soc_step(spec, s_lo, &dispatch_unchecked(spec, &c, b.lo, variant));
        s_hi = soc_step(spec, s_hi, &dispatch_unchecked(spec, &c, b.hi, variant));
        s_mid = soc_step(spec, s_mid, &d_mid);
        if !(interior(spec, s_lo) && interior(spec, s_hi)) {
            break;
        }
        prefix_len += 1;
        if cfg.collect_prefix {
            prefix.push(PrefixEntry {
                dispatch: d_mid,
                soc: s_mid.clamp(0.0, spec.capacity()),
            });
        }
    }

    Ok(DualSolution {
        theta,
        first_control,
        first_clamped,
        prefix,
        prefix_len,
        iterations: b.iterations,
        bracket: (b.lo, b.hi),
        initial_range: range,
        exact: b.exact,
        variant,
    })
}

/// Bounds on the multiplier and the first control when charge and discharge
/// may not overlap. Charge-preferring emulation never holds less energy than
/// any admissible charge-status assignment, so its multiplier is the lower
/// bound; discharge-preferring gives the upper bound.
pub fn solve_bounds<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    cfg: &SearchConfig,
) -> Result<BoundsResult> {
    let cfg = SearchConfig {
        collect_prefix: false,
        ..*cfg
    };
    let charge = solve(spec, costs, terminal, &cfg, PolicyVariant::ChargePreferring)?;
    let discharge = solve(
        spec,
        costs,
        terminal,
        &cfg,
        PolicyVariant::DischargePreferring,
    )?;
    let c = costs.cost(0);
    let net = |x: f64, v: PolicyVariant| dispatch_unchecked(spec, &c, x, v).net();
    let (theta_lo, theta_hi) = (charge.theta, discharge.theta);
    Ok(BoundsResult {
        theta_lo,
        theta_hi,
        p_lo: net(theta_hi, PolicyVariant::ChargePreferring),
        p_hi: net(theta_lo, PolicyVariant::DischargePreferring),
        alt_p_lo: net(theta_lo, PolicyVariant::ChargePreferring),
        alt_p_hi: net(theta_hi, PolicyVariant::DischargePreferring),
        iterations: (charge.iterations, discharge.iterations),
    })
}

/// Control for period `t` (1-based) from an earlier solution without solving
/// again, valid while the emulated state of charge at `prev.theta` has stayed
/// strictly inside `(0, E)` through period `t`.
pub fn warm_control<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    prev: &DualSolution,
    t: usize,
) -> Result<WarmControl> {
    if t == 0 || t > costs.horizon() {
        return Err(Error::InvalidConfig("period out of range"));
    }
    if let Some(entry) = prev.prefix.get(t - 1) {
        return Ok(WarmControl::Dispatch(entry.dispatch));
    }
    check_domains(costs, spec.power())?;
    let mut soc = spec.initial();
    let mut d = Dispatch::IDLE;
    for tau in 0..t {
        d = dispatch_unchecked(spec, &costs.cost(tau), prev.theta, prev.variant);
        soc = soc_step(spec, soc, &d);
        if !interior(spec, soc) {
            return Ok(WarmControl::Resolve);
        }
    }
    Ok(WarmControl::Dispatch(d))
}

// Relative bracket width after polishing; well above f64 spacing for the
// multiplier magnitudes the envelope produces.
const POLISH_REL: f64 = 1e-13;
const SELECT_ITERATIONS: u32 = 200;

struct Commit {
    theta: f64,
    steps: Vec<ScheduleStep>,
}

/// Solves the subproblem from `spec.initial()` and returns the periods that
/// can be committed. The multiplier is polished far below `cfg.epsilon`, then
/// a convex combination of the two bracket-end policies is selected so the
/// emulated trace meets its bound or terminal condition; this resolves
/// multipliers that sit on a flat piece of a piecewise-linear marginal.
fn plan_segment<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    cfg: &SearchConfig,
    range: (f64, f64),
) -> Result<Commit> {
    let variant = PolicyVariant::Relaxed;
    let mut b = Bracket {
        lo: range.0,
        hi: range.1,
        iterations: 0,
        exact: range.0 == range.1,
    };
    bisect(
        spec,
        costs,
        terminal,
        variant,
        &mut b,
        cfg.epsilon,
        cfg.max_iterations,
    )?;
    let scale = b.lo.abs().max(b.hi.abs()).max(1.0);
    let cap = b.iterations + SELECT_ITERATIONS;
    bisect(
        spec,
        costs,
        terminal,
        variant,
        &mut b,
        POLISH_REL * scale,
        cap,
    )?;
    let theta = 0.5 * (b.lo + b.hi);
    let (x_lo, x_hi) = (b.lo, b.hi);
    let at = |c: &CostFunction| {
        (
            dispatch_unchecked(spec, c, x_lo, variant),
            dispatch_unchecked(spec, c, x_hi, variant),
        )
    };

    let mut spread = 0.0_f64;
    {
        let (mut s_lo, mut s_hi) = (spec.initial(), spec.initial());
        for t in 0..costs.horizon() {
            let (d_lo, d_hi) = at(&costs.cost(t));
            s_lo = soc_step(spec, s_lo, &d_lo);
            s_hi = soc_step(spec, s_hi, &d_hi);
            spread = spread.max((s_hi - s_lo).abs());
        }
    }
    let tol = 1e-12 * spec.capacity().max(1.0);
    let (mut w_lo, mut w_hi) = (0.0_f64, 1.0_f64);
    let mut steps = 0;
    while (w_hi - w_lo) * spread > tol && steps < SELECT_ITERATIONS {
        let w = 0.5 * (w_lo + w_hi);
        let crossing = walk(
            spec,
            costs,
            |c| {
                let (d_lo, d_hi) = at(c);
                d_lo.blend(&d_hi, w)
            },
            |_| {},
        );
        match classify(theta, &crossing, terminal) {
            Classification::AboveOrEqual => w_hi = w,
            Classification::BelowOrEqual => w_lo = w,
            Classification::Equal => {
                w_lo = w;
                w_hi = w;
            }
        }
        steps += 1;
    }
    let w_mid = 0.5 * (w_lo + w_hi);

    // Commit while both selected traces stay strictly inside; the period in
    // which they reach a bound is committed too when the middle trace lands
    // on it, so every segment but the last ends on a bound.
    let land = 1e-9 * spec.capacity().max(1.0);
    let mut out = Vec::new();
    let (mut s_lo, mut s_hi, mut s_mid) = (spec.initial(), spec.initial(), spec.initial());
    for t in 0..costs.horizon() {
        let (d_lo, d_hi) = at(&costs.cost(t));
        let d_mid = d_lo.blend(&d_hi, w_mid);
        s_lo = soc_step(spec, s_lo, &d_lo.blend(&d_hi, w_lo));
        s_hi = soc_step(spec, s_hi, &d_lo.blend(&d_hi, w_hi));
        let next = soc_step(spec, s_mid, &d_mid);
        if interior(spec, s_lo) && interior(spec, s_hi) {
            s_mid = next.clamp(0.0, spec.capacity());
            out.push(ScheduleStep {
                dispatch: d_mid,
                soc: s_mid,
            });
            continue;
        }
        let bound = if s_lo.max(s_hi) >= spec.capacity() {
            spec.capacity()
        } else {
            0.0
        };
        if (next - bound).abs() <= land || out.is_empty() {
            let (dispatch, soc, _) = clamp_step(spec, s_mid, d_mid);
            let soc = if (soc - bound).abs() <= land {
                bound
            } else {
                soc
            };
            out.push(ScheduleStep { dispatch, soc });
        }
        break;
    }
    Ok(Commit { theta, steps: out })
}

/// Full-horizon schedule by repeated solves: commit the periods that are
/// optimal for the current multiplier, then solve the remaining periods from
/// the state reached at the first bound event.
///
/// The multiplier trace changes only between committed segments.
pub fn solve_horizon<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    terminal: &TerminalCost,
    cfg: &SearchConfig,
) -> Result<Schedule> {
    let horizon = costs.horizon();
    validate(spec, horizon, cfg)?;
    check_domains(costs, spec.power())?;
    let mut steps = Vec::with_capacity(horizon);
    let mut theta = Vec::with_capacity(horizon + 1);
    let mut soc = spec.initial();
    while steps.len() < horizon {
        let k = steps.len();
        let sub_spec = spec.with_initial(soc)?;
        let tail = Tail::new(costs, k);
        let mut range = initial_range(&sub_spec, &tail, terminal, cfg.range)?;
        // From a bound the multiplier may only move the way complementary
        // slackness allows: up after filling, down after emptying.
        if let Some(&last) = theta.last() {
            if soc >= spec.capacity() && last > range.0 && last <= range.1 {
                range.0 = last;
            } else if soc <= 0.0 && last < range.1 && last >= range.0 {
                range.1 = last;
            }
        }
        let commit = plan_segment(&sub_spec, &tail, terminal, cfg, range)?;
        if commit.steps.is_empty() {
            return Err(Error::NoProgress { period: k + 1 });
        }
        for s in commit.steps {
            theta.push(commit.theta);
            soc = s.soc;
            steps.push(s);
        }
    }
    theta.push(-terminal.marginal(soc));
    let mut schedule = Schedule {
        initial_soc: spec.initial(),
        steps,
        theta: Some(theta),
        objective: 0.0,
    };
    schedule.objective = objective_of(costs, terminal, &schedule)?;
    Ok(schedule)
}
