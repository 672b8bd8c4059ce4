//! Per-period operating costs `O_t`, their marginals `o_t`, the pseudo-inverse
//! `phi_t(x) = sup { y | o_t(y) <= x }` and the terminal valuation of the
//! final state of charge.

use alloc::borrow::Cow;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `O(p) = alpha / 2 * (beta - p)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    alpha: f64,
    beta: f64,
}

impl QuadraticCost {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidCost(
                "quadratic curvature must be finite and > 0",
            ));
        }
        if !beta.is_finite() {
            return Err(Error::InvalidCost("quadratic target must be finite"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// One step of a piecewise-constant marginal curve: `marginal` applies on
/// `[previous upper, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub marginal: f64,
    pub upper: f64,
}

/// Convex piecewise-linear cost defined on `[lower, last upper]`, anchored so
/// that `O(lower) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearCost {
    lower: f64,
    segments: Vec<Segment>,
    // Cost accumulated up to each segment's upper quantity.
    cumulative: Vec<f64>,
}

impl PiecewiseLinearCost {
    pub fn new(lower: f64, segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidCost(
                "piecewise-linear cost needs at least one segment",
            ));
        }
        if !lower.is_finite() {
            return Err(Error::InvalidCost("domain lower bound must be finite"));
        }
        let mut prev_q = lower;
        let mut prev_c = f64::NEG_INFINITY;
        let mut cumulative = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            if !s.marginal.is_finite() || !s.upper.is_finite() {
                return Err(Error::InvalidCost("segment values must be finite"));
            }
            if s.upper <= prev_q {
                return Err(Error::InvalidCost(
                    "segment quantities must be strictly increasing",
                ));
            }
            if s.marginal < prev_c {
                return Err(Error::InvalidCost(
                    "segment marginals must be non-decreasing",
                ));
            }
            acc += s.marginal * (s.upper - prev_q);
            cumulative.push(acc);
            prev_q = s.upper;
            prev_c = s.marginal;
        }
        Ok(Self {
            lower,
            segments,
            cumulative,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.segments[self.segments.len() - 1].upper
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn check_domain(&self, p: f64) -> Result<()> {
        if p >= self.lower && p <= self.upper() {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                p,
                lo: self.lower,
                hi: self.upper(),
            })
        }
    }

    fn segment_start(&self, j: usize) -> f64 {
        if j == 0 {
            self.lower
        } else {
            self.segments[j - 1].upper
        }
    }

    // Index of the segment whose half-open interval holds `p`; `len` at the
    // upper end of the domain.
    fn locate(&self, p: f64) -> usize {
        self.segments.partition_point(|s| s.upper <= p)
    }

    fn eval(&self, p: f64) -> Result<f64> {
        self.check_domain(p)?;
        let j = self.locate(p);
        if j == self.segments.len() {
            return Ok(self.cumulative[j - 1]);
        }
        let before = if j == 0 { 0.0 } else { self.cumulative[j - 1] };
        Ok(before + self.segments[j].marginal * (p - self.segment_start(j)))
    }

    fn marginal(&self, p: f64) -> Result<f64> {
        self.check_domain(p)?;
        let j = self.locate(p).min(self.segments.len() - 1);
        Ok(self.segments[j].marginal)
    }

    fn inverse_marginal(&self, x: f64) -> f64 {
        match self.segments.partition_point(|s| s.marginal <= x) {
            0 => self.lower,
            k => self.segments[k - 1].upper,
        }
    }

    fn subgradient(&self, p: f64) -> Result<(f64, f64)> {
        self.check_domain(p)?;
        let left = if p == self.lower {
            f64::NEG_INFINITY
        } else {
            self.segments[self.segments.partition_point(|s| s.upper < p)].marginal
        };
        let right = if p == self.upper() {
            f64::INFINITY
        } else {
            self.segments[self.locate(p)].marginal
        };
        Ok((left, right))
    }
}

/// A convex per-period operating cost.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    Quadratic(QuadraticCost),
    PiecewiseLinear(PiecewiseLinearCost),
}

impl From<QuadraticCost> for CostFunction {
    fn from(c: QuadraticCost) -> Self {
        CostFunction::Quadratic(c)
    }
}

impl From<PiecewiseLinearCost> for CostFunction {
    fn from(c: PiecewiseLinearCost) -> Self {
        CostFunction::PiecewiseLinear(c)
    }
}

impl CostFunction {
    pub fn quadratic(alpha: f64, beta: f64) -> Result<Self> {
        QuadraticCost::new(alpha, beta).map(Self::Quadratic)
    }

    /// Builds a piecewise-linear cost from `(marginal, upper quantity)` pairs.
    pub fn piecewise_linear(lower: f64, segments: &[(f64, f64)]) -> Result<Self> {
        let segments = segments
            .iter()
            .map(|&(marginal, upper)| Segment { marginal, upper })
            .collect();
        PiecewiseLinearCost::new(lower, segments).map(Self::PiecewiseLinear)
    }

    /// `O_t(p)`.
    pub fn eval(&self, p: f64) -> Result<f64> {
        match self {
            CostFunction::Quadratic(q) => {
                let d = q.beta - p;
                Ok(0.5 * q.alpha * d * d)
            }
            CostFunction::PiecewiseLinear(c) => c.eval(p),
        }
    }

    /// `o_t(p)`, right-continuous at breakpoints; the last marginal is returned
    /// at the upper end of a piecewise-linear domain.
    pub fn marginal(&self, p: f64) -> Result<f64> {
        match self {
            CostFunction::Quadratic(q) => Ok(q.alpha * (p - q.beta)),
            CostFunction::PiecewiseLinear(c) => c.marginal(p),
        }
    }

    /// `phi_t(x) = sup { y | o_t(y) <= x }`, restricted to the domain.
    #[inline]
    pub fn inverse_marginal(&self, x: f64) -> f64 {
        match self {
            CostFunction::Quadratic(q) => q.beta + x / q.alpha,
            CostFunction::PiecewiseLinear(c) => c.inverse_marginal(x),
        }
    }

    /// Left and right derivatives of `O_t` at `p`. Infinite at the edges of a
    /// piecewise-linear domain.
    pub fn subgradient(&self, p: f64) -> Result<(f64, f64)> {
        match self {
            CostFunction::Quadratic(_) => {
                let m = self.marginal(p)?;
                Ok((m, m))
            }
            CostFunction::PiecewiseLinear(c) => c.subgradient(p),
        }
    }

    /// `(lower, upper)` of the domain; unbounded for quadratics.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            CostFunction::Quadratic(_) => (f64::NEG_INFINITY, f64::INFINITY),
            CostFunction::PiecewiseLinear(c) => (c.lower(), c.upper()),
        }
    }

    pub fn covers(&self, power: f64) -> bool {
        let (lo, hi) = self.domain();
        lo <= -power && hi >= power
    }

    /// `max |o_t(p)|` over `p` in `[-power, power]`.
    pub fn max_abs_marginal(&self, power: f64) -> Result<f64> {
        let lo = self.marginal(-power)?;
        let hi = self.marginal(power)?;
        Ok(lo.abs().max(hi.abs()))
    }
}

/// `C_T(e) = kappa / 2 * (e - e_ref)^2 + slope * (e - e_ref)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCost {
    kappa: f64,
    e_ref: f64,
    slope: f64,
}

impl TerminalCost {
    pub fn new(kappa: f64, e_ref: f64, slope: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::InvalidTerminal("curvature must be finite and >= 0"));
        }
        if !e_ref.is_finite() || !slope.is_finite() {
            return Err(Error::InvalidTerminal("reference and slope must be finite"));
        }
        Ok(Self {
            kappa,
            e_ref,
            slope,
        })
    }

    /// `(capacity - e)^2 / 2`: the terminal valuation used in the reference
    /// experiments.
    pub fn fill_to(capacity: f64) -> Self {
        Self {
            kappa: 1.0,
            e_ref: capacity,
            slope: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            kappa: 0.0,
            e_ref: 0.0,
            slope: 0.0,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn e_ref(&self) -> f64 {
        self.e_ref
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn eval(&self, e: f64) -> f64 {
        let d = e - self.e_ref;
        0.5 * self.kappa * d * d + self.slope * d
    }

    /// `c_T(e)`.
    #[inline]
    pub fn marginal(&self, e: f64) -> f64 {
        self.kappa * (e - self.e_ref) + self.slope
    }
}

/// Indexed access to the per-period costs of a horizon, `t` in `0..horizon()`.
///
/// Implementors may build costs on demand, so a solver that walks the horizon
/// never needs the whole sequence in memory.
pub trait CostSource {
    fn horizon(&self) -> usize;
    fn cost(&self, t: usize) -> Cow<'_, CostFunction>;
}

impl CostSource for [CostFunction] {
    fn horizon(&self) -> usize {
        self.len()
    }

    #[inline]
    fn cost(&self, t: usize) -> Cow<'_, CostFunction> {
        Cow::Borrowed(&self[t])
    }
}

impl CostSource for Vec<CostFunction> {
    fn horizon(&self) -> usize {
        self.len()
    }

    #[inline]
    fn cost(&self, t: usize) -> Cow<'_, CostFunction> {
        Cow::Borrowed(&self[t])
    }
}

impl<S: CostSource + ?Sized> CostSource for &S {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }

    #[inline]
    fn cost(&self, t: usize) -> Cow<'_, CostFunction> {
        (**self).cost(t)
    }
}

/// The periods of `source` from `offset` onwards.
#[derive(Debug, Clone, Copy)]
pub struct Tail<'a, S: ?Sized> {
    source: &'a S,
    offset: usize,
}

impl<'a, S: CostSource + ?Sized> Tail<'a, S> {
    pub fn new(source: &'a S, offset: usize) -> Self {
        assert!(offset <= source.horizon(), "tail offset beyond horizon");
        Self { source, offset }
    }
}

impl<S: CostSource + ?Sized> CostSource for Tail<'_, S> {
    fn horizon(&self) -> usize {
        self.source.horizon() - self.offset
    }

    #[inline]
    fn cost(&self, t: usize) -> Cow<'_, CostFunction> {
        self.source.cost(self.offset + t)
    }
}

/// Checks that every piecewise-linear domain covers `[-power, power]`.
pub fn check_domains<S: CostSource + ?Sized>(costs: &S, power: f64) -> Result<()> {
    for t in 0..costs.horizon() {
        let c = costs.cost(t);
        if !c.covers(power) {
            let (lo, hi) = c.domain();
            return Err(Error::DomainTooNarrow {
                period: t + 1,
                lo,
                hi,
                power,
            });
        }
    }
    Ok(())
}

/// Symmetric multiplier range `(-hi, hi)` guaranteed to contain the optimal
/// multiplier: `hi` is the largest `|o_t|` over the power range divided by
/// `eta`, plus the largest `|c_T|` over `[0, capacity]`.
pub fn marginal_envelope<S: CostSource + ?Sized>(
    costs: &S,
    terminal: &TerminalCost,
    power: f64,
    capacity: f64,
    eta: f64,
) -> Result<(f64, f64)> {
    if costs.horizon() == 0 {
        return Err(Error::EmptyHorizon);
    }
    check_domains(costs, power)?;
    let mut op = 0.0_f64;
    for t in 0..costs.horizon() {
        op = op.max(costs.cost(t).max_abs_marginal(power)?);
    }
    let term = terminal
        .marginal(0.0)
        .abs()
        .max(terminal.marginal(capacity).abs());
    let hi = op / eta + term;
    Ok((-hi, hi))
}
