//! The multiplier-driven dispatch policy and the unclamped state-of-charge
//! emulation used to classify multiplier guesses.

use alloc::vec::Vec;

use crate::cost::{check_domains, CostFunction, CostSource};
use crate::error::{Error, Result};

/// Physical storage parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageSpec {
    power: f64,
    capacity: f64,
    eta: f64,
    initial: f64,
}

impl StorageSpec {
    /// `power` is the energy that can be moved in one period, `capacity` the
    /// energy rating, `eta` the one-way efficiency applied to both charge and
    /// discharge, `initial` the state of charge before period 1.
    pub fn new(power: f64, capacity: f64, eta: f64, initial: f64) -> Result<Self> {
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::InvalidStorage("power rating must be finite and > 0"));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::InvalidStorage(
                "energy capacity must be finite and > 0",
            ));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidStorage("efficiency must lie in (0, 1]"));
        }
        if !(initial >= 0.0 && initial <= capacity) {
            return Err(Error::InvalidStorage(
                "initial state of charge must lie in [0, E]",
            ));
        }
        Ok(Self {
            power,
            capacity,
            eta,
            initial,
        })
    }

    /// P = 1, E = 4, e0 = 2, eta = 0.92.
    pub fn reference() -> Self {
        Self {
            power: 1.0,
            capacity: 4.0,
            eta: 0.92,
            initial: 2.0,
        }
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// Same device, different starting state of charge.
    pub fn with_initial(&self, initial: f64) -> Result<Self> {
        Self::new(self.power, self.capacity, self.eta, initial)
    }
}

/// One period's dispatch: `p_plus` discharges, `p_minus` charges.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dispatch {
    pub p_plus: f64,
    pub p_minus: f64,
}

impl Dispatch {
    pub const IDLE: Dispatch = Dispatch {
        p_plus: 0.0,
        p_minus: 0.0,
    };

    /// Splits a net dispatch into one-sided components.
    pub fn from_net(net: f64) -> Self {
        if net >= 0.0 {
            Dispatch {
                p_plus: net,
                p_minus: 0.0,
            }
        } else {
            Dispatch {
                p_plus: 0.0,
                p_minus: -net,
            }
        }
    }

    #[inline]
    pub fn net(&self) -> f64 {
        self.p_plus - self.p_minus
    }

    pub fn is_simultaneous(&self) -> bool {
        self.p_plus > 0.0 && self.p_minus > 0.0
    }

    /// `(1 - w) * self + w * other`, componentwise; equal components are kept
    /// bit-exact.
    pub(crate) fn blend(&self, other: &Dispatch, w: f64) -> Dispatch {
        let mix = |a: f64, b: f64| if a == b { a } else { a + w * (b - a) };
        Dispatch {
            p_plus: mix(self.p_plus, other.p_plus),
            p_minus: mix(self.p_minus, other.p_minus),
        }
    }
}

/// Tie-breaking applied when the relaxed policy both charges and discharges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PolicyVariant {
    #[default]
    Relaxed,
    /// Drop the discharge component whenever the charge component is positive.
    ChargePreferring,
    /// Drop the charge component whenever the discharge component is positive.
    DischargePreferring,
}

/// How an emulated state-of-charge trace ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// First period (1-based) with `sigma >= E`.
    HitUpper { period: usize, soc: f64 },
    /// First period (1-based) with `sigma <= 0`.
    HitLower { period: usize, soc: f64 },
    /// The whole horizon stayed strictly inside `(0, E)`.
    Completed { soc: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub crossing: Crossing,
    /// Dispatches before the crossing period (or the whole horizon), when
    /// requested.
    pub prefix: Vec<Dispatch>,
}

#[inline]
fn saturate(v: f64, power: f64) -> f64 {
    v.min(power).max(0.0)
}

#[inline]
pub(crate) fn dispatch_unchecked(
    spec: &StorageSpec,
    cost: &CostFunction,
    x: f64,
    variant: PolicyVariant,
) -> Dispatch {
    let mut p_plus = saturate(cost.inverse_marginal(-x / spec.eta), spec.power);
    let mut p_minus = saturate(-cost.inverse_marginal(-x * spec.eta), spec.power);
    match variant {
        PolicyVariant::Relaxed => {}
        PolicyVariant::ChargePreferring => {
            if p_minus > 0.0 {
                p_plus = 0.0;
            }
        }
        PolicyVariant::DischargePreferring => {
            if p_plus > 0.0 {
                p_minus = 0.0;
            }
        }
    }
    Dispatch { p_plus, p_minus }
}

/// `p_plus = [phi(-x / eta)]_0^P`, `p_minus = [-phi(-x * eta)]_0^P`, with the
/// variant's tie-break applied.
pub fn policy_dispatch(
    spec: &StorageSpec,
    cost: &CostFunction,
    x: f64,
    variant: PolicyVariant,
) -> Result<Dispatch> {
    if !cost.covers(spec.power) {
        let (lo, hi) = cost.domain();
        return Err(Error::DomainTooNarrow {
            period: 0,
            lo,
            hi,
            power: spec.power,
        });
    }
    Ok(dispatch_unchecked(spec, cost, x, variant))
}

/// One step of the unclamped emulation: `sigma - p_plus / eta + p_minus * eta`.
#[inline]
pub fn soc_step(spec: &StorageSpec, sigma: f64, d: &Dispatch) -> f64 {
    sigma - d.p_plus / spec.eta + d.p_minus * spec.eta
}

/// Walks the horizon from `e0` with an arbitrary per-period dispatch rule and
/// stops at the first bound touch.
#[inline]
pub(crate) fn walk<S, F>(
    spec: &StorageSpec,
    costs: &S,
    mut rule: F,
    mut on_step: impl FnMut(&Dispatch),
) -> Crossing
where
    S: CostSource + ?Sized,
    F: FnMut(&CostFunction) -> Dispatch,
{
    let mut sigma = spec.initial;
    for t in 0..costs.horizon() {
        let d = rule(&costs.cost(t));
        sigma = soc_step(spec, sigma, &d);
        if sigma >= spec.capacity {
            return Crossing::HitUpper {
                period: t + 1,
                soc: sigma,
            };
        }
        if sigma <= 0.0 {
            return Crossing::HitLower {
                period: t + 1,
                soc: sigma,
            };
        }
        on_step(&d);
    }
    Crossing::Completed { soc: sigma }
}

/// Simulates the policy at multiplier guess `x` until `sigma` first reaches a
/// bound. Holds constant state unless `collect_prefix` is set.
pub fn simulate<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    x: f64,
    variant: PolicyVariant,
    collect_prefix: bool,
) -> Result<SimOutcome> {
    if costs.horizon() == 0 {
        return Err(Error::EmptyHorizon);
    }
    check_domains(costs, spec.power)?;
    let mut prefix = Vec::new();
    let crossing = walk(
        spec,
        costs,
        |c| dispatch_unchecked(spec, c, x, variant),
        |d| {
            if collect_prefix {
                prefix.push(*d);
            }
        },
    );
    Ok(SimOutcome { crossing, prefix })
}

/// `sigma_1(x) ..= sigma_T(x)` over the whole horizon, ignoring bounds.
pub fn soc_trace<S: CostSource + ?Sized>(
    spec: &StorageSpec,
    costs: &S,
    x: f64,
    variant: PolicyVariant,
) -> Result<Vec<f64>> {
    check_domains(costs, spec.power)?;
    let mut sigma = spec.initial;
    Ok((0..costs.horizon())
        .map(|t| {
            let d = dispatch_unchecked(spec, &costs.cost(t), x, variant);
            sigma = soc_step(spec, sigma, &d);
            sigma
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit(eta: f64) -> StorageSpec {
        StorageSpec::new(1.0, 4.0, eta, 2.0).unwrap()
    }

    #[test]
    fn storage_invariants() {
        assert!(StorageSpec::new(0.0, 4.0, 1.0, 2.0).is_err());
        assert!(StorageSpec::new(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(StorageSpec::new(1.0, 4.0, 0.0, 2.0).is_err());
        assert!(StorageSpec::new(1.0, 4.0, 1.1, 2.0).is_err());
        assert!(StorageSpec::new(1.0, 4.0, 1.0, 4.5).is_err());
        assert!(StorageSpec::new(1.0, 4.0, 1.0, -0.1).is_err());
        assert!(StorageSpec::new(1.0, 4.0, 1.0, 4.0).is_ok());
    }

    #[test]
    fn dispatch_charges_at_positive_multiplier() {
        let c = CostFunction::quadratic(1.0, 0.0).unwrap();
        let d = policy_dispatch(&unit(1.0), &c, 1.0, PolicyVariant::Relaxed).unwrap();
        assert_eq!(
            d,
            Dispatch {
                p_plus: 0.0,
                p_minus: 1.0
            }
        );
        assert_eq!(d.net(), -1.0);
    }

    #[test]
    fn variants_resolve_simultaneous_dispatch() {
        // phi(w) = -5 + w at w = 12 and w = 3.
        let spec = StorageSpec::new(1.0, 4.0, 0.5, 2.0).unwrap();
        let c = CostFunction::quadratic(1.0, -5.0).unwrap();
        let relaxed = policy_dispatch(&spec, &c, -6.0, PolicyVariant::Relaxed).unwrap();
        assert_eq!(
            relaxed,
            Dispatch {
                p_plus: 1.0,
                p_minus: 1.0
            }
        );
        assert_eq!(relaxed.net(), 0.0);
        let charge = policy_dispatch(&spec, &c, -6.0, PolicyVariant::ChargePreferring).unwrap();
        assert_eq!(charge.net(), -1.0);
        let discharge =
            policy_dispatch(&spec, &c, -6.0, PolicyVariant::DischargePreferring).unwrap();
        assert_eq!(discharge.net(), 1.0);
    }

    #[test]
    fn dispatch_rejects_narrow_domain() {
        let c = CostFunction::piecewise_linear(-0.5, &[(1.0, 0.5)]).unwrap();
        assert!(matches!(
            policy_dispatch(&unit(1.0), &c, 0.0, PolicyVariant::Relaxed),
            Err(Error::DomainTooNarrow { .. })
        ));
    }

    #[test]
    fn soc_step_examples() {
        let spec = unit(0.92);
        let charge = Dispatch {
            p_plus: 0.0,
            p_minus: 1.0,
        };
        assert!((soc_step(&spec, 2.0, &charge) - 2.92).abs() < 1e-12);
        let discharge = Dispatch {
            p_plus: 0.46,
            p_minus: 0.0,
        };
        assert!((soc_step(&spec, 2.0, &discharge) - 1.5).abs() < 1e-12);
        assert_eq!(soc_step(&spec, 2.0, &Dispatch::IDLE), 2.0);
    }

    #[test]
    fn simultaneous_dispatch_burns_energy() {
        let spec = unit(0.8);
        let a = 0.5;
        let d = Dispatch {
            p_plus: a,
            p_minus: a,
        };
        let drop = 2.0 - soc_step(&spec, 2.0, &d);
        assert!((drop - a * (1.0 / 0.8 - 0.8)).abs() < 1e-12);
        assert!(drop > 0.0);
    }

    #[test]
    fn simulate_stops_at_first_crossing() {
        let spec = StorageSpec::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let costs = vec![CostFunction::quadratic(1.0, -10.0).unwrap(); 2];
        let out = simulate(&spec, &costs, 0.0, PolicyVariant::Relaxed, true).unwrap();
        assert_eq!(
            out.crossing,
            Crossing::HitUpper {
                period: 1,
                soc: 2.0
            }
        );
        assert!(out.prefix.is_empty());
    }

    #[test]
    fn simulate_extreme_multipliers() {
        let spec = StorageSpec::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let costs = vec![CostFunction::quadratic(1.0, -10.0).unwrap(); 2];
        // A large positive multiplier charges at full power.
        let out = simulate(&spec, &costs, 1000.0, PolicyVariant::Relaxed, true).unwrap();
        assert!(matches!(out.crossing, Crossing::HitUpper { period: 1, .. }));
        let out = simulate(&spec, &costs, -1000.0, PolicyVariant::Relaxed, true).unwrap();
        assert!(matches!(out.crossing, Crossing::HitLower { period: 1, .. }));
        // Only x = o(0) = -10 idles the device.
        let out = simulate(&spec, &costs, -10.0, PolicyVariant::Relaxed, true).unwrap();
        assert_eq!(out.crossing, Crossing::Completed { soc: 0.5 });
        assert_eq!(out.prefix, vec![Dispatch::IDLE; 2]);
    }

    #[test]
    fn simulate_single_period_completes() {
        let spec = StorageSpec::new(1.0, 4.0, 1.0, 2.0).unwrap();
        let costs = vec![CostFunction::quadratic(1.0, 0.0).unwrap()];
        let out = simulate(&spec, &costs, 1.0, PolicyVariant::Relaxed, true).unwrap();
        assert_eq!(out.crossing, Crossing::Completed { soc: 3.0 });
        assert_eq!(
            out.prefix,
            vec![Dispatch {
                p_plus: 0.0,
                p_minus: 1.0
            }]
        );
    }

    #[test]
    fn simulate_rejects_empty_horizon() {
        let costs: Vec<CostFunction> = Vec::new();
        assert_eq!(
            simulate(&unit(1.0), &costs, 0.0, PolicyVariant::Relaxed, false),
            Err(Error::EmptyHorizon)
        );
    }

    #[test]
    fn blend_keeps_equal_components_exact() {
        let a = Dispatch {
            p_plus: 1.0,
            p_minus: 0.3,
        };
        let b = Dispatch {
            p_plus: 1.0,
            p_minus: 0.7,
        };
        let m = a.blend(&b, 0.37);
        assert_eq!(m.p_plus, 1.0);
        assert!((m.p_minus - (0.3 + 0.37 * 0.4)).abs() < 1e-15);
        assert_eq!(a.blend(&b, 0.0), a);
    }
}
