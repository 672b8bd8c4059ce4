//! Look-ahead control of a single energy storage device.
//!
//! The optimal dispatch over a horizon of `T` periods is recovered from a
//! single scalar: the Lagrange multiplier of the state-of-charge dynamics at
//! the start of the horizon. Any guess `x` of that multiplier drives a
//! closed-form policy. If the unclamped state of charge under that policy
//! overflows the capacity first, the guess is too high; if it runs dry first,
//! too low. Bisection on `x` finds the multiplier in
//! `O(T log((R - L) / eps))` time and constant space.
//!
//! Modules:
//! - [`cost`]: convex per-period costs, their marginals and pseudo-inverses.
//! - [`policy`]: storage parameters, the multiplier-driven policy and the
//!   state-of-charge emulation.
//! - [`search`]: classification of guesses, the bisection solver, bounds for
//!   the non-simultaneous variant and the full-horizon solver.
//! - [`oracle`]: an independent dynamic-programming solver, a KKT residual
//!   checker and objective evaluation.
//!
//! The crate is `no_std` and only needs `alloc` for schedules, piecewise
//! linear curves and the dynamic-programming tables.
#![cfg_attr(not(test), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod cost;
mod error;
pub mod oracle;
pub mod policy;
pub mod schedule;
pub mod search;

pub use cost::{
    marginal_envelope, CostFunction, CostSource, PiecewiseLinearCost, QuadraticCost, Segment, Tail,
    TerminalCost,
};
pub use error::{Error, Result};
pub use oracle::{check_feasible, dp_solve, kkt_residuals, objective_of, DpConfig, KktReport};
pub use policy::{
    policy_dispatch, simulate, soc_step, soc_trace, Crossing, Dispatch, PolicyVariant, SimOutcome,
    StorageSpec,
};
pub use schedule::{Schedule, ScheduleStep};
pub use search::{
    bisection_budget, classify, solve, solve_bounds, solve_horizon, warm_control, BoundsResult,
    Classification, DualSolution, PrefixEntry, RangePolicy, SearchConfig, WarmControl,
};
