use alloc::vec::Vec;

use crate::policy::{soc_step, Dispatch, StorageSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub dispatch: Dispatch,
    /// State of charge at the end of the period.
    pub soc: f64,
}

/// A full-horizon trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub initial_soc: f64,
    pub steps: Vec<ScheduleStep>,
    /// `theta_0 ..= theta_T` when the producer tracks multipliers; period `t`
    /// (1-based) is driven by `theta[t - 1]`.
    pub theta: Option<Vec<f64>>,
    pub objective: f64,
}

impl Schedule {
    /// Rebuilds the state-of-charge trajectory from `dispatches`. The
    /// objective is left at zero.
    pub fn from_dispatches(spec: &StorageSpec, dispatches: &[Dispatch]) -> Self {
        let mut soc = spec.initial();
        let steps = dispatches
            .iter()
            .map(|d| {
                soc = soc_step(spec, soc, d);
                ScheduleStep { dispatch: *d, soc }
            })
            .collect();
        Schedule {
            initial_soc: spec.initial(),
            steps,
            theta: None,
            objective: 0.0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn first_net(&self) -> Option<f64> {
        self.steps.first().map(|s| s.dispatch.net())
    }

    pub fn final_soc(&self) -> f64 {
        self.steps.last().map_or(self.initial_soc, |s| s.soc)
    }
}
