//! The part-learning optimizers.
//!
//! All four take an initial matching `M₀` and a [`CostContext`] and return
//! a matching plus a [`SolverReport`]:
//!
//! * [`solve_hungarian`]: one projection of `C(M₀)` onto `ℳ`.
//! * [`solve_ipfp`]: integer projected fixed point, ascent on `J` with an
//!   exact line search.
//! * [`solve_isa`]: iterated soft-assign, annealed per-image Sinkhorn.
//! * [`solve_gfb`]: generalized forward-backward splitting on `J_ρ` over `𝒮`.
//!
//! Every solver is deterministic given its inputs.

mod gfb;
mod hungarian;
mod ipfp;
mod isa;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matching::MatchingMatrix;
use crate::projection::project_matching;
use crate::scalar::Scalar;

pub use gfb::{solve_gfb, Coefficient, GfbOptions};
pub use hungarian::solve_hungarian;
pub use ipfp::{solve_ipfp, IPFP_DEFAULT_MAX_ITER};
pub use isa::{solve_isa, IsaSchedule};
pub use sinkhorn::{default_pad_value, sinkhorn_assign, sinkhorn_padded, SinkhornResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
    EarlyStop,
}

/// Which quantity `objective_trace` records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TracedObjective {
    /// `J(M) = ⟨M, MA − B⟩`, maximized.
    #[serde(rename = "J")]
    J,
    /// `J_ρ(M)`, minimized.
    #[serde(rename = "J_rho")]
    JRho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub objective: TracedObjective,
    pub objective_trace: Vec<f64>,
    /// Per-iteration worst violation of the constraints of `𝒮`.
    pub constraint_residuals: Vec<f64>,
    pub iterations: usize,
    /// Seconds. Never serialized, so written reports are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
    pub stop_reason: StopReason,
    /// Hard companion of a soft output: `rounded_assignment[image][part] = region`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounded_assignment: Option<Vec<Vec<usize>>>,
}

impl SolverReport {
    fn new(solver: &str, objective: TracedObjective) -> Self {
        SolverReport {
            solver: solver.to_owned(),
            objective,
            objective_trace: Vec::new(),
            constraint_residuals: Vec::new(),
            iterations: 0,
            wall_time: 0.0,
            stop_reason: StopReason::MaxIter,
            rounded_assignment: None,
        }
    }

    fn record<T: Scalar>(&mut self, objective: T, residual: T) {
        self.objective_trace.push(objective.as_f64());
        self.constraint_residuals.push(residual.as_f64());
        self.iterations += 1;
    }
}

/// Nearest hard matching in the sense of `argmax_{H ∈ ℳ} ⟨H, M⟩`: one
/// Hungarian pass with the soft matrix itself as the score.
pub fn round_to_hard<T: Scalar>(m: &MatchingMatrix<T>) -> Result<MatchingMatrix<T>> {
    project_matching(m.values(), m.regions_per_image())
}
