use std::time::Instant;

use super::{SolverReport, StopReason, TracedObjective};
use crate::cost::CostContext;
use crate::error::Result;
use crate::matching::MatchingMatrix;
use crate::projection::project_matching;
use crate::scalar::Scalar;

/// Projects the initial cost `C(M₀)` onto `ℳ` once.
pub fn solve_hungarian<T: Scalar>(
    m0: &MatchingMatrix<T>,
    ctx: &CostContext<T>,
) -> Result<(MatchingMatrix<T>, SolverReport)> {
    let start = Instant::now();
    let mut report = SolverReport::new("hungarian", TracedObjective::J);
    let cost = ctx.cost_matrix(m0.values())?;
    let m = project_matching(&cost, m0.regions_per_image())?;
    report.record(ctx.objective_j(m.values())?, m.constraint_residual());
    report.stop_reason = StopReason::Converged;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}
