use std::time::Instant;

use super::{SolverReport, StopReason, TracedObjective};
use crate::cost::CostContext;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::matching::MatchingMatrix;
use crate::projection::project_matching;
use crate::scalar::Scalar;

pub const IPFP_DEFAULT_MAX_ITER: usize = 100;

/// Integer projected fixed point iterations for `max_{M∈ℳ} J(M)`.
///
/// Each step projects the gradient `G = 2MA − B` onto `ℳ` and moves towards
/// the projection with the exact maximizer of the quadratic along the
/// segment. Stops when the iterate or the projection stops changing; the
/// output is the last (binary) projection.
pub fn solve_ipfp<T: Scalar>(
    m0: &MatchingMatrix<T>,
    ctx: &CostContext<T>,
    max_iter: usize,
) -> Result<(MatchingMatrix<T>, SolverReport)> {
    let start = Instant::now();
    let mut report = SolverReport::new("ipfp", TracedObjective::J);
    let rpi = m0.regions_per_image();
    let b = ctx.b_row();
    let mut m = m0.values().clone();
    let mut last: Option<MatchingMatrix<T>> = None;
    let two = T::lit(2.0);

    for _ in 0..max_iter {
        let ma = ctx.times_a(&m)?;
        let mut g = ma.scale(two);
        for p in 0..g.rows() {
            for (v, &br) in g.row_mut(p).iter_mut().zip(b) {
                *v -= br;
            }
        }
        let proj = project_matching(&g, rpi)?;
        let delta = proj.values().zip_map(&m, |a, c| a - c);
        let c = g.dot(&delta);
        let d = ctx.times_a(&delta)?.dot(&delta);
        let t = if d < T::zero() {
            (-c / (two * d)).min(T::one())
        } else {
            T::one()
        };
        let next: Matrix<T> = proj
            .values()
            .zip_map(&m, |pv, mv| t * pv + (T::one() - t) * mv);

        let next_mm = MatchingMatrix::new(next.clone(), rpi)?;
        report.record(ctx.objective_j(&next)?, next_mm.constraint_residual());

        let fixed_point = next == m;
        let repeated = last.as_ref().is_some_and(|prev| prev == &proj);
        m = next;
        last = Some(proj);
        if fixed_point || repeated {
            report.stop_reason = StopReason::Converged;
            break;
        }
    }
    let out = match last {
        Some(p) => p,
        // No iteration ran: fall back to the nearest hard matching of M₀.
        None => super::round_to_hard(m0)?,
    };
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((out, report))
}
