use std::time::Instant;

use super::sinkhorn::sinkhorn_assign;
use super::{round_to_hard, SolverReport, StopReason, TracedObjective};
use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matching::MatchingMatrix;
use crate::scalar::Scalar;

/// Annealing schedule of the iterated soft-assign solver.
///
/// `None` fields are resolved against the problem at solve time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsaSchedule<T> {
    /// Initial inverse temperature; defaults to `1/max|C(M₀)|`.
    pub beta0: Option<T>,
    /// Growth factor applied to `β` at the start of every outer iteration.
    pub beta_rate: T,
    /// Inner loop stops when `‖M_new − M‖_F` drops below this; defaults to `1e-4·P·n⁺`.
    pub inner_tol: Option<T>,
    pub inner_max: usize,
    pub outer_max: usize,
    /// Outer loop cap that ends the solve with [`StopReason::EarlyStop`].
    pub early_stop_outer: Option<usize>,
    /// Outer loop converges when `‖round(M) − M‖_F` drops below this; defaults to `inner_tol`.
    pub hard_tol: Option<T>,
    pub sinkhorn_tol: T,
    pub sinkhorn_max_iter: usize,
}

impl<T: Scalar> Default for IsaSchedule<T> {
    fn default() -> Self {
        IsaSchedule {
            beta0: None,
            beta_rate: T::lit(1.1),
            inner_tol: None,
            inner_max: 100,
            outer_max: 1000,
            early_stop_outer: Some(50),
            hard_tol: None,
            sinkhorn_tol: T::lit(1e-6),
            sinkhorn_max_iter: 1000,
        }
    }
}

impl<T: Scalar> IsaSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_rate > T::one()) {
            return Err(Error::InvalidOptions(format!(
                "β growth factor must exceed 1, got {}",
                self.beta_rate
            )));
        }
        if let Some(b) = self.beta0 {
            if !(b > T::zero()) {
                return Err(Error::InvalidOptions(format!(
                    "β₀ must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }
}

fn soft_assign_all<T: Scalar>(
    cost: &Matrix<T>,
    rpi: usize,
    beta: T,
    schedule: &IsaSchedule<T>,
) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(cost.rows(), cost.cols());
    for img in 0..cost.cols() / rpi {
        let block = cost.column_block(img * rpi, rpi);
        let soft = sinkhorn_assign(
            &block,
            beta,
            None,
            schedule.sinkhorn_tol,
            schedule.sinkhorn_max_iter,
        )?;
        out.set_column_block(img * rpi, &soft);
    }
    Ok(out)
}

/// Iterated soft-assign: anneal `β` upward; at each temperature alternate
/// the cost update `C(M)` and per-image Sinkhorn soft assignment until `M`
/// settles. Returns the raw soft matrix; its rounding is in the report.
pub fn solve_isa<T: Scalar>(
    m0: &MatchingMatrix<T>,
    ctx: &CostContext<T>,
    schedule: &IsaSchedule<T>,
) -> Result<(MatchingMatrix<T>, SolverReport)> {
    schedule.validate()?;
    let start = Instant::now();
    let mut report = SolverReport::new("isa", TracedObjective::J);
    let rpi = m0.regions_per_image();
    let size = T::from_usize_lossy(m0.parts() * m0.positive_images());
    let inner_tol = schedule.inner_tol.unwrap_or(T::lit(1e-4) * size);
    let hard_tol = schedule.hard_tol.unwrap_or(inner_tol);
    let mut beta = match schedule.beta0 {
        Some(b) => b,
        None => {
            let c0 = ctx.cost_matrix(m0.values())?.max_abs();
            if c0 > T::zero() {
                T::one() / c0
            } else {
                T::one()
            }
        }
    };

    let (cap, cap_reason) = match schedule.early_stop_outer {
        Some(e) if e <= schedule.outer_max => (e, StopReason::EarlyStop),
        _ => (schedule.outer_max, StopReason::MaxIter),
    };
    report.stop_reason = cap_reason;

    let mut m = m0.clone();
    for _outer in 0..cap {
        beta *= schedule.beta_rate;
        for _inner in 0..schedule.inner_max {
            let cost = ctx.cost_matrix(m.values())?;
            let next = soft_assign_all(&cost, rpi, beta, schedule)?;
            let change = next.zip_map(m.values(), |a, b| a - b).frobenius_norm();
            m = MatchingMatrix::new(next, rpi)?;
            if change < inner_tol {
                break;
            }
        }
        report.record(ctx.objective_j(m.values())?, m.constraint_residual());
        let rounded = round_to_hard(&m)?;
        let gap = rounded
            .values()
            .zip_map(m.values(), |a, b| a - b)
            .frobenius_norm();
        if gap < hard_tol {
            report.stop_reason = StopReason::Converged;
            break;
        }
    }
    report.rounded_assignment = round_to_hard(&m)?.assignment();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}
