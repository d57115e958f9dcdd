use std::time::Instant;

use super::{round_to_hard, SolverReport, StopReason, TracedObjective};
use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::matching::MatchingMatrix;
use crate::projection::{
    project_capped_sum_in_place, project_halfspace_sum_in_place, project_simplex_into,
};
use crate::scalar::Scalar;

/// A parameter given either directly or as a multiple of `‖A‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient<T> {
    Absolute(T),
    TimesNormA(T),
}

impl<T: Scalar> Coefficient<T> {
    pub fn resolve(self, norm_a: T) -> T {
        match self {
            Coefficient::Absolute(v) => v,
            Coefficient::TimesNormA(f) => f * norm_a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfbOptions<T> {
    /// Quadratic regularization `ρ ≥ 0`.
    pub rho: Coefficient<T>,
    /// Gradient step control `L > 0`; the forward step is `1/L`.
    pub step: Coefficient<T>,
    pub max_iter: usize,
    /// Stop when the largest entry change of both auxiliary copies falls
    /// below this. `M` alone can stall while the copies drift apart.
    pub residual_tol: T,
    /// Project region columns onto `{x ≥ 0, Σx ≤ 1}` rather than `{Σx ≤ 1}`.
    /// Both splittings have the same intersection; with the bare halfspace the
    /// column copy is unbounded and the default step diverges.
    pub nonnegative_columns: bool,
}

impl<T: Scalar> Default for GfbOptions<T> {
    fn default() -> Self {
        Self::gfb()
    }
}

impl<T: Scalar> GfbOptions<T> {
    /// `ρ = 0`, `L = ‖A‖/10`, 2000 iterations, non-negative column copy.
    pub fn gfb() -> Self {
        GfbOptions {
            rho: Coefficient::TimesNormA(T::zero()),
            step: Coefficient::TimesNormA(T::lit(0.1)),
            max_iter: 2000,
            residual_tol: T::lit(1e-6),
            nonnegative_columns: true,
        }
    }

    /// As [`GfbOptions::gfb`] with `ρ = 10⁻³·‖A‖`.
    pub fn gfb_rho() -> Self {
        GfbOptions {
            rho: Coefficient::TimesNormA(T::lit(1e-3)),
            ..Self::gfb()
        }
    }
}

/// Generalized forward-backward splitting for `min_{M∈𝒮} J_ρ(M)`.
///
/// Two auxiliary copies carry the row constraints (each per-image segment of
/// a part row on the probability simplex) and the column constraints (each
/// region column summing to at most one); `M` is their average.
pub fn solve_gfb<T: Scalar>(
    m0: &MatchingMatrix<T>,
    ctx: &CostContext<T>,
    opts: &GfbOptions<T>,
) -> Result<(MatchingMatrix<T>, SolverReport)> {
    let norm_a = ctx.norm_a();
    let rho = opts.rho.resolve(norm_a);
    let lip = opts.step.resolve(norm_a);
    if !(rho >= T::zero()) {
        return Err(Error::InvalidOptions(format!(
            "ρ must be non-negative, got {rho}"
        )));
    }
    if !(lip > T::zero()) {
        return Err(Error::InvalidOptions(format!(
            "L must be positive, got {lip}"
        )));
    }
    let start = Instant::now();
    let mut report = SolverReport::new("gfb", TracedObjective::JRho);
    let rpi = m0.regions_per_image();
    let (parts, cols) = m0.values().shape();
    let images = cols / rpi;
    let step = T::one() / lip;
    let two = T::lit(2.0);
    let half = T::lit(0.5);

    let mut m = m0.values().clone();
    let mut m1 = m.clone();
    let mut m2 = m.clone();
    let mut arg = vec![T::zero(); rpi];
    let mut seg_out = vec![T::zero(); rpi];
    let mut column = vec![T::zero(); parts];

    for it in 0..opts.max_iter {
        let mut shift = T::zero();
        let grad = ctx.gradient_jrho(&m, rho)?;
        if !grad.is_finite() {
            return Err(Error::Diverged {
                solver: "gfb".into(),
                iteration: it,
            });
        }

        for p in 0..parts {
            for img in 0..images {
                let base = img * rpi;
                for k in 0..rpi {
                    let j = base + k;
                    arg[k] = two * m[(p, j)] - m1[(p, j)] - step * grad[(p, j)];
                }
                project_simplex_into(&arg, &mut seg_out);
                for k in 0..rpi {
                    let j = base + k;
                    let delta = seg_out[k] - m[(p, j)];
                    shift = shift.max(delta.abs());
                    m1[(p, j)] += delta;
                }
            }
        }

        for r in 0..cols {
            for p in 0..parts {
                column[p] = two * m[(p, r)] - m2[(p, r)] - step * grad[(p, r)];
            }
            if opts.nonnegative_columns {
                project_capped_sum_in_place(&mut column);
            } else {
                project_halfspace_sum_in_place(&mut column);
            }
            for p in 0..parts {
                let delta = column[p] - m[(p, r)];
                shift = shift.max(delta.abs());
                m2[(p, r)] += delta;
            }
        }

        m = m1.zip_map(&m2, |a, b| half * (a + b));
        let mm = MatchingMatrix::new(m.clone(), rpi)?;
        report.record(ctx.objective_jrho(&m, rho)?, mm.constraint_residual());
        if shift < opts.residual_tol {
            report.stop_reason = StopReason::Converged;
            break;
        }
    }
    let out = MatchingMatrix::new(m, rpi)?;
    report.rounded_assignment = round_to_hard(&out)?.assignment();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((out, report))
}
