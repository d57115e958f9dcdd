//! Entropic soft assignment of one image block by Sinkhorn balancing.
//!
//! A `P × |R|` block is padded with `|R| − P` dummy rows of constant cost so
//! the kernel is square, then rows and columns are normalized alternately.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

/// Above this value of `β·max|C|` balancing runs on log-potentials.
const LOG_DOMAIN_THRESHOLD: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct SinkhornResult<T> {
    /// The balanced `|R| × |R|` matrix, real rows first.
    pub padded: Matrix<T>,
    pub parts: usize,
    /// Balancing sweeps, including any restarted in log domain.
    pub iterations: usize,
    /// Newton steps taken after the sweeps stalled.
    pub newton_steps: usize,
    /// Largest `|row sum − 1|` at termination (columns are exact after a
    /// sweep); after Newton steps, the largest row or column error.
    pub max_deviation: T,
    pub converged: bool,
    pub log_domain: bool,
}

impl<T: Scalar> SinkhornResult<T> {
    /// The real `P × |R|` rows.
    pub fn block(&self) -> Matrix<T> {
        Matrix::from_fn(self.parts, self.padded.cols(), |i, j| self.padded[(i, j)])
    }
}

/// `min(C) − range(C)`: finite and below every real entry.
pub fn default_pad_value<T: Scalar>(block: &Matrix<T>) -> T {
    let (lo, hi) = block
        .as_slice()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    lo - (hi - lo)
}

/// Balanced padded kernel for `exp(β·C_I)`.
pub fn sinkhorn_padded<T: Scalar>(
    block: &Matrix<T>,
    beta: T,
    pad_value: Option<T>,
    tol: T,
    max_iter: usize,
) -> Result<SinkhornResult<T>> {
    let (parts, regions) = block.shape();
    if parts > regions {
        return Err(Error::InfeasibleAssignment { parts, regions });
    }
    if !(beta > T::zero()) {
        return Err(Error::InvalidOptions(format!(
            "β must be positive, got {beta}"
        )));
    }
    if !block.is_finite() {
        return Err(Error::Shape("Sinkhorn block must be finite".into()));
    }
    let pad = pad_value.unwrap_or_else(|| default_pad_value(block));
    let logits = Matrix::from_fn(regions, regions, |i, j| {
        beta * if i < parts { block[(i, j)] } else { pad }
    });
    let max_abs = block.max_abs().max(pad.abs());
    let spread = logits
        .as_slice()
        .iter()
        .fold(T::neg_infinity(), |a, &v| a.max(v))
        - logits
            .as_slice()
            .iter()
            .fold(T::infinity(), |a, &v| a.min(v));
    let threshold = T::lit(LOG_DOMAIN_THRESHOLD);
    let log_domain = beta * max_abs > threshold || spread > threshold;
    let mut result = if log_domain {
        balance_log(&logits, tol, max_iter)
    } else {
        balance_direct(&logits, tol, max_iter)
    };
    result.parts = parts;
    result.log_domain = log_domain;
    Ok(result)
}

/// Soft assignment of one `P × |R|` block: the real rows of [`sinkhorn_padded`].
pub fn sinkhorn_assign<T: Scalar>(
    block: &Matrix<T>,
    beta: T,
    pad_value: Option<T>,
    tol: T,
    max_iter: usize,
) -> Result<Matrix<T>> {
    Ok(sinkhorn_padded(block, beta, pad_value, tol, max_iter)?.block())
}

/// Plain sweeps allowed before switching to Newton steps on the potentials.
const SWEEPS_BEFORE_NEWTON: usize = 200;
const NEWTON_MAX_STEPS: usize = 100;

fn row_deviation<T: Scalar>(k: &Matrix<T>) -> T {
    k.row_sums()
        .into_iter()
        .fold(T::zero(), |a, s| a.max((s - T::one()).abs()))
}

/// Largest deviation of any row or column sum from one.
fn balance_error<T: Scalar>(k: &Matrix<T>) -> T {
    k.col_sums()
        .into_iter()
        .fold(row_deviation(k), |a, s| a.max((s - T::one()).abs()))
}

fn balance_direct<T: Scalar>(logits: &Matrix<T>, tol: T, max_iter: usize) -> SinkhornResult<T> {
    let top = logits
        .as_slice()
        .iter()
        .fold(T::neg_infinity(), |a, &v| a.max(v));
    let mut k = logits.map(|v| (v - top).exp());
    let n = k.rows();
    let budget = max_iter.min(SWEEPS_BEFORE_NEWTON);
    let mut iterations = 0;
    let mut deviation = T::infinity();
    while iterations < budget {
        iterations += 1;
        for i in 0..n {
            let s: T = k.row(i).iter().copied().sum();
            k.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let cols = k.col_sums();
        for i in 0..n {
            for (v, &c) in k.row_mut(i).iter_mut().zip(&cols) {
                *v /= c;
            }
        }
        deviation = row_deviation(&k);
        if deviation < tol {
            break;
        }
    }
    if deviation >= tol && budget < max_iter {
        // Slow to balance: start over on potentials, where Newton steps are available.
        let mut res = balance_log(logits, tol, max_iter);
        res.iterations += iterations;
        return res;
    }
    SinkhornResult {
        padded: k,
        parts: 0,
        iterations,
        newton_steps: 0,
        converged: deviation < tol,
        max_deviation: deviation,
        log_domain: false,
    }
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let top = values.clone().fold(T::neg_infinity(), |a, v| a.max(v));
    if top == T::neg_infinity() {
        return top;
    }
    top + values.map(|v| (v - top).exp()).sum::<T>().ln()
}

fn plan<T: Scalar>(logits: &Matrix<T>, f: &[T], g: &[T]) -> Matrix<T> {
    Matrix::from_fn(logits.rows(), logits.cols(), |i, j| {
        (logits[(i, j)] + f[i] + g[j]).exp()
    })
}

/// Sweeps on log-potentials `f`, `g` with `K_ij = exp(L_ij + f_i + g_j)`.
/// Sweeps that stall hand over to [`newton_polish`].
fn balance_log<T: Scalar>(logits: &Matrix<T>, tol: T, max_iter: usize) -> SinkhornResult<T> {
    let n = logits.rows();
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut iterations = 0;
    let mut newton_steps = 0;
    let mut deviation = T::infinity();
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let row = logits.row(i);
            f[i] = -log_sum_exp(row.iter().zip(&g).map(|(&l, &gj)| l + gj));
        }
        for j in 0..n {
            g[j] = -log_sum_exp((0..n).map(|i| logits[(i, j)] + f[i]));
        }
        deviation = T::zero();
        for i in 0..n {
            let s: T = logits
                .row(i)
                .iter()
                .zip(&g)
                .map(|(&l, &gj)| (l + f[i] + gj).exp())
                .sum();
            deviation = deviation.max((s - T::one()).abs());
        }
        if deviation < tol {
            break;
        }
        if iterations == SWEEPS_BEFORE_NEWTON {
            let (dev, steps) = newton_polish(logits, &mut f, &mut g, tol, NEWTON_MAX_STEPS);
            newton_steps = steps;
            deviation = dev;
            if deviation < tol {
                break;
            }
        }
    }
    let padded = plan(logits, &f, &g);
    if newton_steps > 0 {
        deviation = balance_error(&padded);
    }
    SinkhornResult {
        padded,
        parts: 0,
        iterations,
        newton_steps,
        converged: deviation < tol,
        max_deviation: deviation,
        log_domain: true,
    }
}

/// Damped Newton steps on the convex dual `Σ_ij K_ij − Σf − Σg`, whose
/// gradient is the vector of row and column sum errors. `g` of the last
/// column is held fixed to remove the shared shift of `f` and `g`.
/// Returns the final row/column error and the number of accepted steps.
fn newton_polish<T: Scalar>(
    logits: &Matrix<T>,
    f: &mut [T],
    g: &mut [T],
    tol: T,
    max_steps: usize,
) -> (T, usize) {
    let n = logits.rows();
    let m = 2 * n - 1;
    let mut k = plan(logits, f, g);
    let mut error = balance_error(&k);
    let mut steps = 0;
    let dual = |k: &Matrix<T>, f: &[T], g: &[T]| -> T {
        k.as_slice().iter().copied().sum::<T>()
            - f.iter().copied().sum::<T>()
            - g.iter().copied().sum::<T>()
    };
    while error >= tol && steps < max_steps {
        let rows = k.row_sums();
        let cols = k.col_sums();
        let mut grad = vec![T::zero(); m];
        for i in 0..n {
            grad[i] = rows[i] - T::one();
        }
        for j in 0..n - 1 {
            grad[n + j] = cols[j] - T::one();
        }
        let mut hessian = Matrix::from_fn(m, m, |a, b| match (a < n, b < n) {
            (true, true) if a == b => rows[a],
            (false, false) if a == b => cols[a - n],
            (true, false) => k[(a, b - n)],
            (false, true) => k[(b, a - n)],
            _ => T::zero(),
        });
        let mut jitter = T::lit(1e-14);
        let factor = loop {
            if let Some(c) = Cholesky::new(&hessian) {
                break Some(c);
            }
            if jitter > T::lit(1e-4) {
                break None;
            }
            for a in 0..m {
                hessian[(a, a)] += jitter;
            }
            jitter *= T::lit(100.0);
        };
        let Some(factor) = factor else { break };
        let mut dir = factor.solve(&grad);
        dir.iter_mut().for_each(|v| *v = -*v);
        let slope: T = grad.iter().zip(&dir).map(|(&a, &b)| a * b).sum();
        let base = dual(&k, f, g);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let tf: Vec<T> = (0..n).map(|i| f[i] + t * dir[i]).collect();
            let mut tg = g.to_vec();
            for j in 0..n - 1 {
                tg[j] += t * dir[n + j];
            }
            let tk = plan(logits, &tf, &tg);
            let value = dual(&tk, &tf, &tg);
            if value.is_finite() && value <= base + T::lit(1e-4) * t * slope {
                accepted = Some((tf, tg, tk));
                break;
            }
            t *= T::lit(0.5);
        }
        let Some((tf, tg, tk)) = accepted else { break };
        f.copy_from_slice(&tf);
        g.copy_from_slice(&tg);
        k = tk;
        error = balance_error(&k);
        steps += 1;
    }
    (error, steps)
}
