//! Centering plus PCA, used to compress CoP encodings.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_PCA_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `k × D`, orthonormal rows, strongest first.
    pub components: Matrix<T>,
    /// Variance captured by each component.
    pub variances: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    /// Fits on `samples` and keeps `min(requested, rank)` components.
    ///
    /// Works on the `n × n` Gram matrix when there are fewer samples than
    /// dimensions, otherwise on the `D × D` covariance.
    pub fn fit(samples: &[Vec<T>], requested: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidOptions(format!(
                "PCA needs at least 2 samples, got {n}"
            )));
        }
        let dim = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let mut mean = vec![T::zero(); dim];
        for s in samples {
            crate::linalg::axpy(T::one(), s, &mut mean);
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let centered = Matrix::from_fn(n, dim, |i, j| samples[i][j] - mean[j]);

        let (values, vectors) = if n <= dim {
            let gram = centered.matmul_transposed(&centered)?;
            let eig = symmetric_eigen(&gram)?;
            let mut comps = Vec::with_capacity(n);
            for k in 0..n {
                let lambda = eig.values[k];
                if !(lambda > T::zero()) {
                    comps.push(vec![T::zero(); dim]);
                    continue;
                }
                let v = eig.vectors.column(k);
                let mut u = vec![T::zero(); dim];
                for (i, &vi) in v.iter().enumerate() {
                    crate::linalg::axpy(vi, centered.row(i), &mut u);
                }
                let un = norm(&u);
                u.iter_mut().for_each(|x| *x /= un);
                comps.push(u);
            }
            (eig.values, comps)
        } else {
            let cov = centered.transpose().matmul(&centered)?;
            let eig = symmetric_eigen(&cov)?;
            let comps = (0..dim).map(|k| eig.vectors.column(k)).collect();
            (eig.values, comps)
        };

        let top = values.first().copied().unwrap_or(T::zero());
        if !(top > T::zero()) {
            return Err(Error::ZeroVariance);
        }
        let cutoff = top * T::lit(1e-10);
        let rank = values.iter().take_while(|&&l| l > cutoff).count();
        let keep = requested.min(rank).max(1);
        let mut rows = Vec::with_capacity(keep);
        for comp in vectors.into_iter().take(keep) {
            let mut u = comp;
            // Sign convention: largest-magnitude coordinate positive.
            let lead = u
                .iter()
                .copied()
                .fold(T::zero(), |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < T::zero() {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            rows.push(u);
        }
        Ok(PcaModel {
            mean,
            components: Matrix::from_rows(&rows)?,
            variances: values[..keep].iter().map(|&l| l * inv_n).collect(),
        })
    }

    pub fn retained(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates of the centered sample in the component basis.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let centered: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        Ok((0..self.retained())
            .map(|k| dot(self.components.row(k), &centered))
            .collect())
    }

    /// Centered, projected and unit ℓ2-normalized.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = self.project(x)?;
        let n = norm(&y);
        if n > T::zero() {
            y.iter_mut().for_each(|v| *v /= n);
        }
        Ok(y)
    }

    pub fn reconstruct(&self, coords: &[T]) -> Vec<T> {
        let mut out = self.mean.clone();
        for (k, &c) in coords.iter().enumerate() {
            crate::linalg::axpy(c, self.components.row(k), &mut out);
        }
        out
    }
}

/// Fits the PCoP projection on training CoP encodings.
pub fn fit_pcop<T: Scalar>(train: &[Vec<T>], requested: usize) -> Result<PcaModel<T>> {
    PcaModel::fit(train, requested)
}

/// Applies a fitted PCoP projection.
pub fn apply_pcop<T: Scalar>(encoding: &[T], model: &PcaModel<T>) -> Result<Vec<T>> {
    model.apply(encoding)
}
