//! LDA statistics and the quadratic objective over matching matrices.
//!
//! With `X⁺` the `d × R⁺` positive descriptors and `Σ` the ridge-regularized
//! covariance, the similarity matrix is `C(M) = MA − B` where
//! `A = (1/n⁺)·X⁺ᵀΣ⁻¹X⁺` and `B = 1_P·μᵀΣ⁻¹X⁺`. `A` is `R⁺ × R⁺` and never
//! formed: every product goes through `P × d` intermediates, so a cost
//! evaluation is `O(P·d·R⁺)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TrainingCorpus;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::matching::PartModel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge<T> {
    /// Add exactly `λ·I`.
    Fixed(T),
    /// Add `f·trace(Σ)/d · I`.
    TraceFraction(T),
}

/// Denominator of the covariance estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceNormalization {
    /// `1/R`, the number of training regions.
    PerRegion,
    /// `1/n`, the number of training images. Scales `Σ` by `|R|`.
    PerImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentOptions<T> {
    pub ridge: Ridge<T>,
    pub normalization: CovarianceNormalization,
}

impl<T: Scalar> Default for MomentOptions<T> {
    fn default() -> Self {
        MomentOptions {
            ridge: Ridge::TraceFraction(T::lit(1e-2)),
            normalization: CovarianceNormalization::PerRegion,
        }
    }
}

/// Mean and factored, ridge-regularized covariance of all training regions.
#[derive(Clone, Debug)]
pub struct Moments<T> {
    mean: Vec<T>,
    covariance: Matrix<T>,
    factor: Cholesky<T>,
    ridge: T,
    whitened_mean: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    /// Moments over the regions of every training image, positive or negative.
    pub fn compute(corpus: &TrainingCorpus<T>, opts: &MomentOptions<T>) -> Result<Self> {
        let images = corpus.train_images().count();
        let regions: Vec<&[T]> = corpus
            .train_images()
            .flat_map(|(_, im)| im.descriptors.iter())
            .collect();
        Self::from_regions(corpus.dim, regions.into_iter(), images, opts)
    }

    /// `images` only matters for [`CovarianceNormalization::PerImage`].
    pub fn from_regions<'a>(
        dim: usize,
        regions: impl Iterator<Item = &'a [T]> + Clone,
        images: usize,
        opts: &MomentOptions<T>,
    ) -> Result<Self> {
        let mut mean = vec![T::zero(); dim];
        let mut count = 0usize;
        for x in regions.clone() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: x.len(),
                });
            }
            crate::linalg::axpy(T::one(), x, &mut mean);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput);
        }
        let inv_count = T::one() / T::from_usize_lossy(count);
        mean.iter_mut().for_each(|m| *m *= inv_count);

        let mut cov = Matrix::zeros(dim, dim);
        let mut centered = vec![T::zero(); dim];
        for x in regions {
            for ((c, &xi), &mi) in centered.iter_mut().zip(x).zip(&mean) {
                *c = xi - mi;
            }
            for i in 0..dim {
                let ci = centered[i];
                if ci == T::zero() {
                    continue;
                }
                let row = cov.row_mut(i);
                for j in 0..=i {
                    row[j] += ci * centered[j];
                }
            }
        }
        let denom = match opts.normalization {
            CovarianceNormalization::PerRegion => count,
            CovarianceNormalization::PerImage => images.max(1),
        };
        let inv = T::one() / T::from_usize_lossy(denom);
        for i in 0..dim {
            for j in 0..=i {
                let v = cov[(i, j)] * inv;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let trace: T = (0..dim).map(|i| cov[(i, i)]).sum();
        let ridge = match opts.ridge {
            Ridge::Fixed(l) => l,
            Ridge::TraceFraction(f) => f * trace / T::from_usize_lossy(dim),
        };
        if !(ridge >= T::zero()) {
            return Err(Error::InvalidOptions(format!(
                "ridge must be non-negative, got {ridge}"
            )));
        }
        for i in 0..dim {
            cov[(i, i)] += ridge;
        }
        let factor = Cholesky::new(&cov).ok_or(Error::NotPositiveDefinite {
            ridge: ridge.as_f64(),
        })?;
        let whitened_mean = factor.solve(&mean);
        Ok(Moments {
            mean,
            covariance: cov,
            factor,
            ridge,
            whitened_mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `μ`
    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// `Σ + λI`
    pub fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }

    pub fn factor(&self) -> &Cholesky<T> {
        &self.factor
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    /// `Σ⁻¹μ`
    pub fn whitened_mean(&self) -> &[T] {
        &self.whitened_mean
    }

    /// `Σ⁻¹v`
    pub fn solve(&self, v: &[T]) -> Vec<T> {
        self.factor.solve(v)
    }

    /// LDA direction `Σ⁻¹(class_mean − μ)`.
    pub fn lda_direction(&self, class_mean: &[T]) -> Vec<T> {
        let mut w = self.factor.solve(class_mean);
        for (wi, &mi) in w.iter_mut().zip(&self.whitened_mean) {
            *wi -= mi;
        }
        w
    }
}

/// Moments of all training regions with a fixed ridge `λ`.
pub fn compute_moments<T: Scalar>(corpus: &TrainingCorpus<T>, ridge: T) -> Result<Moments<T>> {
    Moments::compute(
        corpus,
        &MomentOptions {
            ridge: Ridge::Fixed(ridge),
            normalization: CovarianceNormalization::PerRegion,
        },
    )
}

/// Denominator used when turning a (possibly soft) row of `M` into a part mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartNormalization {
    /// Divide by the row sum `Σ_r m_pr`.
    RowSum,
    /// Divide by `n⁺`; equal to the row sum on `ℳ`.
    PositiveCount,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostOptions {
    pub normalization: PartNormalization,
    pub spectral_tol: f64,
    pub spectral_max_iter: usize,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            normalization: PartNormalization::RowSum,
            spectral_tol: 1e-10,
            spectral_max_iter: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate<T> {
    pub value: T,
    pub iterations: usize,
    /// `false` when the iteration cap was hit; `value` is then the last estimate.
    pub converged: bool,
}

/// Everything needed to evaluate costs, objectives and gradients for one category.
#[derive(Clone, Debug)]
pub struct CostContext<T> {
    moments: Arc<Moments<T>>,
    category: usize,
    regions_per_image: usize,
    positive_images: usize,
    /// `R⁺ × d`, row `r` is `x_r`.
    regions: Matrix<T>,
    /// `R⁺ × d`, row `r` is `Σ⁻¹x_r`.
    whitened: Matrix<T>,
    /// `μᵀΣ⁻¹X⁺`, the common row of `B`.
    b_row: Vec<T>,
    normalization: PartNormalization,
    spectral: SpectralEstimate<T>,
}

impl<T: Scalar> CostContext<T> {
    pub fn new(
        corpus: &TrainingCorpus<T>,
        category: usize,
        moments: Arc<Moments<T>>,
        opts: &CostOptions,
    ) -> Result<Self> {
        let positives = corpus.positives(category);
        if positives.is_empty() {
            return Err(Error::InvalidCorpus(format!(
                "category {category} has no positive training images"
            )));
        }
        let rpi = corpus.regions_per_image;
        let mut data = Vec::with_capacity(positives.len() * rpi * corpus.dim);
        for &i in &positives {
            data.extend_from_slice(corpus.images[i].descriptors.as_slice());
        }
        let regions = Matrix::from_vec(positives.len() * rpi, corpus.dim, data)?;
        Self::from_positive_regions(moments, regions, rpi, category, opts)
    }

    /// Builds a context from the positive descriptors directly (`R⁺ × d`, one region per row).
    pub fn from_positive_regions(
        moments: Arc<Moments<T>>,
        regions: Matrix<T>,
        regions_per_image: usize,
        category: usize,
        opts: &CostOptions,
    ) -> Result<Self> {
        if regions.cols() != moments.dim() {
            return Err(Error::DimensionMismatch {
                expected: moments.dim(),
                actual: regions.cols(),
            });
        }
        if regions_per_image == 0
            || !regions.rows().is_multiple_of(regions_per_image)
            || regions.rows() == 0
        {
            return Err(Error::Shape(format!(
                "{} regions do not form whole images of {regions_per_image}",
                regions.rows()
            )));
        }
        let mut whitened = Matrix::zeros(regions.rows(), regions.cols());
        let mut b_row = Vec::with_capacity(regions.rows());
        for r in 0..regions.rows() {
            let w = moments.solve(regions.row(r));
            whitened.row_mut(r).copy_from_slice(&w);
            b_row.push(dot(moments.whitened_mean(), regions.row(r)));
        }
        let mut ctx = CostContext {
            positive_images: regions.rows() / regions_per_image,
            moments,
            category,
            regions_per_image,
            regions,
            whitened,
            b_row,
            normalization: opts.normalization,
            spectral: SpectralEstimate {
                value: T::zero(),
                iterations: 0,
                converged: false,
            },
        };
        ctx.spectral = ctx.spectral_norm_a(opts.spectral_tol, opts.spectral_max_iter)?;
        if !ctx.spectral.converged {
            log::warn!(
                "power iteration for ‖A‖ hit its cap of {} iterations",
                opts.spectral_max_iter
            );
        }
        Ok(ctx)
    }

    pub fn moments(&self) -> &Moments<T> {
        &self.moments
    }

    pub fn category(&self) -> usize {
        self.category
    }

    pub fn regions_per_image(&self) -> usize {
        self.regions_per_image
    }

    /// `n⁺`
    pub fn positive_images(&self) -> usize {
        self.positive_images
    }

    /// `R⁺`
    pub fn positive_regions(&self) -> usize {
        self.regions.rows()
    }

    pub fn dim(&self) -> usize {
        self.regions.cols()
    }

    /// Positive descriptors, one region per row.
    pub fn regions(&self) -> &Matrix<T> {
        &self.regions
    }

    pub fn b_row(&self) -> &[T] {
        &self.b_row
    }

    pub fn normalization(&self) -> PartNormalization {
        self.normalization
    }

    /// Cached power-iteration estimate of `‖A‖`.
    pub fn norm_a(&self) -> T {
        self.spectral.value
    }

    pub fn spectral_estimate(&self) -> SpectralEstimate<T> {
        self.spectral
    }

    fn check_shape(&self, m: &Matrix<T>) -> Result<()> {
        if m.cols() != self.positive_regions() {
            return Err(Error::DimensionMismatch {
                expected: self.positive_regions(),
                actual: m.cols(),
            });
        }
        Ok(())
    }

    /// `M·X⁺ᵀ`: row `p` is `Σ_r m_pr x_r`.
    fn mix(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_shape(m)?;
        m.matmul(&self.regions)
    }

    fn row_denominators(&self, m: &Matrix<T>) -> Result<Vec<T>> {
        match self.normalization {
            PartNormalization::PositiveCount => {
                Ok(vec![T::from_usize_lossy(self.positive_images); m.rows()])
            }
            PartNormalization::RowSum => m
                .row_sums()
                .into_iter()
                .enumerate()
                .map(|(part, s)| {
                    if s == T::zero() || !s.is_finite() {
                        Err(Error::EmptyPart { part })
                    } else {
                        Ok(s)
                    }
                })
                .collect(),
        }
    }

    /// `W(M)`: `w_p = Σ⁻¹(X⁺m_pᵀ / s_p − μ)` with `s_p` per [`PartNormalization`].
    pub fn part_models(&self, m: &Matrix<T>) -> Result<PartModel<T>> {
        let mix = self.mix(m)?;
        let denoms = self.row_denominators(m)?;
        let mut weights = Matrix::zeros(m.rows(), self.dim());
        for (p, &s) in denoms.iter().enumerate() {
            let mean: Vec<T> = mix.row(p).iter().map(|&v| v / s).collect();
            weights
                .row_mut(p)
                .copy_from_slice(&self.moments.lda_direction(&mean));
        }
        PartModel::new(weights, self.category)
    }

    /// `C(M) = W(M)ᵀX⁺`, evaluated in factored order.
    pub fn cost_matrix(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        let mix = self.mix(m)?;
        let denoms = self.row_denominators(m)?;
        let mut c = mix.matmul_transposed(&self.whitened)?;
        for (p, &s) in denoms.iter().enumerate() {
            let inv = T::one() / s;
            for (v, &b) in c.row_mut(p).iter_mut().zip(&self.b_row) {
                *v = *v * inv - b;
            }
        }
        Ok(c)
    }

    /// `M·A`
    pub fn times_a(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        let mix = self.mix(m)?;
        let inv = T::one() / T::from_usize_lossy(self.positive_images);
        Ok(mix.matmul_transposed(&self.whitened)?.scale(inv))
    }

    /// `⟨M, B⟩`
    fn dot_b(&self, m: &Matrix<T>) -> T {
        (0..m.rows()).map(|p| dot(m.row(p), &self.b_row)).sum()
    }

    /// `⟨M, MA⟩ = (1/n⁺)·Σ_p ‖L⁻¹X⁺m_pᵀ‖²`
    fn quadratic(&self, m: &Matrix<T>) -> Result<T> {
        let mix = self.mix(m)?;
        let mut total = T::zero();
        for p in 0..mix.rows() {
            let mut y = mix.row(p).to_vec();
            self.moments.factor().solve_lower_in_place(&mut y);
            total += dot(&y, &y);
        }
        Ok(total / T::from_usize_lossy(self.positive_images))
    }

    /// `J₀(M) = ⟨M, B − MA⟩`
    pub fn objective_j0(&self, m: &Matrix<T>) -> Result<T> {
        let q = self.quadratic(m)?;
        Ok(self.dot_b(m) - q)
    }

    /// `J(M) = ⟨M, MA − B⟩ = −J₀(M)`, the score maximized by the ascent solvers.
    pub fn objective_j(&self, m: &Matrix<T>) -> Result<T> {
        Ok(-self.objective_j0(m)?)
    }

    /// `J_ρ(M) = J₀(M) + ρ‖M‖²_F`
    pub fn objective_jrho(&self, m: &Matrix<T>, rho: T) -> Result<T> {
        Ok(self.objective_j0(m)? + rho * m.frobenius_norm_sq())
    }

    /// `∇J_ρ(M) = 2M(ρI − A) + B`
    pub fn gradient_jrho(&self, m: &Matrix<T>, rho: T) -> Result<Matrix<T>> {
        let ma = self.times_a(m)?;
        let two = T::lit(2.0);
        let mut g = Matrix::zeros(m.rows(), m.cols());
        for p in 0..m.rows() {
            let (mr, ar, gr) = (m.row(p), ma.row(p), g.row_mut(p));
            for r in 0..mr.len() {
                gr[r] = two * (rho * mr[r] - ar[r]) + self.b_row[r];
            }
        }
        Ok(g)
    }

    /// `A·v` for a vector of length `R⁺`.
    pub fn apply_a(&self, v: &[T]) -> Vec<T> {
        let mut u = vec![T::zero(); self.dim()];
        for (r, &vr) in v.iter().enumerate() {
            if vr != T::zero() {
                crate::linalg::axpy(vr, self.regions.row(r), &mut u);
            }
        }
        let inv = T::one() / T::from_usize_lossy(self.positive_images);
        (0..self.positive_regions())
            .map(|r| dot(self.whitened.row(r), &u) * inv)
            .collect()
    }

    /// Largest eigenvalue of `A` by power iteration on the factored operator.
    /// Stops once the Rayleigh quotient changes by less than `tol` relatively.
    pub fn spectral_norm_a(&self, tol: f64, max_iter: usize) -> Result<SpectralEstimate<T>> {
        if !(tol > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "power iteration tolerance must be positive, got {tol}"
            )));
        }
        let n = self.positive_regions();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a11a);
        let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(0.5..1.5))).collect();
        normalize(&mut v);
        let tol = T::lit(tol);
        let mut estimate = T::zero();
        for it in 1..=max_iter {
            let w = self.apply_a(&v);
            let rayleigh = dot(&v, &w);
            let wn = crate::linalg::norm(&w);
            if wn == T::zero() {
                return Ok(SpectralEstimate {
                    value: T::zero(),
                    iterations: it,
                    converged: true,
                });
            }
            let change = (rayleigh - estimate).abs();
            estimate = rayleigh;
            v = w;
            normalize(&mut v);
            if it > 1 && change <= tol * estimate.abs() {
                return Ok(SpectralEstimate {
                    value: estimate,
                    iterations: it,
                    converged: true,
                });
            }
        }
        Ok(SpectralEstimate {
            value: estimate,
            iterations: max_iter,
            converged: false,
        })
    }

    /// Dense `A`. Quadratic in `R⁺`; meant for small instances and checks.
    pub fn materialize_a(&self) -> Matrix<T> {
        let inv = T::one() / T::from_usize_lossy(self.positive_images);
        self.regions
            .matmul_transposed(&self.whitened)
            .expect("matching widths")
            .scale(inv)
    }

    /// Dense `B` with `parts` identical rows.
    pub fn materialize_b(&self, parts: usize) -> Matrix<T> {
        Matrix::from_fn(parts, self.positive_regions(), |_, r| self.b_row[r])
    }
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = crate::linalg::norm(v);
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
