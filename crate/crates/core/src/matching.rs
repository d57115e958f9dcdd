//! Matching matrices between parts and positive-image regions, and the
//! part models they induce.
//!
//! A matching matrix `M` is `P × R⁺`: row `p` is a part, column `r` a region
//! of a positive image. Columns are grouped in per-image blocks of width
//! `|R|`. The hard set `ℳ` asks every block to be a partial assignment (each
//! part takes exactly one region of each image, each region serves at most
//! one part); the relaxed set `𝒮` is its convex hull.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingMatrix<T> {
    values: Matrix<T>,
    regions_per_image: usize,
    mode: Mode,
}

impl<T: Scalar> MatchingMatrix<T> {
    /// Wraps `values` as a soft matching matrix.
    pub fn new(values: Matrix<T>, regions_per_image: usize) -> Result<Self> {
        if regions_per_image == 0 || !values.cols().is_multiple_of(regions_per_image) {
            return Err(Error::Shape(format!(
                "{} columns do not split into image blocks of {regions_per_image} regions",
                values.cols()
            )));
        }
        Ok(MatchingMatrix {
            values,
            regions_per_image,
            mode: Mode::Soft,
        })
    }

    /// Wraps `values` as a hard matching matrix; fails unless `values ∈ ℳ`.
    pub fn new_hard(values: Matrix<T>, regions_per_image: usize) -> Result<Self> {
        let mut m = Self::new(values, regions_per_image)?;
        if !m.in_m() {
            return Err(Error::Shape(
                "matrix is not a per-image partial assignment".into(),
            ));
        }
        m.mode = Mode::Hard;
        Ok(m)
    }

    /// Builds a hard matrix from `assignment[image][part] = region`.
    pub fn from_assignment(
        parts: usize,
        regions_per_image: usize,
        assignment: &[Vec<usize>],
    ) -> Result<Self> {
        let mut values = Matrix::zeros(parts, assignment.len() * regions_per_image);
        for (img, regions) in assignment.iter().enumerate() {
            if regions.len() != parts {
                return Err(Error::DimensionMismatch {
                    expected: parts,
                    actual: regions.len(),
                });
            }
            for (p, &r) in regions.iter().enumerate() {
                if r >= regions_per_image {
                    return Err(Error::Shape(format!(
                        "region {r} out of range for {regions_per_image} regions per image"
                    )));
                }
                values[(p, img * regions_per_image + r)] = T::one();
            }
        }
        Self::new_hard(values, regions_per_image)
    }

    /// Every entry `1/|R|`: rows sum to one on every image.
    pub fn uniform(parts: usize, positive_images: usize, regions_per_image: usize) -> Self {
        let v = T::one() / T::from_usize_lossy(regions_per_image);
        MatchingMatrix {
            values: Matrix::filled(parts, positive_images * regions_per_image, v),
            regions_per_image,
            mode: Mode::Soft,
        }
    }

    #[inline]
    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    #[inline]
    pub fn mode(&self) -> Mode {
        self.mode
    }

    #[inline]
    pub fn parts(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn regions_per_image(&self) -> usize {
        self.regions_per_image
    }

    /// `n⁺`
    #[inline]
    pub fn positive_images(&self) -> usize {
        self.values.cols() / self.regions_per_image
    }

    /// Row `p` of image block `image`.
    pub fn block_row(&self, p: usize, image: usize) -> &[T] {
        let start = image * self.regions_per_image;
        &self.values.row(p)[start..start + self.regions_per_image]
    }

    /// The `P × |R|` block `M_I`.
    pub fn block(&self, image: usize) -> Matrix<T> {
        self.values
            .column_block(image * self.regions_per_image, self.regions_per_image)
    }

    /// Membership in `ℳ`: binary entries, column sums ≤ 1, per-image row sums = 1.
    pub fn in_m(&self) -> bool {
        let binary = self
            .values
            .as_slice()
            .iter()
            .all(|&v| v == T::zero() || v == T::one());
        binary && self.max_column_excess() <= T::zero() && self.max_row_deviation() == T::zero()
    }

    /// Membership in `𝒮` within tolerance `eps`.
    pub fn in_s(&self, eps: T) -> bool {
        self.max_box_violation() <= eps
            && self.max_column_excess() <= eps
            && self.max_row_deviation() <= eps
    }

    /// Largest `|Σ_r∈I m_pr − 1|` over parts and images.
    pub fn max_row_deviation(&self) -> T {
        let mut worst = T::zero();
        for p in 0..self.parts() {
            for img in 0..self.positive_images() {
                let s: T = self.block_row(p, img).iter().copied().sum();
                worst = worst.max((s - T::one()).abs());
            }
        }
        worst
    }

    /// Largest `max(Σ_p m_pr − 1, 0)` over regions.
    pub fn max_column_excess(&self) -> T {
        self.values
            .col_sums()
            .into_iter()
            .fold(T::zero(), |acc, s| acc.max(s - T::one()))
    }

    /// Largest distance of an entry to `[0, 1]`.
    pub fn max_box_violation(&self) -> T {
        self.values.as_slice().iter().fold(T::zero(), |acc, &v| {
            acc.max(T::zero() - v).max(v - T::one())
        })
    }

    /// Worst violation of any constraint defining `𝒮`.
    pub fn constraint_residual(&self) -> T {
        self.max_row_deviation()
            .max(self.max_column_excess())
            .max(self.max_box_violation())
    }

    /// For a hard matrix, `assignment[image][part] = region`.
    pub fn assignment(&self) -> Option<Vec<Vec<usize>>> {
        if !self.in_m() {
            return None;
        }
        Some(
            (0..self.positive_images())
                .map(|img| {
                    (0..self.parts())
                        .map(|p| {
                            self.block_row(p, img)
                                .iter()
                                .position(|&v| v == T::one())
                                .expect("hard row has a one")
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// LDA part classifiers of one category; `weights.row(p)` is `w_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartModel<T> {
    pub weights: Matrix<T>,
    pub category: usize,
}

impl<T: Scalar> PartModel<T> {
    pub fn new(weights: Matrix<T>, category: usize) -> Result<Self> {
        if weights.rows() == 0 {
            return Err(Error::Shape("part model needs at least one part".into()));
        }
        if !weights.is_finite() {
            return Err(Error::Shape("part model has non-finite weights".into()));
        }
        Ok(PartModel { weights, category })
    }

    pub fn parts(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn part(&self, p: usize) -> &[T] {
        self.weights.row(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mm(rows: &[Vec<f64>], rpi: usize) -> MatchingMatrix<f64> {
        MatchingMatrix::new(Matrix::from_rows(rows).unwrap(), rpi).unwrap()
    }

    #[test]
    fn in_m_examples() {
        assert!(mm(&[vec![1.0, 0.0]], 2).in_m());
        assert!(!mm(&[vec![1.0, 0.0], vec![1.0, 0.0]], 2).in_m());
        assert!(!mm(&[vec![0.5, 0.5]], 2).in_m());
    }

    #[test]
    fn in_s_examples() {
        assert!(mm(&[vec![0.5, 0.5]], 2).in_s(1e-9));
        assert!(!mm(&[vec![0.7, 0.7]], 2).in_s(1e-9));
        assert!(mm(&[vec![1.0, 0.0]], 2).in_s(0.0));
    }

    #[test]
    fn hard_constructor_rejects_soft() {
        assert!(
            MatchingMatrix::new_hard(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap(), 2).is_err()
        );
        assert!(MatchingMatrix::<f64>::new(Matrix::zeros(1, 3), 2).is_err());
    }

    #[test]
    fn assignment_round_trip() {
        let a = vec![vec![2, 0], vec![1, 3]];
        let m = MatchingMatrix::<f64>::from_assignment(2, 4, &a).unwrap();
        assert_eq!(m.mode(), Mode::Hard);
        assert_eq!(m.assignment().unwrap(), a);
        assert!(MatchingMatrix::<f64>::from_assignment(2, 4, &[vec![1, 1]]).is_err());
    }

    fn hard_matrix() -> impl Strategy<Value = (usize, usize, Vec<Vec<usize>>)> {
        (1usize..4, 0usize..3, 1usize..5).prop_flat_map(|(parts, extra, images)| {
            let rpi = parts + extra;
            let perms = proptest::collection::vec(
                Just((0..rpi).collect::<Vec<_>>()).prop_shuffle(),
                images,
            );
            (Just(parts), Just(rpi), perms)
        })
    }

    proptest! {
        #[test]
        fn hard_matrices_have_fixed_norm_and_lie_in_s((parts, rpi, perms) in hard_matrix()) {
            let assignment: Vec<Vec<usize>> =
                perms.iter().map(|p| p[..parts].to_vec()).collect();
            let m = MatchingMatrix::<f64>::from_assignment(parts, rpi, &assignment).unwrap();
            prop_assert!(m.in_m());
            prop_assert!(m.in_s(0.0));
            prop_assert_eq!(
                m.values().frobenius_norm_sq(),
                (parts * assignment.len()) as f64
            );
        }
    }
}
