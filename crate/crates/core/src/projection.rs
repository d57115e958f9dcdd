//! Projection primitives shared by the solvers.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matching::MatchingMatrix;
use crate::scalar::Scalar;

/// Euclidean projection onto the probability simplex `{x ≥ 0, Σx = 1}`.
///
/// Sort-based: the output is `max(v − θ, 0)` with `θ` found from the sorted
/// prefix sums.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    project_simplex_into(v, &mut out);
    out
}

pub fn project_simplex_into<T: Scalar>(v: &[T], out: &mut [T]) {
    assert!(!v.is_empty(), "simplex projection of an empty vector");
    debug_assert_eq!(v.len(), out.len());
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut prefix = T::zero();
    let mut theta = T::zero();
    for (k, &u) in sorted.iter().enumerate() {
        prefix += u;
        let candidate = (prefix - T::one()) / T::from_usize_lossy(k + 1);
        if u - candidate > T::zero() {
            theta = candidate;
        } else {
            break;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - theta).max(T::zero());
    }
}

/// Euclidean projection onto the halfspace `{x : Σx ≤ 1}`. No sign constraint.
pub fn project_halfspace_sum<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    project_halfspace_sum_in_place(&mut out);
    out
}

pub fn project_halfspace_sum_in_place<T: Scalar>(v: &mut [T]) {
    let s: T = v.iter().copied().sum();
    if s > T::one() {
        let shift = (s - T::one()) / T::from_usize_lossy(v.len());
        v.iter_mut().for_each(|x| *x -= shift);
    }
}

/// Euclidean projection onto `{x ≥ 0, Σx ≤ 1}`.
pub fn project_capped_sum_in_place<T: Scalar>(v: &mut [T]) {
    let clipped_sum: T = v.iter().map(|&x| x.max(T::zero())).sum();
    if clipped_sum <= T::one() {
        v.iter_mut().for_each(|x| *x = x.max(T::zero()));
    } else {
        let projected = project_simplex(v);
        v.copy_from_slice(&projected);
    }
}

/// Rectangular maximum-weight assignment: returns, for each row, the column it
/// takes, maximizing the total score with every row matched exactly once and
/// every column at most once.
///
/// Shortest-augmenting-path Hungarian method on the `rows × cols` matrix
/// (`rows ≤ cols`), `O(rows²·cols)`. Rows are inserted in order and ties are
/// resolved towards the lowest column index of the scan.
pub fn max_weight_assignment<T: Scalar>(scores: &Matrix<T>) -> Result<Vec<usize>> {
    let (n, m) = scores.shape();
    if n > m {
        return Err(Error::InfeasibleAssignment {
            parts: n,
            regions: m,
        });
    }
    if !scores.is_finite() {
        return Err(Error::Shape("assignment scores must be finite".into()));
    }
    let inf = T::infinity();
    // 1-based rows/columns; column 0 is the virtual root of each search.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = scores.row(i0 - 1);
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = -row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Binary `P × |R|` block maximizing `⟨M_I, C_I⟩` over partial assignments.
pub fn project_partial_assignment<T: Scalar>(block: &Matrix<T>) -> Result<Matrix<T>> {
    let cols = max_weight_assignment(block)?;
    let mut out = Matrix::zeros(block.rows(), block.cols());
    for (p, &r) in cols.iter().enumerate() {
        out[(p, r)] = T::one();
    }
    Ok(out)
}

/// `argmax_{M ∈ ℳ} ⟨M, C⟩`. The constraints of `ℳ` decouple over images, so
/// each `P × |R|` block is solved on its own.
pub fn project_matching<T: Scalar>(
    scores: &Matrix<T>,
    regions_per_image: usize,
) -> Result<MatchingMatrix<T>> {
    if regions_per_image == 0 || !scores.cols().is_multiple_of(regions_per_image) {
        return Err(Error::Shape(format!(
            "{} columns do not split into image blocks of {regions_per_image} regions",
            scores.cols()
        )));
    }
    let images = scores.cols() / regions_per_image;
    let mut assignment = Vec::with_capacity(images);
    for img in 0..images {
        let block = scores.column_block(img * regions_per_image, regions_per_image);
        assignment.push(max_weight_assignment(&block)?);
    }
    MatchingMatrix::from_assignment(scores.rows(), regions_per_image, &assignment)
}
