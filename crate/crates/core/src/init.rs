//! Initial matching from clustered positive regions.
//!
//! Positive regions are clustered with k-means; every cluster yields an LDA
//! classifier. Clusters are ranked by how much more strongly they fire on
//! positive images than on negative ones, the best `P` become the initial
//! parts, and `M₀` is a softmax of their region responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingCorpus;
use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::matching::MatchingMatrix;
use crate::scalar::Scalar;

/// Below this a negative score makes the ratio ranking meaningless.
const RATIO_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    /// Each part row is normalized over the regions of every image.
    RegionsPerImage,
    /// Each region column is normalized over the parts.
    PartsPerRegion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions<T> {
    /// k-means cluster count `K`; defaults to `5·P`.
    pub clusters: Option<usize>,
    /// Softmax temperature `τ` applied to per-cluster z-scored responses.
    pub temperature: T,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub seed: u64,
    pub axis: SoftmaxAxis,
}

impl<T: Scalar> Default for InitOptions<T> {
    fn default() -> Self {
        InitOptions {
            clusters: None,
            temperature: T::one(),
            kmeans_restarts: 3,
            kmeans_max_iter: 100,
            seed: 0,
            axis: SoftmaxAxis::RegionsPerImage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingRule {
    /// `s⁺/s⁻`
    Ratio,
    /// `s⁺ − s⁻`, used when some `s⁻` is not safely positive.
    Difference,
}

#[derive(Clone, Debug)]
pub struct Initialization<T> {
    pub matching: MatchingMatrix<T>,
    /// Cluster indices kept as parts, best first.
    pub selected: Vec<usize>,
    /// Mean over positive images of the max cluster response, per surviving cluster.
    pub positive_scores: Vec<T>,
    pub negative_scores: Vec<T>,
    pub ranking: RankingRule,
    /// Non-empty clusters after k-means.
    pub clusters_kept: usize,
}

pub struct KMeans<T> {
    pub centroids: Matrix<T>,
    pub labels: Vec<usize>,
    pub sse: T,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(x: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for c in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<T: Scalar>(points: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)).as_f64())
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)).as_f64());
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds; best of `restarts` by within-cluster SSE.
pub fn kmeans<T: Scalar>(
    points: &Matrix<T>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeans<T>> {
    let n = points.rows();
    if n == 0 || k == 0 {
        return Err(Error::EmptyInput);
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans<T>> = None;
    for _ in 0..restarts.max(1) {
        let mut centroids = seed_plus_plus(points, k, &mut rng);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..max_iter.max(1) {
            let mut changed = false;
            for i in 0..n {
                let (c, _) = nearest(points.row(i), &centroids);
                if labels[i] != c {
                    labels[i] = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = Matrix::zeros(k, points.cols());
            let mut counts = vec![0usize; k];
            for (i, &c) in labels.iter().enumerate() {
                counts[c] += 1;
                crate::linalg::axpy(T::one(), points.row(i), sums.row_mut(c));
            }
            for c in 0..k {
                // An empty cluster keeps its old centroid and is dropped later.
                if counts[c] > 0 {
                    let inv = T::one() / T::from_usize_lossy(counts[c]);
                    for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = s * inv;
                    }
                }
            }
        }
        let sse: T = (0..n)
            .map(|i| sq_dist(points.row(i), centroids.row(labels[i])))
            .sum();
        if best.as_ref().is_none_or(|b| sse < b.sse) {
            best = Some(KMeans {
                centroids,
                labels,
                sse,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn max_response<T: Scalar>(w: &[T], corpus: &TrainingCorpus<T>, image: usize) -> T {
    corpus.images[image]
        .descriptors
        .iter()
        .map(|x| dot(w, x))
        .fold(T::neg_infinity(), T::max)
}

fn mean_max_response<T: Scalar>(w: &[T], corpus: &TrainingCorpus<T>, images: &[usize]) -> T {
    if images.is_empty() {
        return T::zero();
    }
    let total: T = images.iter().map(|&i| max_response(w, corpus, i)).sum();
    total / T::from_usize_lossy(images.len())
}

fn softmax_in_place<T: Scalar>(v: &mut [T], temperature: T) {
    let top = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = ((*x - top) / temperature).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Builds the initial soft matching `M₀` for `category` with `parts` parts.
pub fn initialize_parts<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    category: usize,
    parts: usize,
    opts: &InitOptions<T>,
    ctx: &CostContext<T>,
) -> Result<Initialization<T>> {
    let k = opts.clusters.unwrap_or(5 * parts);
    if parts == 0 {
        return Err(Error::InvalidOptions(
            "at least one part is required".into(),
        ));
    }
    if k < parts {
        return Err(Error::InvalidOptions(format!(
            "cluster count {k} is below the part count {parts}"
        )));
    }
    if !(opts.temperature > T::zero()) {
        return Err(Error::InvalidOptions(format!(
            "softmax temperature must be positive, got {}",
            opts.temperature
        )));
    }
    if parts > ctx.regions_per_image() {
        return Err(Error::InfeasibleAssignment {
            parts,
            regions: ctx.regions_per_image(),
        });
    }
    let points = ctx.regions();
    let km = kmeans(
        points,
        k,
        opts.kmeans_restarts,
        opts.kmeans_max_iter,
        opts.seed,
    )?;

    let mut counts = vec![0usize; km.centroids.rows()];
    km.labels.iter().for_each(|&c| counts[c] += 1);
    let surviving: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if surviving.len() < parts {
        return Err(Error::TooFewClusters {
            survived: surviving.len(),
            needed: parts,
        });
    }

    let positives = corpus.positives(category);
    let negatives = corpus.negatives(category);
    let moments = ctx.moments();
    let directions: Vec<Vec<T>> = surviving
        .iter()
        .map(|&c| moments.lda_direction(km.centroids.row(c)))
        .collect();
    let pos: Vec<T> = directions
        .iter()
        .map(|w| mean_max_response(w, corpus, &positives))
        .collect();
    let neg: Vec<T> = directions
        .iter()
        .map(|w| mean_max_response(w, corpus, &negatives))
        .collect();

    let guard = T::lit(RATIO_GUARD);
    let ranking = if neg.iter().all(|&s| s > guard) {
        RankingRule::Ratio
    } else {
        RankingRule::Difference
    };
    let key = |i: usize| match ranking {
        RankingRule::Ratio => pos[i] / neg[i],
        RankingRule::Difference => pos[i] - neg[i],
    };
    let mut order: Vec<usize> = (0..surviving.len()).collect();
    order.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.truncate(parts);

    let rpi = ctx.regions_per_image();
    let mut m0 = Matrix::zeros(parts, ctx.positive_regions());
    for (p, &i) in order.iter().enumerate() {
        let w = &directions[i];
        let row = m0.row_mut(p);
        for (r, v) in row.iter_mut().enumerate() {
            *v = dot(w, points.row(r));
        }
        standardize(row);
    }
    match opts.axis {
        SoftmaxAxis::RegionsPerImage => {
            for p in 0..parts {
                for seg in m0.row_mut(p).chunks_exact_mut(rpi) {
                    softmax_in_place(seg, opts.temperature);
                }
            }
        }
        SoftmaxAxis::PartsPerRegion => {
            let mut col = vec![T::zero(); parts];
            for r in 0..m0.cols() {
                for p in 0..parts {
                    col[p] = m0[(p, r)];
                }
                softmax_in_place(&mut col, opts.temperature);
                for p in 0..parts {
                    m0[(p, r)] = col[p];
                }
            }
        }
    }

    Ok(Initialization {
        matching: MatchingMatrix::new(m0, rpi)?,
        selected: order.iter().map(|&i| surviving[i]).collect(),
        positive_scores: pos,
        negative_scores: neg,
        ranking,
        clusters_kept: surviving.len(),
    })
}

fn standardize<T: Scalar>(v: &mut [T]) {
    let n = T::from_usize_lossy(v.len());
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let sd = if var > T::zero() {
        var.sqrt()
    } else {
        T::one()
    };
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            rows.push(vec![e, -e]);
            rows.push(vec![10.0 + e, 10.0 - e]);
        }
        let points = Matrix::from_rows(&rows).unwrap();
        let km = kmeans(&points, 2, 3, 50, 7).unwrap();
        for i in (0..20).step_by(2) {
            assert_eq!(km.labels[i], km.labels[0]);
            assert_eq!(km.labels[i + 1], km.labels[1]);
        }
        assert_ne!(km.labels[0], km.labels[1]);
        let again = kmeans(&points, 2, 3, 50, 7).unwrap();
        assert_eq!(km.labels, again.labels);
        assert_eq!(km.centroids, again.centroids);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1.0, 2.0, 3.0];
        softmax_in_place(&mut v, 1.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut v = vec![1.0, 2.0, 3.0];
        softmax_in_place(&mut v, 1e-6);
        assert_eq!(v, vec![0.0, 0.0, 1.0]);
    }
}
