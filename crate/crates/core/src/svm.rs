//! One-vs-rest linear SVM (ℓ2 regularizer, hinge loss) trained by dual
//! coordinate descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    /// Value of the constant feature appended to every sample; its weight is the bias.
    pub bias_feature: f64,
    /// Stop once `primal − dual ≤ gap_tol · primal`.
    pub gap_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: 1.0,
            bias_feature: 1.0,
            gap_tol: 1e-4,
            max_epochs: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryStats {
    pub epochs: usize,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel<T> {
    /// `classes × D`.
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
    pub bias_feature: T,
    pub stats: Vec<BinaryStats>,
}

impl<T: Scalar> SvmModel<T> {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Raw decision value of every class.
    pub fn decision_values(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok((0..self.classes())
            .map(|k| dot(self.weights.row(k), x) + self.biases[k] * self.bias_feature)
            .collect())
    }

    /// `n × classes` decision values.
    pub fn decision_matrix(&self, samples: &[Vec<T>]) -> Result<Matrix<T>> {
        let rows = samples
            .iter()
            .map(|x| self.decision_values(x))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.classes()));
        }
        Matrix::from_rows(&rows)
    }

    /// Highest-scoring class, lowest index on ties.
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.decision_values(x)?))
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains one binary classifier per class in `0..classes`.
pub fn train_svm<T: Scalar>(
    samples: &[Vec<T>],
    labels: &[usize],
    classes: usize,
    opts: &SvmOptions,
) -> Result<SvmModel<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if samples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: labels.len(),
        });
    }
    if !(opts.c > 0.0) || !opts.bias_feature.is_finite() || !(opts.gap_tol > 0.0) {
        return Err(Error::InvalidOptions(format!("bad SVM options {opts:?}")));
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::InvalidOptions(format!(
                "label {l} outside 0..{classes}"
            )));
        }
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleClass);
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidOptions(format!(
            "class {missing} has no training examples"
        )));
    }

    let bias = T::lit(opts.bias_feature);
    let mut weights = Matrix::zeros(classes, dim);
    let mut biases = vec![T::zero(); classes];
    let mut stats = Vec::with_capacity(classes);
    for k in 0..classes {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == k { 1.0 } else { -1.0 })
            .collect();
        let (w, b, s) = train_binary(samples, &y, bias, opts);
        weights.row_mut(k).copy_from_slice(&w);
        biases[k] = b;
        stats.push(s);
    }
    Ok(SvmModel {
        weights,
        biases,
        bias_feature: bias,
        stats,
    })
}

/// Dual coordinate descent on
/// `min_α ½αᵀQα − Σα, 0 ≤ α ≤ C, Q_ij = y_i y_j x̂_iᵀx̂_j`,
/// with `x̂ = [x, bias]`. Accumulates in `f64` regardless of `T`.
fn train_binary<T: Scalar>(
    samples: &[Vec<T>],
    y: &[f64],
    bias: T,
    opts: &SvmOptions,
) -> (Vec<T>, T, BinaryStats) {
    let n = samples.len();
    let dim = samples[0].len();
    let xs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().map(|v| v.as_f64()).collect())
        .collect();
    let b = bias.as_f64();
    let qii: Vec<f64> = xs.iter().map(|x| dot(x, x) + b * b).collect();
    let c = opts.c;
    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; dim];
    let mut wb = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = BinaryStats {
        epochs: 0,
        primal: f64::INFINITY,
        dual: 0.0,
        converged: false,
    };
    while stats.epochs < opts.max_epochs {
        stats.epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            if qii[i] <= 0.0 {
                continue;
            }
            let g = y[i] * (dot(&w, &xs[i]) + wb * b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                axpy(delta, &xs[i], &mut w);
                wb += delta * b;
            }
        }
        let wsq = dot(&w, &w) + wb * wb;
        let hinge: f64 = xs
            .iter()
            .zip(y)
            .map(|(x, &yi)| (1.0 - yi * (dot(&w, x) + wb * b)).max(0.0))
            .sum();
        stats.primal = 0.5 * wsq + c * hinge;
        stats.dual = alpha.iter().sum::<f64>() - 0.5 * wsq;
        if stats.primal - stats.dual <= opts.gap_tol * stats.primal.abs().max(f64::MIN_POSITIVE) {
            stats.converged = true;
            break;
        }
    }
    if !stats.converged {
        log::warn!(
            "SVM stopped after {} epochs with duality gap {:.3e}",
            stats.epochs,
            stats.primal - stats.dual
        );
    }
    (w.into_iter().map(T::lit).collect(), T::lit(wb), stats)
}
