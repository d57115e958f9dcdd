//! Corpora with planted parts, for testing recovery end to end.
//!
//! Every category owns `parts` prototype descriptors drawn from `N(0, I)`.
//! A positive image places a noisy copy of each prototype at a random region
//! and fills the remaining regions with background draws from
//! `N(0, background_spread² I)`. Clutter images hold background only.
//! All values are rounded to `f32` so a corpus written to disk and read back
//! is identical to the one generated in memory.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ImageRecord, RegionDescriptors, RegionRect, Split, TrainingCorpus};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::projection::max_weight_assignment;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub categories: usize,
    pub parts: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub clutter_train: usize,
    pub clutter_test: usize,
    pub regions_per_image: usize,
    /// Noise norm relative to the prototype norm; the per-coordinate standard
    /// deviation is `noise · ‖prototype‖ / √dim`.
    pub noise: f64,
    pub background_spread: f64,
    pub min_side: f64,
    pub max_side: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 16,
            categories: 2,
            parts: 4,
            train_per_category: 20,
            test_per_category: 20,
            clutter_train: 0,
            clutter_test: 0,
            regions_per_image: 30,
            noise: 0.05,
            background_spread: 0.5,
            min_side: 0.05,
            max_side: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidOptions(format!("synthetic spec: {msg}")));
        if self.dim == 0 || self.categories == 0 || self.train_per_category == 0 {
            return bad("dim, categories and train_per_category must be positive");
        }
        if self.parts == 0 || self.parts > self.regions_per_image {
            return bad("need 0 < parts ≤ regions_per_image");
        }
        if !(self.noise >= 0.0) || !(self.background_spread >= 0.0) {
            return bad("noise and background_spread must be non-negative");
        }
        if !(self.min_side > 0.0 && self.min_side <= self.max_side && self.max_side <= 1.0) {
            return bad("need 0 < min_side ≤ max_side ≤ 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTruth {
    pub category: usize,
    /// `parts × dim`.
    pub prototypes: Vec<Vec<f64>>,
    /// For each positive training image in corpus order, the region holding each part.
    pub assignments: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub categories: Vec<CategoryTruth>,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.spec.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                scale * z
            })
            .collect()
    }

    fn rect(&mut self) -> RegionRect {
        let (lo, hi) = (self.spec.min_side.ln(), self.spec.max_side.ln());
        let side = self.rng.random_range(lo..=hi).exp();
        let x = self.rng.random_range(0.0..=1.0 - side);
        let y = self.rng.random_range(0.0..=1.0 - side);
        RegionRect::new(x as f32, y as f32, side as f32, side as f32)
    }

    /// Returns the image and, for planted images, the region of each part.
    fn image<T: Scalar>(
        &mut self,
        id: String,
        label: Option<usize>,
        split: Split,
        prototypes: Option<&[Vec<f64>]>,
    ) -> (ImageRecord<T>, Vec<usize>) {
        let n = self.spec.regions_per_image;
        let mut regions: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut slots = Vec::new();
        if let Some(protos) = prototypes {
            slots = sample(&mut self.rng, n, protos.len()).into_vec();
            for (proto, &slot) in protos.iter().zip(&slots) {
                let proto_norm = proto.iter().map(|v| v * v).sum::<f64>().sqrt();
                let sd = self.spec.noise * proto_norm / (self.spec.dim as f64).sqrt();
                let noise = self.gaussian(sd);
                regions[slot] = Some(proto.iter().zip(noise).map(|(p, e)| p + e).collect());
            }
        }
        let mut data = Vec::with_capacity(n * self.spec.dim);
        let mut rects = Vec::with_capacity(n);
        for r in regions {
            let x = r.unwrap_or_else(|| self.gaussian(self.spec.background_spread));
            data.extend(x.into_iter().map(|v| T::lit(f64::from(v as f32))));
            rects.push(self.rect());
        }
        let record = ImageRecord {
            image_id: id,
            label,
            split,
            descriptors: RegionDescriptors::new(self.spec.dim, data)
                .expect("dimension is positive"),
            rects,
        };
        (record, slots)
    }
}

/// Generates a corpus and the planted assignment of every positive training image.
pub fn synth_generate<T: Scalar>(spec: &SyntheticSpec) -> Result<(TrainingCorpus<T>, GroundTruth)> {
    spec.validate()?;
    let mut gen = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.categories)
        .map(|_| {
            (0..spec.parts)
                .map(|_| {
                    gen.gaussian(1.0)
                        .into_iter()
                        .map(|v| f64::from(v as f32))
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut images = Vec::new();
    let mut truth = Vec::with_capacity(spec.categories);
    for (c, protos) in prototypes.iter().enumerate() {
        let mut assignments = Vec::with_capacity(spec.train_per_category);
        for i in 0..spec.train_per_category {
            let (im, slots) = gen.image(
                format!("c{c}_train_{i:04}"),
                Some(c),
                Split::Train,
                Some(protos),
            );
            images.push(im);
            assignments.push(slots);
        }
        truth.push(CategoryTruth {
            category: c,
            prototypes: protos.clone(),
            assignments,
        });
    }
    for i in 0..spec.clutter_train {
        images.push(
            gen.image(format!("clutter_train_{i:04}"), None, Split::Train, None)
                .0,
        );
    }
    for (c, protos) in prototypes.iter().enumerate() {
        for i in 0..spec.test_per_category {
            let id = format!("c{c}_test_{i:04}");
            images.push(gen.image(id, Some(c), Split::Test, Some(protos)).0);
        }
    }
    for i in 0..spec.clutter_test {
        images.push(
            gen.image(format!("clutter_test_{i:04}"), None, Split::Test, None)
                .0,
        );
    }

    let corpus = TrainingCorpus {
        images,
        dim: spec.dim,
        regions_per_image: spec.regions_per_image,
        categories: (0..spec.categories).map(|c| format!("c{c}")).collect(),
    };
    Ok((corpus, GroundTruth { categories: truth }))
}

/// Fraction of planted (image, part) pairs recovered, after matching learned
/// parts to planted parts by maximum agreement.
///
/// Both arguments are indexed `[image][part] = region`. With unequal part
/// counts only `min(P, P_true)` parts per image are scored.
pub fn recovery_score(learned: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<f64> {
    if learned.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: learned.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p = learned[0].len();
    let q = truth[0].len();
    if p != q {
        log::warn!("scoring {p} learned parts against {q} planted parts");
    }
    let mut agree = Matrix::<f64>::zeros(p, q);
    for (l, t) in learned.iter().zip(truth) {
        for (a, &lr) in l.iter().enumerate() {
            for (b, &tr) in t.iter().enumerate() {
                if lr == tr {
                    agree[(a, b)] += 1.0;
                }
            }
        }
    }
    let scored = p.min(q);
    if scored == 0 {
        return Ok(0.0);
    }
    let total: f64 = if p <= q {
        let m = max_weight_assignment(&agree)?;
        m.iter().enumerate().map(|(a, &b)| agree[(a, b)]).sum()
    } else {
        let t = agree.transpose();
        let m = max_weight_assignment(&t)?;
        m.iter().enumerate().map(|(b, &a)| t[(b, a)]).sum()
    };
    Ok(total / (scored * truth.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            dim: 4,
            parts: 2,
            train_per_category: 3,
            test_per_category: 2,
            clutter_train: 1,
            regions_per_image: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generated_corpus_is_valid() {
        let (corpus, truth) = synth_generate::<f64>(&small()).unwrap();
        assert!(validate_corpus(&corpus).is_empty());
        assert_eq!(corpus.images.len(), 2 * 3 + 1 + 2 * 2);
        assert_eq!(truth.categories.len(), 2);
        for ct in &truth.categories {
            assert_eq!(ct.assignments.len(), corpus.positives(ct.category).len());
            for a in &ct.assignments {
                assert_eq!(a.len(), 2);
                assert_ne!(a[0], a[1]);
            }
        }
    }

    #[test]
    fn planted_regions_are_near_prototypes() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small()
        };
        let (corpus, truth) = synth_generate::<f64>(&spec).unwrap();
        let ct = &truth.categories[1];
        for (k, &i) in corpus.positives(1).iter().enumerate() {
            for (p, &r) in ct.assignments[k].iter().enumerate() {
                assert_eq!(
                    corpus.images[i].descriptors.region(r),
                    &ct.prototypes[p][..]
                );
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_generate::<f32>(&small()).unwrap();
        let b = synth_generate::<f32>(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate::<f32>(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn recovery_is_permutation_invariant() {
        let truth = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let learned = vec![vec![2, 0, 1], vec![5, 3, 4]];
        assert_eq!(recovery_score(&learned, &truth).unwrap(), 1.0);
        let half = vec![vec![2, 0, 9], vec![5, 3, 9]];
        assert!((recovery_score(&half, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let fewer = vec![vec![1], vec![4]];
        assert_eq!(recovery_score(&fewer, &truth).unwrap(), 1.0);
    }
}
