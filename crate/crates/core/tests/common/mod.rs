#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use qap_parts::corpus::{ImageRecord, RegionDescriptors, RegionRect, Split, TrainingCorpus};
use qap_parts::cost::{
    CostContext, CostOptions, CovarianceNormalization, MomentOptions, Moments, Ridge,
};
use qap_parts::matching::MatchingMatrix;

/// Category 0 has `positives` images, category 1 has `negatives`; entries are `N(0, 1)`.
pub fn random_corpus(
    seed: u64,
    dim: usize,
    rpi: usize,
    positives: usize,
    negatives: usize,
) -> TrainingCorpus<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..positives + negatives)
        .map(|i| {
            let data = (0..dim * rpi)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            ImageRecord {
                image_id: format!("im{i}"),
                label: Some(usize::from(i >= positives)),
                split: Split::Train,
                descriptors: RegionDescriptors::new(dim, data).unwrap(),
                rects: vec![RegionRect::full(); rpi],
            }
        })
        .collect();
    TrainingCorpus {
        images,
        dim,
        regions_per_image: rpi,
        categories: vec!["pos".into(), "neg".into()],
    }
}

pub fn context_with(
    corpus: &TrainingCorpus<f64>,
    ridge: f64,
    cost: &CostOptions,
) -> CostContext<f64> {
    let moments = Moments::compute(
        corpus,
        &MomentOptions {
            ridge: Ridge::Fixed(ridge),
            normalization: CovarianceNormalization::PerRegion,
        },
    )
    .unwrap();
    CostContext::new(corpus, 0, Arc::new(moments), cost).unwrap()
}

pub fn context(corpus: &TrainingCorpus<f64>, ridge: f64) -> CostContext<f64> {
    context_with(corpus, ridge, &CostOptions::default())
}

pub fn random_assignment(
    rng: &mut ChaCha8Rng,
    parts: usize,
    images: usize,
    rpi: usize,
) -> Vec<Vec<usize>> {
    (0..images)
        .map(|_| {
            let mut r: Vec<usize> = (0..rpi).collect();
            r.shuffle(rng);
            r.truncate(parts);
            r
        })
        .collect()
}

pub fn random_hard(
    rng: &mut ChaCha8Rng,
    parts: usize,
    images: usize,
    rpi: usize,
) -> MatchingMatrix<f64> {
    MatchingMatrix::from_assignment(parts, rpi, &random_assignment(rng, parts, images, rpi))
        .unwrap()
}
