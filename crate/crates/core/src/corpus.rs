//! Training corpora: images, their region descriptors and region rectangles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned region in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl RegionRect {
    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        RegionRect { x, y, w, h }
    }

    /// The whole image frame.
    pub fn full() -> Self {
        RegionRect::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn is_valid(&self) -> bool {
        // Small slack for coordinates that went through f32 arithmetic.
        const SLACK: f32 = 1e-6;
        self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + SLACK
            && self.y + self.h <= 1.0 + SLACK
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Region descriptors of one image, stored region by region: `region(r)` is `x_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionDescriptors<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> RegionDescriptors<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not split into descriptors of dimension {dim}",
                data.len()
            )));
        }
        Ok(RegionDescriptors { dim, data })
    }

    pub fn from_regions(regions: &[Vec<T>]) -> Result<Self> {
        let dim = regions.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * regions.len());
        for r in regions {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn region(&self, r: usize) -> &[T] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn region_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord<T> {
    pub image_id: String,
    /// Category index; `None` marks a clutter image that only ever acts as a negative.
    pub label: Option<usize>,
    pub split: Split,
    pub descriptors: RegionDescriptors<T>,
    pub rects: Vec<RegionRect>,
}

impl<T: Scalar> ImageRecord<T> {
    pub fn region_count(&self) -> usize {
        self.descriptors.count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCorpus<T> {
    pub images: Vec<ImageRecord<T>>,
    pub dim: usize,
    pub regions_per_image: usize,
    pub categories: Vec<String>,
}

impl<T: Scalar> TrainingCorpus<T> {
    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn train_images(&self) -> impl Iterator<Item = (usize, &ImageRecord<T>)> + '_ {
        self.images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.split == Split::Train)
    }

    pub fn test_images(&self) -> impl Iterator<Item = (usize, &ImageRecord<T>)> + '_ {
        self.images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.split == Split::Test)
    }

    /// Indices of the positive training images of `category`, in corpus order.
    pub fn positives(&self, category: usize) -> Vec<usize> {
        self.train_images()
            .filter(|(_, im)| im.label == Some(category))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of the negative training images of `category`, in corpus order.
    pub fn negatives(&self, category: usize) -> Vec<usize> {
        self.train_images()
            .filter(|(_, im)| im.label != Some(category))
            .map(|(i, _)| i)
            .collect()
    }

    /// Total number of training regions `R`.
    pub fn train_region_count(&self) -> usize {
        self.train_images().count() * self.regions_per_image
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    CountMismatch { descriptors: usize, rects: usize },
    RegionCount { expected: usize, actual: usize },
    DimensionMismatch { expected: usize, actual: usize },
    NonFiniteDescriptor,
    InvalidRect { region: usize },
    LabelOutOfRange { label: usize },
    EmptyCategory { category: String },
    NoTrainingImages,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub image_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.image_id {
            write!(f, "{id}: ")?;
        }
        match &self.kind {
            ViolationKind::CountMismatch { descriptors, rects } => write!(
                f,
                "count mismatch ({descriptors} descriptors, {rects} rects)"
            ),
            ViolationKind::RegionCount { expected, actual } => {
                write!(f, "region count {actual}, corpus uses {expected}")
            }
            ViolationKind::DimensionMismatch { expected, actual } => {
                write!(f, "descriptor dimension {actual}, corpus uses {expected}")
            }
            ViolationKind::NonFiniteDescriptor => write!(f, "non-finite descriptor"),
            ViolationKind::InvalidRect { region } => write!(f, "invalid rect for region {region}"),
            ViolationKind::LabelOutOfRange { label } => write!(f, "label {label} out of range"),
            ViolationKind::EmptyCategory { category } => {
                write!(f, "category {category} has no training images")
            }
            ViolationKind::NoTrainingImages => write!(f, "corpus has no training images"),
        }
    }
}

/// Lists everything that makes `corpus` unusable; an empty list means it is usable.
pub fn validate_corpus<T: Scalar>(corpus: &TrainingCorpus<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |image: Option<&str>, kind| {
        out.push(Violation {
            image_id: image.map(str::to_owned),
            kind,
        })
    };
    for im in &corpus.images {
        let id = Some(im.image_id.as_str());
        let count = im.descriptors.count();
        if count != im.rects.len() {
            push(
                id,
                ViolationKind::CountMismatch {
                    descriptors: count,
                    rects: im.rects.len(),
                },
            );
        }
        if count != corpus.regions_per_image {
            push(
                id,
                ViolationKind::RegionCount {
                    expected: corpus.regions_per_image,
                    actual: count,
                },
            );
        }
        if im.descriptors.dim() != corpus.dim {
            push(
                id,
                ViolationKind::DimensionMismatch {
                    expected: corpus.dim,
                    actual: im.descriptors.dim(),
                },
            );
        }
        if !im.descriptors.is_finite() {
            push(id, ViolationKind::NonFiniteDescriptor);
        }
        if let Some(region) = im.rects.iter().position(|r| !r.is_valid()) {
            push(id, ViolationKind::InvalidRect { region });
        }
        if let Some(label) = im.label {
            if label >= corpus.category_count() {
                push(id, ViolationKind::LabelOutOfRange { label });
            }
        }
    }
    if corpus.train_images().next().is_none() {
        push(None, ViolationKind::NoTrainingImages);
    }
    for (c, name) in corpus.categories.iter().enumerate() {
        if corpus.positives(c).is_empty() {
            push(
                None,
                ViolationKind::EmptyCategory {
                    category: name.clone(),
                },
            );
        }
    }
    out
}

/// Errors with every violation joined when the corpus is unusable.
pub fn ensure_valid<T: Scalar>(corpus: &TrainingCorpus<T>) -> Result<()> {
    let report = validate_corpus(corpus);
    if report.is_empty() {
        Ok(())
    } else {
        let msg: Vec<String> = report.iter().map(ToString::to_string).collect();
        Err(Error::InvalidCorpus(msg.join("; ")))
    }
}

/// Signed square root followed by unit ℓ2 normalization, applied per region.
pub fn preprocess_descriptors<T: Scalar>(
    descriptors: &mut RegionDescriptors<T>,
    sqrt: bool,
    l2: bool,
) {
    for r in 0..descriptors.count() {
        let x = descriptors.region_mut(r);
        if sqrt {
            for v in x.iter_mut() {
                *v = v.signum() * v.abs().sqrt();
            }
        }
        if l2 {
            let n = crate::linalg::norm(x);
            if n > T::zero() {
                for v in x.iter_mut() {
                    *v /= n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(id: &str, label: usize, regions: &[Vec<f64>]) -> ImageRecord<f64> {
        ImageRecord {
            image_id: id.into(),
            label: Some(label),
            split: Split::Train,
            descriptors: RegionDescriptors::from_regions(regions).unwrap(),
            rects: vec![RegionRect::new(0.1, 0.1, 0.5, 0.5); regions.len()],
        }
    }

    fn two_category_corpus() -> TrainingCorpus<f64> {
        TrainingCorpus {
            images: vec![
                image("a", 0, &[vec![1.0, 0.0], vec![0.0, 1.0]]),
                image("b", 1, &[vec![2.0, 0.0], vec![0.0, 2.0]]),
            ],
            dim: 2,
            regions_per_image: 2,
            categories: vec!["cat".into(), "dog".into()],
        }
    }

    #[test]
    fn well_formed_corpus_has_empty_report() {
        assert!(validate_corpus(&two_category_corpus()).is_empty());
    }

    #[test]
    fn rect_count_mismatch_is_reported() {
        let mut corpus = two_category_corpus();
        corpus.regions_per_image = 3;
        for im in &mut corpus.images {
            im.descriptors =
                RegionDescriptors::from_regions(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])
                    .unwrap();
        }
        corpus.images[0].rects.truncate(2);
        corpus.images[1].rects.push(RegionRect::full());
        let report = validate_corpus(&corpus);
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("count mismatch"));
    }

    #[test]
    fn non_finite_descriptor_is_reported() {
        let mut corpus = two_category_corpus();
        corpus.images[1].descriptors.region_mut(0)[1] = f64::NAN;
        let report = validate_corpus(&corpus);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::NonFiniteDescriptor);
        assert!(report[0].to_string().contains("non-finite descriptor"));
    }

    #[test]
    fn empty_category_is_reported() {
        let mut corpus = two_category_corpus();
        corpus.categories.push("bird".into());
        let report = validate_corpus(&corpus);
        assert!(matches!(
            &report[0].kind,
            ViolationKind::EmptyCategory { category } if category == "bird"
        ));
        assert!(ensure_valid(&corpus).is_err());
    }

    #[test]
    fn rect_bounds() {
        assert!(RegionRect::new(0.0, 0.0, 1.0, 1.0).is_valid());
        assert!(!RegionRect::new(0.6, 0.0, 0.5, 0.5).is_valid());
        assert!(!RegionRect::new(0.1, 0.1, 0.0, 0.5).is_valid());
    }

    #[test]
    fn preprocessing_is_signed_sqrt_then_unit_norm() {
        let mut d = RegionDescriptors::from_regions(&[vec![4.0, -9.0]]).unwrap();
        preprocess_descriptors(&mut d, true, true);
        let n = 13f64.sqrt();
        assert!((d.region(0)[0] - 2.0 / n).abs() < 1e-15);
        assert!((d.region(0)[1] + 3.0 / n).abs() < 1e-15);
    }
}
