//! Image-level encodings computed from learned parts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageRecord, RegionRect};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::matching::PartModel;
use crate::pca::PcaModel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncodingScheme {
    #[serde(rename = "bop")]
    Bop,
    #[serde(rename = "sbop")]
    Sbop,
    #[serde(rename = "cop")]
    Cop,
    #[serde(rename = "pcop")]
    Pcop,
    #[serde(rename = "bop+cop")]
    BopCop,
    #[serde(rename = "sbop+pcop")]
    SbopPcop,
    /// Mean region descriptor; a part-free full-image baseline.
    #[serde(rename = "mean")]
    Mean,
}

impl EncodingScheme {
    pub const ALL: [EncodingScheme; 7] = [
        EncodingScheme::Bop,
        EncodingScheme::Sbop,
        EncodingScheme::Cop,
        EncodingScheme::Pcop,
        EncodingScheme::BopCop,
        EncodingScheme::SbopPcop,
        EncodingScheme::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncodingScheme::Bop => "bop",
            EncodingScheme::Sbop => "sbop",
            EncodingScheme::Cop => "cop",
            EncodingScheme::Pcop => "pcop",
            EncodingScheme::BopCop => "bop+cop",
            EncodingScheme::SbopPcop => "sbop+pcop",
            EncodingScheme::Mean => "mean",
        }
    }

    pub fn needs_pca(self) -> bool {
        matches!(self, EncodingScheme::Pcop | EncodingScheme::SbopPcop)
    }

    /// Encoding length for `parts` parts in each of `categories` categories.
    /// PCA-based schemes need the retained dimension.
    pub fn dimension(self, parts: usize, categories: usize, dim: usize, pca_dim: usize) -> usize {
        let pc = parts * categories;
        match self {
            EncodingScheme::Bop => 2 * pc,
            EncodingScheme::Sbop => 6 * pc,
            EncodingScheme::Cop => dim * pc,
            EncodingScheme::Pcop => pca_dim,
            EncodingScheme::BopCop => 2 * pc + dim * pc,
            EncodingScheme::SbopPcop => 6 * pc + pca_dim,
            EncodingScheme::Mean => dim,
        }
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncodingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncodingScheme::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidOptions(format!("unknown encoding scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoding<T> {
    pub vector: Vec<T>,
    pub scheme: EncodingScheme,
}

impl<T> ImageEncoding<T> {
    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

/// `S[p][r] = ⟨w_p, x_r⟩`
pub fn score_regions<T: Scalar>(image: &ImageRecord<T>, parts: &PartModel<T>) -> Result<Matrix<T>> {
    if image.descriptors.dim() != parts.dim() {
        return Err(Error::DimensionMismatch {
            expected: parts.dim(),
            actual: image.descriptors.dim(),
        });
    }
    let n = image.region_count();
    Ok(Matrix::from_fn(parts.parts(), n, |p, r| {
        dot(parts.part(p), image.descriptors.region(r))
    }))
}

fn row_max<T: Scalar>(row: &[T]) -> T {
    row.iter().copied().fold(T::neg_infinity(), T::max)
}

fn row_min<T: Scalar>(row: &[T]) -> T {
    row.iter().copied().fold(T::infinity(), T::min)
}

/// Bag of parts: `[max_r S[p][r], mean_r S[p][r]]` per part, categories in order.
pub fn encode_bop<T: Scalar>(scores: &[Matrix<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for s in scores {
        for p in 0..s.rows() {
            let row = s.row(p);
            let mean = row.iter().copied().sum::<T>() / T::from_usize_lossy(row.len());
            out.push(row_max(row));
            out.push(mean);
        }
    }
    out
}

/// 2×2 grid cell of a region center: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn grid_cell(rect: &RegionRect) -> usize {
    let (cx, cy) = rect.center();
    let col = usize::from(cx >= 0.5);
    let row = usize::from(cy >= 0.5);
    2 * row + col
}

/// Per part, the maximum score over regions centered in each 2×2 cell. An
/// empty cell takes the part's lowest score in the image.
pub fn cell_maxima<T: Scalar>(scores: &Matrix<T>, rects: &[RegionRect]) -> Vec<[T; 4]> {
    let cells: Vec<usize> = rects.iter().map(grid_cell).collect();
    (0..scores.rows())
        .map(|p| {
            let row = scores.row(p);
            let fill = row_min(row);
            let mut best = [T::neg_infinity(); 4];
            for (r, &v) in row.iter().enumerate() {
                let c = cells[r];
                best[c] = best[c].max(v);
            }
            best.map(|b| if b == T::neg_infinity() { fill } else { b })
        })
        .collect()
}

/// Spatial bag of parts: the BoP vector followed by four cell maxima per part.
pub fn encode_sbop<T: Scalar>(scores: &[Matrix<T>], rects: &[RegionRect]) -> Vec<T> {
    let mut out = encode_bop(scores);
    for s in scores {
        for cells in cell_maxima(s, rects) {
            out.extend_from_slice(&cells);
        }
    }
    out
}

/// Descriptor of the best-scoring region of every part (lowest index on ties).
pub fn encode_cop<T: Scalar>(scores: &[Matrix<T>], image: &ImageRecord<T>) -> Vec<T> {
    let mut out = Vec::new();
    for s in scores {
        for p in 0..s.rows() {
            let row = s.row(p);
            let mut best = 0;
            for (r, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = r;
                }
            }
            out.extend_from_slice(image.descriptors.region(best));
        }
    }
    out
}

pub fn encode_mean<T: Scalar>(image: &ImageRecord<T>) -> Vec<T> {
    let mut out = vec![T::zero(); image.descriptors.dim()];
    for x in image.descriptors.iter() {
        crate::linalg::axpy(T::one(), x, &mut out);
    }
    let inv = T::one() / T::from_usize_lossy(image.region_count());
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Encodes images against the part models of every category.
#[derive(Clone, Debug)]
pub struct ImageEncoder<'a, T> {
    models: &'a [PartModel<T>],
    scheme: EncodingScheme,
    pca: Option<&'a PcaModel<T>>,
}

impl<'a, T: Scalar> ImageEncoder<'a, T> {
    pub fn new(
        models: &'a [PartModel<T>],
        scheme: EncodingScheme,
        pca: Option<&'a PcaModel<T>>,
    ) -> Result<Self> {
        if scheme.needs_pca() && pca.is_none() {
            return Err(Error::InvalidOptions(format!(
                "scheme {scheme} needs a fitted PCA model"
            )));
        }
        Ok(ImageEncoder {
            models,
            scheme,
            pca,
        })
    }

    pub fn scores(&self, image: &ImageRecord<T>) -> Result<Vec<Matrix<T>>> {
        self.models
            .iter()
            .map(|m| score_regions(image, m))
            .collect()
    }

    pub fn encode(&self, image: &ImageRecord<T>) -> Result<ImageEncoding<T>> {
        let vector = match self.scheme {
            EncodingScheme::Mean => encode_mean(image),
            scheme => {
                let scores = self.scores(image)?;
                match scheme {
                    EncodingScheme::Bop => encode_bop(&scores),
                    EncodingScheme::Sbop => encode_sbop(&scores, &image.rects),
                    EncodingScheme::Cop => encode_cop(&scores, image),
                    EncodingScheme::Pcop => self.pca_of(&encode_cop(&scores, image))?,
                    EncodingScheme::BopCop => {
                        let mut v = encode_bop(&scores);
                        v.extend(encode_cop(&scores, image));
                        v
                    }
                    EncodingScheme::SbopPcop => {
                        let mut v = encode_sbop(&scores, &image.rects);
                        v.extend(self.pca_of(&encode_cop(&scores, image))?);
                        v
                    }
                    EncodingScheme::Mean => unreachable!(),
                }
            }
        };
        Ok(ImageEncoding {
            vector,
            scheme: self.scheme,
        })
    }

    fn pca_of(&self, cop: &[T]) -> Result<Vec<T>> {
        self.pca.expect("checked in new").apply(cop)
    }
}
