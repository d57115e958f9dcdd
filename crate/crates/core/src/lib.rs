//! Discriminative part learning posed as a quadratic assignment problem.
//!
//! For each image category, `P` parts are learned by matching them to
//! regions of the positive training images. A part is an LDA classifier
//! built from the regions matched to it, and the matching maximizes the
//! total response of parts to their regions. This is a concave quadratic
//! problem over per-image partial assignments. The crate provides:
//!
//! * domain types and constraint tests ([`corpus`], [`matching`]),
//! * the factored cost model `C(M) = MA − B` ([`cost`]),
//! * projections and the rectangular Hungarian method ([`projection`]),
//! * four solvers: Hungarian, IPFP, iterated soft-assign, GFB ([`solvers`]),
//! * initialization by clustering ([`init`]),
//! * encodings, PCA, linear SVM and metrics ([`encode`], [`pca`], [`svm`], [`metrics`]),
//! * a planted-parts generator, file formats and the end-to-end pipeline
//!   ([`synth`], [`io`], [`pipeline`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); `*F64` and
//! `*F32` aliases name the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corpus;
pub mod cost;
pub mod encode;
pub mod error;
pub mod init;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod projection;
pub mod scalar;
pub mod solvers;
pub mod svm;
pub mod synth;

pub use corpus::{
    validate_corpus, ImageRecord, RegionDescriptors, RegionRect, Split, TrainingCorpus, Violation,
};
pub use cost::{CostContext, CostOptions, MomentOptions, Moments, PartNormalization, Ridge};
pub use encode::{EncodingScheme, ImageEncoder, ImageEncoding};
pub use error::{Error, Result};
pub use init::{initialize_parts, InitOptions, Initialization};
pub use linalg::Matrix;
pub use matching::{MatchingMatrix, Mode, PartModel};
pub use metrics::{accuracy, average_precision, mean_average_precision, MapReport};
pub use pca::PcaModel;
pub use pipeline::{
    encode_corpus, evaluate, learn_all, learn_category, run_pipeline, train_classifier,
    LearnOptions, LearnedCategory, SolverKind,
};
pub use scalar::Scalar;
pub use solvers::{
    round_to_hard, solve_gfb, solve_hungarian, solve_ipfp, solve_isa, GfbOptions, IsaSchedule,
    SolverReport, StopReason,
};
pub use svm::{train_svm, SvmModel, SvmOptions};
pub use synth::{recovery_score, synth_generate, GroundTruth, SyntheticSpec};

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type TrainingCorpusF64 = TrainingCorpus<f64>;
pub type TrainingCorpusF32 = TrainingCorpus<f32>;
pub type MatchingMatrixF64 = MatchingMatrix<f64>;
pub type MatchingMatrixF32 = MatchingMatrix<f32>;
pub type CostContextF64 = CostContext<f64>;
pub type CostContextF32 = CostContext<f32>;
pub type MomentsF64 = Moments<f64>;
pub type MomentsF32 = Moments<f32>;
pub type PartModelF64 = PartModel<f64>;
pub type PartModelF32 = PartModel<f32>;
pub type PcaModelF64 = PcaModel<f64>;
pub type PcaModelF32 = PcaModel<f32>;
pub type SvmModelF64 = SvmModel<f64>;
pub type SvmModelF32 = SvmModel<f32>;
pub type LearnOptionsF64 = LearnOptions<f64>;
pub type LearnOptionsF32 = LearnOptions<f32>;
