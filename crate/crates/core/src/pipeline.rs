//! End-to-end stages: learn parts per category, encode images, train the
//! classifier, evaluate.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ensure_valid, TrainingCorpus};
use crate::cost::{CostContext, CostOptions, MomentOptions, Moments};
use crate::encode::{EncodingScheme, ImageEncoder};
use crate::error::{Error, Result};
use crate::init::{initialize_parts, InitOptions, RankingRule};
use crate::linalg::{norm, Matrix};
use crate::matching::{MatchingMatrix, PartModel};
use crate::metrics::{accuracy, mean_average_precision, MapReport};
use crate::pca::{PcaModel, DEFAULT_PCA_DIM};
use crate::scalar::Scalar;
use crate::solvers::{
    round_to_hard, solve_gfb, solve_hungarian, solve_ipfp, solve_isa, GfbOptions, IsaSchedule,
    SolverReport, IPFP_DEFAULT_MAX_ITER,
};
use crate::svm::{train_svm, SvmModel, SvmOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the number of worker threads used across categories.
pub const WORKERS_ENV: &str = "QAP_PARTS_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverKind {
    #[serde(rename = "hungarian")]
    Hungarian,
    #[serde(rename = "ipfp")]
    Ipfp,
    #[serde(rename = "isa")]
    Isa,
    #[serde(rename = "gfb")]
    Gfb,
    #[serde(rename = "gfb-rho")]
    GfbRho,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Hungarian,
        SolverKind::Ipfp,
        SolverKind::Isa,
        SolverKind::Gfb,
        SolverKind::GfbRho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Hungarian => "hungarian",
            SolverKind::Ipfp => "ipfp",
            SolverKind::Isa => "isa",
            SolverKind::Gfb => "gfb",
            SolverKind::GfbRho => "gfb-rho",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidOptions(format!("unknown solver {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct LearnOptions<T> {
    pub parts: usize,
    pub solver: SolverKind,
    pub moments: MomentOptions<T>,
    pub cost: CostOptions,
    pub init: InitOptions<T>,
    pub ipfp_max_iter: usize,
    pub isa: IsaSchedule<T>,
    /// `None` picks the preset matching `solver`.
    pub gfb: Option<GfbOptions<T>>,
}

impl<T: Scalar> LearnOptions<T> {
    pub fn new(parts: usize, solver: SolverKind) -> Self {
        LearnOptions {
            parts,
            solver,
            moments: MomentOptions::default(),
            cost: CostOptions::default(),
            init: InitOptions::default(),
            ipfp_max_iter: IPFP_DEFAULT_MAX_ITER,
            isa: IsaSchedule::default(),
            gfb: None,
        }
    }

    fn gfb_options(&self) -> GfbOptions<T> {
        self.gfb.unwrap_or_else(|| match self.solver {
            SolverKind::GfbRho => GfbOptions::gfb_rho(),
            _ => GfbOptions::gfb(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct LearnedCategory<T> {
    pub category: usize,
    /// LDA parts of the hard matching.
    pub model: PartModel<T>,
    /// The solver's own output, soft for ISA and GFB.
    pub matching: MatchingMatrix<T>,
    /// `[image][part] = region` over the category's positive training images.
    pub assignment: Vec<Vec<usize>>,
    pub report: SolverReport,
    pub selected_clusters: Vec<usize>,
    pub ranking: RankingRule,
}

/// Runs one solver from `m0`.
pub fn run_solver<T: Scalar>(
    m0: &MatchingMatrix<T>,
    ctx: &CostContext<T>,
    opts: &LearnOptions<T>,
) -> Result<(MatchingMatrix<T>, SolverReport)> {
    match opts.solver {
        SolverKind::Hungarian => solve_hungarian(m0, ctx),
        SolverKind::Ipfp => solve_ipfp(m0, ctx, opts.ipfp_max_iter),
        SolverKind::Isa => solve_isa(m0, ctx, &opts.isa),
        SolverKind::Gfb | SolverKind::GfbRho => {
            let (m, mut report) = solve_gfb(m0, ctx, &opts.gfb_options())?;
            report.solver = opts.solver.name().to_owned();
            Ok((m, report))
        }
    }
}

/// Learns the parts of one category against precomputed moments.
pub fn learn_category<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    moments: Arc<Moments<T>>,
    category: usize,
    opts: &LearnOptions<T>,
) -> Result<LearnedCategory<T>> {
    let ctx = CostContext::new(corpus, category, moments, &opts.cost)?;
    let init = initialize_parts(corpus, category, opts.parts, &opts.init, &ctx)?;
    let (matching, report) = run_solver(&init.matching, &ctx, opts)?;
    let hard = round_to_hard(&matching)?;
    let assignment = hard
        .assignment()
        .expect("rounded matching is a partial assignment");
    let weights = ctx.part_models(hard.values())?;
    log::info!(
        "category {category}: {} finished after {} iterations ({:?}) in {:.3}s",
        report.solver,
        report.iterations,
        report.stop_reason,
        report.wall_time
    );
    Ok(LearnedCategory {
        category,
        model: weights,
        matching,
        assignment,
        report,
        selected_clusters: init.selected,
        ranking: init.ranking,
    })
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn configured_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Learns every listed category in parallel. Results follow `categories` order.
pub fn learn_categories<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    categories: &[usize],
    opts: &LearnOptions<T>,
) -> Result<Vec<LearnedCategory<T>>> {
    ensure_valid(corpus)?;
    if let Some(&bad) = categories.iter().find(|&&c| c >= corpus.categories.len()) {
        return Err(Error::InvalidOptions(format!(
            "no category with index {bad}"
        )));
    }
    let moments = Arc::new(Moments::compute(corpus, &opts.moments)?);
    let run = || {
        categories
            .par_iter()
            .map(|&c| learn_category(corpus, Arc::clone(&moments), c, opts))
            .collect::<Result<Vec<_>>>()
    };
    match configured_workers() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidOptions(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

pub fn learn_all<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    opts: &LearnOptions<T>,
) -> Result<Vec<LearnedCategory<T>>> {
    let all: Vec<usize> = (0..corpus.categories.len()).collect();
    learn_categories(corpus, &all, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartModelFile {
    pub category: String,
    pub category_index: usize,
    pub parts: usize,
    pub dim: usize,
    pub solver: SolverKind,
    pub seed: u64,
    /// Row `p` is the part classifier `w_p`.
    pub weights: Vec<Vec<f64>>,
    pub assignment: Vec<Vec<usize>>,
    pub selected_clusters: Vec<usize>,
    pub ranking: RankingRule,
    pub report: SolverReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartModelSet {
    pub schema_version: u32,
    pub models: Vec<PartModelFile>,
}

impl PartModelSet {
    pub fn from_learned<T: Scalar>(
        corpus: &TrainingCorpus<T>,
        learned: &[LearnedCategory<T>],
        opts: &LearnOptions<T>,
    ) -> Self {
        let models = learned
            .iter()
            .map(|l| PartModelFile {
                category: corpus.categories[l.category].clone(),
                category_index: l.category,
                parts: l.model.parts(),
                dim: l.model.dim(),
                solver: opts.solver,
                seed: opts.init.seed,
                weights: (0..l.model.parts())
                    .map(|p| l.model.part(p).iter().map(|v| v.as_f64()).collect())
                    .collect(),
                assignment: l.assignment.clone(),
                selected_clusters: l.selected_clusters.clone(),
                ranking: l.ranking,
                report: l.report.clone(),
            })
            .collect();
        PartModelSet {
            schema_version: SCHEMA_VERSION,
            models,
        }
    }

    /// Merges sets and orders models by category index.
    pub fn merge(sets: impl IntoIterator<Item = PartModelSet>) -> Result<Self> {
        let mut models: Vec<PartModelFile> = Vec::new();
        for s in sets {
            if s.schema_version != SCHEMA_VERSION {
                return Err(Error::InvalidOptions(format!(
                    "part model schema {} is not {SCHEMA_VERSION}",
                    s.schema_version
                )));
            }
            models.extend(s.models);
        }
        models.sort_by_key(|m| m.category_index);
        if models
            .windows(2)
            .any(|w| w[0].category_index == w[1].category_index)
        {
            return Err(Error::InvalidOptions(
                "a category has more than one part model".into(),
            ));
        }
        Ok(PartModelSet {
            schema_version: SCHEMA_VERSION,
            models,
        })
    }

    /// Part models for every category of `corpus`, in category order.
    pub fn part_models<T: Scalar>(&self, corpus: &TrainingCorpus<T>) -> Result<Vec<PartModel<T>>> {
        (0..corpus.categories.len())
            .map(|c| {
                let f = self
                    .models
                    .iter()
                    .find(|m| m.category_index == c)
                    .ok_or_else(|| {
                        Error::InvalidOptions(format!(
                            "no part model for category {}",
                            corpus.categories[c]
                        ))
                    })?;
                if f.category != corpus.categories[c] {
                    return Err(Error::InvalidOptions(format!(
                        "part model for index {c} is named {:?}, corpus says {:?}",
                        f.category, corpus.categories[c]
                    )));
                }
                let rows: Vec<Vec<T>> = f
                    .weights
                    .iter()
                    .map(|r| r.iter().map(|&v| T::lit(v)).collect())
                    .collect();
                PartModel::new(Matrix::from_rows(&rows)?, c)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub image_id: String,
    pub label: usize,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaFile {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

impl PcaFile {
    pub fn from_model<T: Scalar>(m: &PcaModel<T>) -> Self {
        PcaFile {
            mean: m.mean.iter().map(|v| v.as_f64()).collect(),
            components: (0..m.retained())
                .map(|k| m.components.row(k).iter().map(|v| v.as_f64()).collect())
                .collect(),
        }
    }
}

/// Encodings of the labelled images; clutter images are not classified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSet {
    pub schema_version: u32,
    pub scheme: EncodingScheme,
    pub dim: usize,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaFile>,
    pub train: Vec<EncodedImage>,
    pub test: Vec<EncodedImage>,
}

fn unit<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let n = norm(&v);
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Encodes every labelled image and scales each encoding to unit ℓ2 norm.
///
/// PCA for the projected schemes is fitted on the training CoP encodings
/// and keeps `min(pca_dim, rank)` components.
pub fn encode_corpus<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    models: &[PartModel<T>],
    scheme: EncodingScheme,
    pca_dim: usize,
) -> Result<EncodedSet> {
    let labelled = |split| {
        corpus
            .images
            .iter()
            .filter(move |im| im.split == split && im.label.is_some())
    };
    let pca = if scheme.needs_pca() {
        let cop = ImageEncoder::new(models, EncodingScheme::Cop, None)?;
        let train: Vec<Vec<T>> = labelled(crate::corpus::Split::Train)
            .map(|im| cop.encode(im).map(|e| e.vector))
            .collect::<Result<_>>()?;
        Some(PcaModel::fit(&train, pca_dim)?)
    } else {
        None
    };
    let encoder = ImageEncoder::new(models, scheme, pca.as_ref())?;
    let encode_split = |split| -> Result<Vec<EncodedImage>> {
        labelled(split)
            .map(|im| {
                let e = encoder.encode(im)?;
                Ok(EncodedImage {
                    image_id: im.image_id.clone(),
                    label: im.label.expect("filtered to labelled"),
                    vector: unit(e.vector).into_iter().map(|v| v.as_f64()).collect(),
                })
            })
            .collect()
    };
    let train = encode_split(crate::corpus::Split::Train)?;
    let test = encode_split(crate::corpus::Split::Test)?;
    let dim = train.first().or(test.first()).map_or(0, |e| e.vector.len());
    Ok(EncodedSet {
        schema_version: SCHEMA_VERSION,
        scheme,
        dim,
        classes: corpus.categories.clone(),
        pca: pca.as_ref().map(PcaFile::from_model),
        train,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub schema_version: u32,
    pub scheme: EncodingScheme,
    pub classes: Vec<String>,
    pub options: SvmOptions,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl ClassifierFile {
    pub fn model(&self) -> Result<SvmModel<f64>> {
        Ok(SvmModel {
            weights: Matrix::from_rows(&self.weights)?,
            biases: self.biases.clone(),
            bias_feature: self.options.bias_feature,
            stats: Vec::new(),
        })
    }
}

pub fn train_classifier(set: &EncodedSet, opts: &SvmOptions) -> Result<ClassifierFile> {
    let xs: Vec<Vec<f64>> = set.train.iter().map(|e| e.vector.clone()).collect();
    let ys: Vec<usize> = set.train.iter().map(|e| e.label).collect();
    let model = train_svm(&xs, &ys, set.classes.len(), opts)?;
    Ok(ClassifierFile {
        schema_version: SCHEMA_VERSION,
        scheme: set.scheme,
        classes: set.classes.clone(),
        options: opts.clone(),
        weights: (0..model.classes())
            .map(|k| model.weights.row(k).to_vec())
            .collect(),
        biases: model.biases,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Map,
    Acc,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Metric::Map),
            "acc" => Ok(Metric::Acc),
            _ => Err(Error::InvalidOptions(format!("unknown metric {s:?}"))),
        }
    }
}

/// Conventions that affect reported numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub average_precision: String,
    pub ties: String,
    pub encoding_normalization: String,
    pub clutter_images: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            average_precision: "all-points, non-interpolated; mean over classes with test examples"
                .into(),
            ties: "equal scores keep input order; argmax takes the lowest index".into(),
            encoding_normalization: "unit l2 norm per encoding".into(),
            clutter_images: "used as negatives for part learning, not classified".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub category: String,
    pub report: SolverReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub scheme: EncodingScheme,
    pub test_images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapReport>,
    pub conventions: Conventions,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solvers: Vec<SolverSummary>,
}

pub fn evaluate(
    classifier: &ClassifierFile,
    set: &EncodedSet,
    metrics: &[Metric],
) -> Result<EvalReport> {
    if classifier.scheme != set.scheme {
        return Err(Error::InvalidOptions(format!(
            "classifier was trained on {} encodings, got {}",
            classifier.scheme, set.scheme
        )));
    }
    let model = classifier.model()?;
    let xs: Vec<Vec<f64>> = set.test.iter().map(|e| e.vector.clone()).collect();
    let truth: Vec<usize> = set.test.iter().map(|e| e.label).collect();
    let scores = model.decision_matrix(&xs)?;
    let predicted: Vec<usize> = (0..scores.rows())
        .map(|i| crate::svm::argmax(scores.row(i)))
        .collect();
    let mut report = EvalReport {
        schema_version: SCHEMA_VERSION,
        scheme: set.scheme,
        test_images: set.test.len(),
        accuracy: None,
        map: None,
        conventions: Conventions::default(),
        solvers: Vec::new(),
    };
    for m in metrics {
        match m {
            Metric::Acc => report.accuracy = Some(accuracy(&predicted, &truth)?),
            Metric::Map => report.map = Some(mean_average_precision(&scores, &truth)?),
        }
    }
    Ok(report)
}

/// Learned parts plus their evaluation under one scheme.
#[derive(Clone, Debug)]
pub struct PipelineOutcome<T> {
    pub learned: Vec<LearnedCategory<T>>,
    pub encoded: EncodedSet,
    pub classifier: ClassifierFile,
    pub report: EvalReport,
}

/// Learns every category, then encodes, trains and evaluates.
pub fn run_pipeline<T: Scalar>(
    corpus: &TrainingCorpus<T>,
    learn: &LearnOptions<T>,
    scheme: EncodingScheme,
    svm: &SvmOptions,
) -> Result<PipelineOutcome<T>> {
    let learned = learn_all(corpus, learn)?;
    let models: Vec<PartModel<T>> = learned.iter().map(|l| l.model.clone()).collect();
    let encoded = encode_corpus(corpus, &models, scheme, DEFAULT_PCA_DIM)?;
    let classifier = train_classifier(&encoded, svm)?;
    let mut report = evaluate(&classifier, &encoded, &[Metric::Acc, Metric::Map])?;
    report.solvers = learned
        .iter()
        .map(|l| SolverSummary {
            category: corpus.categories[l.category].clone(),
            report: l.report.clone(),
        })
        .collect();
    Ok(PipelineOutcome {
        learned,
        encoded,
        classifier,
        report,
    })
}

/// Accuracy of the mean-descriptor baseline, which uses no parts.
pub fn baseline_accuracy<T: Scalar>(corpus: &TrainingCorpus<T>, svm: &SvmOptions) -> Result<f64> {
    let encoded = encode_corpus(corpus, &[], EncodingScheme::Mean, DEFAULT_PCA_DIM)?;
    let classifier = train_classifier(&encoded, svm)?;
    let report = evaluate(&classifier, &encoded, &[Metric::Acc])?;
    Ok(report.accuracy.expect("requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{recovery_score, synth_generate, SyntheticSpec};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            dim: 8,
            parts: 3,
            train_per_category: 8,
            test_per_category: 6,
            regions_per_image: 10,
            ..Default::default()
        }
    }

    #[test]
    fn names_parse() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
        assert!("newton".parse::<SolverKind>().is_err());
        assert_eq!("acc".parse::<Metric>().unwrap(), Metric::Acc);
    }

    #[test]
    fn hungarian_recovers_planted_parts() {
        let (corpus, truth) = synth_generate::<f64>(&spec()).unwrap();
        let learned = learn_all(&corpus, &LearnOptions::new(3, SolverKind::Hungarian)).unwrap();
        for (l, t) in learned.iter().zip(&truth.categories) {
            assert!(recovery_score(&l.assignment, &t.assignments).unwrap() >= 0.9);
        }
    }

    #[test]
    fn pipeline_classifies_and_reports() {
        let (corpus, _) = synth_generate::<f64>(&spec()).unwrap();
        let out = run_pipeline(
            &corpus,
            &LearnOptions::new(3, SolverKind::Ipfp),
            EncodingScheme::Bop,
            &SvmOptions::default(),
        )
        .unwrap();
        assert_eq!(out.encoded.dim, 2 * 3 * 2);
        assert!(out.report.accuracy.unwrap() >= 0.9);
        assert_eq!(out.report.solvers.len(), 2);
        let json = serde_json::to_string(&out.report).unwrap();
        assert!(!json.contains("wall_time"));
    }

    #[test]
    fn model_set_round_trips() {
        let (corpus, _) = synth_generate::<f64>(&spec()).unwrap();
        let opts = LearnOptions::new(3, SolverKind::Hungarian);
        let learned = learn_all(&corpus, &opts).unwrap();
        let set = PartModelSet::from_learned(&corpus, &learned, &opts);
        let json = serde_json::to_string(&set).unwrap();
        let back: PartModelSet = serde_json::from_str(&json).unwrap();
        let models = back.part_models(&corpus).unwrap();
        for (m, l) in models.iter().zip(&learned) {
            assert_eq!(m.weights, l.model.weights);
        }
        let only_first = PartModelSet {
            models: vec![back.models[0].clone()],
            ..back.clone()
        };
        assert!(only_first.part_models(&corpus).is_err());
    }

    #[test]
    fn every_scheme_has_its_stated_length() {
        let (corpus, _) = synth_generate::<f64>(&spec()).unwrap();
        let learned = learn_all(&corpus, &LearnOptions::new(3, SolverKind::Hungarian)).unwrap();
        let models: Vec<_> = learned.iter().map(|l| l.model.clone()).collect();
        for scheme in EncodingScheme::ALL {
            let set = encode_corpus(&corpus, &models, scheme, 5).unwrap();
            let pca_dim = set.pca.as_ref().map_or(0, |p| p.components.len());
            assert_eq!(set.dim, scheme.dimension(3, 2, 8, pca_dim), "{scheme}");
        }
    }
}
