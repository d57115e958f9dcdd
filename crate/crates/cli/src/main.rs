use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qap_parts::cost::{PartNormalization, Ridge};
use qap_parts::encode::EncodingScheme;
use qap_parts::io::{read_corpus, read_json, write_corpus, write_json, Preprocessing};
use qap_parts::pca::DEFAULT_PCA_DIM;
use qap_parts::pipeline::{
    encode_corpus, evaluate, learn_categories, train_classifier, ClassifierFile, EncodedSet,
    LearnOptions, Metric, PartModelSet, SolverKind, SolverSummary,
};
use qap_parts::solvers::{Coefficient, GfbOptions};
use qap_parts::svm::SvmOptions;
use qap_parts::synth::{synth_generate, SyntheticSpec};
use qap_parts::TrainingCorpusF64;

/// Learn discriminative parts by quadratic assignment and classify images with them.
#[derive(Parser)]
#[command(name = "qap-parts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus with planted parts.
    Synth(SynthArgs),
    /// Learn part models for one or more categories.
    Learn(LearnArgs),
    /// Encode labelled images with learned parts.
    Encode(EncodeArgs),
    /// Train the one-vs-rest linear SVM on training encodings.
    Train(TrainArgs),
    /// Evaluate a classifier on test encodings.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for the manifest, descriptor files and ground truth.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Category name; repeat for several. Defaults to every category.
    #[arg(long)]
    category: Vec<String>,
    #[arg(long)]
    parts: usize,
    /// hungarian, ipfp, isa, gfb or gfb-rho.
    #[arg(long, default_value = "ipfp")]
    solver: SolverKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// k-means cluster count; defaults to 5 × parts.
    #[arg(long)]
    clusters: Option<usize>,
    /// Softmax temperature of the initial matching.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Ridge as a fraction of trace(Σ)/d.
    #[arg(long, default_value_t = 1e-2, conflicts_with = "ridge_fixed")]
    ridge: f64,
    /// Absolute ridge λ added to Σ.
    #[arg(long)]
    ridge_fixed: Option<f64>,
    /// Divide part means by n⁺ instead of the row sum.
    #[arg(long)]
    positive_count_normalization: bool,
    #[arg(long, default_value_t = qap_parts::solvers::IPFP_DEFAULT_MAX_ITER)]
    ipfp_max_iter: usize,
    #[arg(long)]
    gfb_max_iter: Option<usize>,
    /// GFB ρ as a multiple of ‖A‖.
    #[arg(long)]
    gfb_rho: Option<f64>,
    /// GFB step control L as a multiple of ‖A‖.
    #[arg(long)]
    gfb_step: Option<f64>,
    /// Let the GFB column copy go negative, constraining only its sum.
    #[arg(long)]
    gfb_halfspace_columns: bool,
    /// ISA annealing factor.
    #[arg(long)]
    isa_rate: Option<f64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Part model files; together they must cover every category.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// bop, sbop, cop, pcop, bop+cop, sbop+pcop or mean.
    #[arg(long)]
    scheme: EncodingScheme,
    #[arg(long, default_value_t = DEFAULT_PCA_DIM)]
    pca_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    encodings: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    bias: f64,
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    encodings: PathBuf,
    /// Comma-separated: map, acc.
    #[arg(long, value_delimiter = ',', default_value = "map,acc")]
    metrics: Vec<Metric>,
    /// Part model files whose solver traces are copied into the report.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Writes the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_corpus(path: &Path) -> Result<TrainingCorpusF64> {
    read_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_models(paths: &[PathBuf]) -> Result<PartModelSet> {
    let sets = paths
        .iter()
        .map(|p| read_json::<PartModelSet>(p))
        .collect::<qap_parts::Result<Vec<_>>>()?;
    Ok(PartModelSet::merge(sets)?)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (corpus, truth) = synth_generate::<f64>(&spec)?;
    let manifest = write_corpus(&args.out, &corpus, Preprocessing::default())?;
    write_json(&args.out.join("ground_truth.json"), &truth)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    log::info!(
        "wrote {} images to {}",
        corpus.images.len(),
        manifest.display()
    );
    Ok(())
}

fn learn(args: LearnArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let categories = if args.category.is_empty() {
        (0..corpus.categories.len()).collect()
    } else {
        args.category
            .iter()
            .map(|name| {
                corpus
                    .category_index(name)
                    .with_context(|| format!("corpus has no category {name:?}"))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut opts = LearnOptions::<f64>::new(args.parts, args.solver);
    opts.init.seed = args.seed;
    opts.init.clusters = args.clusters;
    opts.init.temperature = args.temperature;
    opts.moments.ridge = match args.ridge_fixed {
        Some(l) => Ridge::Fixed(l),
        None => Ridge::TraceFraction(args.ridge),
    };
    if args.positive_count_normalization {
        opts.cost.normalization = PartNormalization::PositiveCount;
    }
    opts.ipfp_max_iter = args.ipfp_max_iter;
    if let Some(rate) = args.isa_rate {
        opts.isa.beta_rate = rate;
    }
    if args.gfb_max_iter.is_some()
        || args.gfb_rho.is_some()
        || args.gfb_step.is_some()
        || args.gfb_halfspace_columns
    {
        let mut g = match args.solver {
            SolverKind::GfbRho => GfbOptions::gfb_rho(),
            _ => GfbOptions::gfb(),
        };
        if let Some(n) = args.gfb_max_iter {
            g.max_iter = n;
        }
        if let Some(r) = args.gfb_rho {
            g.rho = Coefficient::TimesNormA(r);
        }
        if let Some(l) = args.gfb_step {
            g.step = Coefficient::TimesNormA(l);
        }
        if args.gfb_halfspace_columns {
            g.nonnegative_columns = false;
        }
        opts.gfb = Some(g);
    }
    let learned = learn_categories(&corpus, &categories, &opts)?;
    let set = PartModelSet::from_learned(&corpus, &learned, &opts);
    write_json(&args.out, &set)?;
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let models = if args.scheme == EncodingScheme::Mean {
        Vec::new()
    } else {
        if args.models.is_empty() {
            bail!("--models is required for scheme {}", args.scheme);
        }
        load_models(&args.models)?.part_models(&corpus)?
    };
    let set = encode_corpus(&corpus, &models, args.scheme, args.pca_dim)?;
    write_json(&args.out, &set)?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let set: EncodedSet = read_json(&args.encodings)?;
    let opts = SvmOptions {
        c: args.c,
        bias_feature: args.bias,
        gap_tol: args.gap_tol,
        ..SvmOptions::default()
    };
    let classifier = train_classifier(&set, &opts)?;
    write_json(&args.out, &classifier)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let classifier: ClassifierFile = read_json(&args.classifier)?;
    let set: EncodedSet = read_json(&args.encodings)?;
    let mut report = evaluate(&classifier, &set, &args.metrics)?;
    if !args.models.is_empty() {
        report.solvers = load_models(&args.models)?
            .models
            .into_iter()
            .map(|m| SolverSummary {
                category: m.category,
                report: m.report,
            })
            .collect();
    }
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Learn(a) => learn(a),
        Command::Encode(a) => encode(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
    }
}
