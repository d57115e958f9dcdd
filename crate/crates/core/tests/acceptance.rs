//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Failures do not fail the run, so `cargo test` still reaches the other
//! targets. Set `QAP_PARTS_STRICT_ACCEPTANCE=1` to exit non-zero on any FAIL.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use qap_parts::corpus::{ImageRecord, RegionDescriptors, RegionRect, Split, TrainingCorpus};
use qap_parts::cost::{
    CostContext, CostOptions, CovarianceNormalization, MomentOptions, Moments, Ridge,
};
use qap_parts::encode::EncodingScheme;
use qap_parts::init::{initialize_parts, InitOptions};
use qap_parts::linalg::Matrix;
use qap_parts::matching::MatchingMatrix;
use qap_parts::pipeline::{baseline_accuracy, learn_all, run_pipeline, LearnOptions, SolverKind};
use qap_parts::projection::{project_matching, project_simplex};
use qap_parts::solvers::{sinkhorn_padded, solve_gfb, solve_ipfp, Coefficient, GfbOptions};
use qap_parts::svm::SvmOptions;
use qap_parts::synth::{recovery_score, synth_generate, GroundTruth, SyntheticSpec};

type Check = (bool, String);

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Instance {
    corpus: TrainingCorpus<f64>,
    ridge: f64,
}

/// Category 0 has `positives` images, category 1 has `negatives`.
fn random_instance(rng: &mut ChaCha8Rng, max_rpi: usize) -> Instance {
    let dim = rng.random_range(2..=5);
    let rpi = rng.random_range(3..=max_rpi);
    let positives = rng.random_range(1..=4);
    let negatives = rng.random_range(1..=3);
    let mut images = Vec::new();
    for i in 0..positives + negatives {
        let data: Vec<f64> = (0..dim * rpi).map(|_| normal(rng)).collect();
        images.push(ImageRecord {
            image_id: format!("im{i}"),
            label: Some(usize::from(i >= positives)),
            split: Split::Train,
            descriptors: RegionDescriptors::new(dim, data).unwrap(),
            rects: vec![RegionRect::full(); rpi],
        });
    }
    Instance {
        corpus: TrainingCorpus {
            images,
            dim,
            regions_per_image: rpi,
            categories: vec!["pos".into(), "neg".into()],
        },
        ridge: rng.random_range(0.05..1.0),
    }
}

fn context(inst: &Instance) -> CostContext<f64> {
    let moments = Moments::compute(
        &inst.corpus,
        &MomentOptions {
            ridge: Ridge::Fixed(inst.ridge),
            normalization: CovarianceNormalization::PerRegion,
        },
    )
    .unwrap();
    CostContext::new(&inst.corpus, 0, Arc::new(moments), &CostOptions::default()).unwrap()
}

fn random_hard(
    rng: &mut ChaCha8Rng,
    parts: usize,
    images: usize,
    rpi: usize,
) -> MatchingMatrix<f64> {
    let assignment: Vec<Vec<usize>> = (0..images)
        .map(|_| {
            let mut r: Vec<usize> = (0..rpi).collect();
            r.shuffle(rng);
            r.truncate(parts);
            r
        })
        .collect();
    MatchingMatrix::from_assignment(parts, rpi, &assignment).unwrap()
}

/// Dense moments of all training regions with nalgebra: `(μ, (Σ + λI)⁻¹)`.
fn dense_moments(inst: &Instance) -> (DVector<f64>, DMatrix<f64>) {
    let d = inst.corpus.dim;
    let xs: Vec<DVector<f64>> = inst
        .corpus
        .images
        .iter()
        .flat_map(|im| im.descriptors.iter().map(DVector::from_column_slice))
        .collect();
    let n = xs.len() as f64;
    let mu = xs.iter().fold(DVector::zeros(d), |a, x| a + x) / n;
    let mut sigma = xs.iter().fold(DMatrix::zeros(d, d), |a, x| {
        a + (x - &mu) * (x - &mu).transpose()
    }) / n;
    sigma += DMatrix::identity(d, d) * inst.ridge;
    (mu, sigma.try_inverse().unwrap())
}

fn positive_regions(inst: &Instance) -> Vec<DVector<f64>> {
    inst.corpus
        .images
        .iter()
        .filter(|im| im.label == Some(0))
        .flat_map(|im| im.descriptors.iter().map(DVector::from_column_slice))
        .collect()
}

// ---------------------------------------------------------------------------

fn projection_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let rpi = rng.random_range(2..=4);
        let parts = rng.random_range(1..=3.min(rpi));
        let images = rng.random_range(1..=2);
        let c = Matrix::from_fn(parts, rpi * images, |_, _| rng.random_range(-1.0..1.0));
        let got = project_matching(&c, rpi).unwrap().values().dot(&c);
        let best = enumerate_best(&c, parts, rpi, images);
        worst = worst.max((got - best).abs());
    }
    let elapsed = start.elapsed();
    (
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!(
            "200 instances, max |gap| {worst:.2e} (≤ 1e-12), {:.3}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Maximum of `⟨M, C⟩` over every feasible hard matrix, by full enumeration.
fn enumerate_best(c: &Matrix<f64>, parts: usize, rpi: usize, images: usize) -> f64 {
    fn injections(parts: usize, rpi: usize) -> Vec<Vec<usize>> {
        if parts == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for head in injections(parts - 1, rpi) {
            for r in 0..rpi {
                if !head.contains(&r) {
                    let mut v = head.clone();
                    v.push(r);
                    out.push(v);
                }
            }
        }
        out
    }
    let maps = injections(parts, rpi);
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; images];
    loop {
        let mut v = 0.0;
        for (i, &k) in choice.iter().enumerate() {
            for (p, &r) in maps[k].iter().enumerate() {
                v += c[(p, i * rpi + r)];
            }
        }
        best = best.max(v);
        let mut i = 0;
        while i < images {
            choice[i] += 1;
            if choice[i] < maps.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == images {
            return best;
        }
    }
}

fn objective_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_a, mut worst_b, mut worst_c) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, 6);
        let ctx = context(&inst);
        let rpi = inst.corpus.regions_per_image;
        let parts = rng.random_range(1..=rpi.min(4));
        let m = random_hard(&mut rng, parts, ctx.positive_images(), rpi);
        let mv = m.values();
        let c = ctx.cost_matrix(mv).unwrap();
        let inner = mv.dot(&c);

        let (mu, sigma_inv) = dense_moments(&inst);
        let xs = positive_regions(&inst);
        let mut double_sum = 0.0;
        for p in 0..parts {
            let row = mv.row(p);
            let s: f64 = row.iter().sum();
            let mean = xs
                .iter()
                .zip(row)
                .fold(DVector::zeros(inst.corpus.dim), |a, (x, &w)| a + x * w)
                / s;
            let w = &sigma_inv * (mean - &mu);
            for (x, &mpr) in xs.iter().zip(row) {
                double_sum += mpr * w.dot(x);
            }
        }
        worst_a = worst_a.max(rel_err(inner, double_sum));

        let rho = rng.random_range(0.1..10.0);
        let j0 = ctx.objective_j0(mv).unwrap();
        let offset = ctx.objective_jrho(mv, rho).unwrap() - j0;
        worst_b = worst_b.max(rel_err(
            offset,
            rho * (parts * ctx.positive_images()) as f64,
        ));
        worst_c = worst_c.max(rel_err(j0, -inner));
    }
    (
        worst_a <= 1e-8 && worst_b <= 1e-10 && worst_c <= 1e-10,
        format!(
            "100 draws, two-path {worst_a:.2e} (≤ 1e-8), ρ offset {worst_b:.2e} (≤ 1e-10), J₀ sign {worst_c:.2e} (≤ 1e-10)"
        ),
    )
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 6);
        let ctx = context(&inst);
        let parts = rng.random_range(1..=3);
        let cols = ctx.positive_regions();
        let m = Matrix::from_fn(parts, cols, |_, _| rng.random_range(0.01..1.0));
        let rho = rng.random_range(0.0..5.0);
        let g = ctx.gradient_jrho(&m, rho).unwrap();
        let h = 1e-4;
        let mut fd = Matrix::zeros(parts, cols);
        for p in 0..parts {
            for r in 0..cols {
                let mut plus = m.clone();
                plus[(p, r)] += h;
                let mut minus = m.clone();
                minus[(p, r)] -= h;
                fd[(p, r)] = (ctx.objective_jrho(&plus, rho).unwrap()
                    - ctx.objective_jrho(&minus, rho).unwrap())
                    / (2.0 * h);
            }
        }
        let diff = g.zip_map(&fd, |a, b| a - b).frobenius_norm();
        worst = worst.max(diff / g.frobenius_norm());
    }
    (
        worst <= 1e-5,
        format!("20 soft matrices, max rel err {worst:.2e} (≤ 1e-5)"),
    )
}

fn random_soft(
    rng: &mut ChaCha8Rng,
    parts: usize,
    images: usize,
    rpi: usize,
) -> MatchingMatrix<f64> {
    let mut m = Matrix::from_fn(parts, images * rpi, |_, _| rng.random_range(0.01..1.0));
    for p in 0..parts {
        for seg in m.row_mut(p).chunks_exact_mut(rpi) {
            let s: f64 = seg.iter().sum();
            seg.iter_mut().for_each(|v| *v /= s);
        }
    }
    MatchingMatrix::new(m, rpi).unwrap()
}

fn ipfp_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_drop = 0.0f64;
    let mut max_iters = 0;
    let mut all_converged = true;
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 8);
        let ctx = context(&inst);
        let rpi = inst.corpus.regions_per_image;
        let parts = rng.random_range(1..=rpi.min(4));
        let m0 = random_soft(&mut rng, parts, ctx.positive_images(), rpi);
        let (_, report) = solve_ipfp(&m0, &ctx, 100).unwrap();
        let mut trace = vec![ctx.objective_j(m0.values()).unwrap()];
        trace.extend(&report.objective_trace);
        for w in trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        max_iters = max_iters.max(report.iterations);
        all_converged &= report.stop_reason == qap_parts::StopReason::Converged;
    }
    (
        worst_drop <= 1e-9 && max_iters <= 100 && all_converged,
        format!(
            "50 instances, largest decrease {worst_drop:.2e} (≤ 1e-9), most iterations {max_iters} (≤ 100), all converged: {all_converged}"
        ),
    )
}

fn sinkhorn_balance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let regions = rng.random_range(1..=8);
        let parts = rng.random_range(1..=regions);
        let c = Matrix::from_fn(parts, regions, |_, _| rng.random_range(-2.0..2.0));
        let beta = 10f64.powf(rng.random_range(-1.0..2.0));
        let res = sinkhorn_padded(&c, beta, None, 1e-9, 100_000).unwrap();
        for s in res
            .padded
            .row_sums()
            .into_iter()
            .chain(res.padded.col_sums())
        {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }

    let mut worst_gap = 0.0f64;
    let mut blocks = 0;
    while blocks < 100 {
        let c = Matrix::from_fn(3, 6, |_, _| rng.random_range(0.0..1.0));
        let mut values = Vec::new();
        for a in 0..6 {
            for b in 0..6 {
                for d in 0..6 {
                    if a != b && a != d && b != d {
                        values.push(c[(0, a)] + c[(1, b)] + c[(2, d)]);
                    }
                }
            }
        }
        values.sort_by(|x, y| y.partial_cmp(x).unwrap());
        if values[0] - values[1] <= 1e-12 {
            continue;
        }
        blocks += 1;
        let range = c
            .as_slice()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v))
            - c.as_slice().iter().fold(f64::INFINITY, |a, &v| a.min(v));
        let beta = rng.random_range(50.0..200.0) / range;
        let soft = sinkhorn_padded(&c, beta, None, 1e-9, 100_000)
            .unwrap()
            .block();
        let value = soft.dot(&c);
        worst_gap = worst_gap.max((values[0] - value).abs() / values[0].abs());
    }
    (
        worst_sum <= 1e-6 && worst_gap < 0.01,
        format!(
            "100 blocks, max |sum − 1| {worst_sum:.2e} (≤ 1e-6); 100 unique-optimum 3×6 blocks at β·range ∈ [50, 200], max rel gap {worst_gap:.2e} (< 1e-2)"
        ),
    )
}

fn planted_spec() -> SyntheticSpec {
    SyntheticSpec {
        dim: 16,
        categories: 2,
        parts: 4,
        train_per_category: 20,
        test_per_category: 20,
        regions_per_image: 30,
        noise: 0.05,
        seed: 2024,
        ..SyntheticSpec::default()
    }
}

struct Benchmark {
    corpus: TrainingCorpus<f64>,
    truth: GroundTruth,
}

fn benchmark() -> Benchmark {
    let (corpus, truth) = synth_generate(&planted_spec()).unwrap();
    Benchmark { corpus, truth }
}

/// Context and initial matching of `category` on the benchmark, with default options.
fn benchmark_problem(b: &Benchmark, category: usize) -> (CostContext<f64>, MatchingMatrix<f64>) {
    let moments = Arc::new(Moments::compute(&b.corpus, &MomentOptions::default()).unwrap());
    let ctx = CostContext::new(&b.corpus, category, moments, &CostOptions::default()).unwrap();
    let init = initialize_parts(&b.corpus, category, 4, &InitOptions::default(), &ctx).unwrap();
    (ctx, init.matching)
}

fn gfb_residual_and_monotonicity(b: &Benchmark) -> Check {
    let mut worst_residual = 0.0f64;
    let mut worst_rise = 0.0f64;
    let mut notes = Vec::new();
    for category in 0..2 {
        let (ctx, m0) = benchmark_problem(b, category);
        for (name, opts) in [
            ("gfb", GfbOptions::gfb()),
            ("gfb-rho", GfbOptions::gfb_rho()),
        ] {
            let (m, report) = solve_gfb(&m0, &ctx, &opts).unwrap();
            let r = m.constraint_residual();
            worst_residual = worst_residual.max(r);
            notes.push(format!(
                "{name}/c{category} {r:.1e} in {} it",
                report.iterations
            ));
        }
        // Standard forward-backward step: L equal to the Lipschitz constant
        // of ∇J_ρ, which is 2·max(ρ, ‖A‖ − ρ) = 2.2‖A‖ here.
        let convex = GfbOptions {
            rho: Coefficient::TimesNormA(1.1),
            step: Coefficient::TimesNormA(2.2),
            ..GfbOptions::gfb()
        };
        let (_, report) = solve_gfb(&m0, &ctx, &convex).unwrap();
        for w in report.objective_trace.windows(2).skip(1) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    (
        worst_residual < 1e-4 && worst_rise <= 1e-9,
        format!(
            "max final residual {worst_residual:.2e} (< 1e-4) [{}]; ρ = 1.1‖A‖, L = 2.2‖A‖ largest J_ρ increase after iteration 1 {worst_rise:.2e} (≤ 1e-9)",
            notes.join(", ")
        ),
    )
}

/// Tries every support set: on support `S` the candidate is `x_i = v_i − τ`
/// with `τ` fixed by `Σx = 1`. The KKT-feasible candidate is the projection.
fn simplex_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut ok = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                x[i] = v[i] - tau;
                ok &= x[i] >= -1e-15;
            } else {
                ok &= v[i] - tau <= 1e-15;
            }
        }
        if ok {
            let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, x));
            }
        }
    }
    best.expect("the simplex projection always exists").1
}

fn simplex_and_spectral() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_simplex = 0.0f64;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = project_simplex(&v);
        let want = simplex_oracle(&v);
        for (a, b) in got.iter().zip(&want) {
            worst_simplex = worst_simplex.max((a - b).abs());
        }
    }

    let mut worst_spec = 0.0f64;
    for _ in 0..20 {
        let dim = rng.random_range(2..=8);
        let images = [0, 0, 0, 0, 1, 1]
            .into_iter()
            .enumerate()
            .map(|(i, label)| ImageRecord {
                image_id: format!("im{i}"),
                label: Some(label),
                split: Split::Train,
                descriptors: RegionDescriptors::new(
                    dim,
                    (0..dim * 5).map(|_| normal(&mut rng)).collect(),
                )
                .unwrap(),
                rects: vec![RegionRect::full(); 5],
            })
            .collect();
        let inst = Instance {
            corpus: TrainingCorpus {
                images,
                dim,
                regions_per_image: 5,
                categories: vec!["pos".into(), "neg".into()],
            },
            ridge: rng.random_range(0.05..1.0),
        };
        let ctx = context(&inst);
        assert_eq!(ctx.positive_regions(), 20);
        let est = ctx.spectral_norm_a(1e-12, 100_000).unwrap().value;
        let (_, sigma_inv) = dense_moments(&inst);
        let xs = positive_regions(&inst);
        let x = DMatrix::from_fn(20, inst.corpus.dim, |r, j| xs[r][j]);
        let a = &x * &sigma_inv * x.transpose() / 4.0;
        let a = (&a + a.transpose()) * 0.5;
        let top = a.symmetric_eigen().eigenvalues.max();
        worst_spec = worst_spec.max(rel_err(est, top));
    }
    (
        worst_simplex <= 1e-9 && worst_spec <= 5e-3,
        format!(
            "1000 6-vectors, max err {worst_simplex:.2e} (≤ 1e-9); 20 random 20×20 A, max rel err {worst_spec:.2e} (≤ 5e-3)"
        ),
    )
}

struct RecoveryOutcome {
    check: Check,
    bop_accuracy: f64,
}

fn planted_recovery(b: &Benchmark) -> RecoveryOutcome {
    let start = Instant::now();
    let mut scores = Vec::new();
    let mut pass = true;
    for solver in [SolverKind::Hungarian, SolverKind::Isa, SolverKind::GfbRho] {
        let learned = learn_all(&b.corpus, &LearnOptions::new(4, solver)).unwrap();
        let worst = learned
            .iter()
            .zip(&b.truth.categories)
            .map(|(l, t)| recovery_score(&l.assignment, &t.assignments).unwrap())
            .fold(f64::INFINITY, f64::min);
        pass &= worst >= 0.95;
        scores.push(format!("{solver} {worst:.3}"));
    }
    let out = run_pipeline(
        &b.corpus,
        &LearnOptions::new(4, SolverKind::Ipfp),
        EncodingScheme::Bop,
        &SvmOptions::default(),
    )
    .unwrap();
    let acc = out.report.accuracy.unwrap();
    let elapsed = start.elapsed();
    pass &= acc >= 0.95 && elapsed < Duration::from_secs(120);
    RecoveryOutcome {
        check: (
            pass,
            format!(
                "min recovery per solver [{}] (≥ 0.95); BoP+SVM test accuracy {acc:.3} (≥ 0.95); {:.1}s (< 120s)",
                scores.join(", "),
                elapsed.as_secs_f64()
            ),
        ),
        bop_accuracy: acc,
    }
}

fn relative_ordering(b: &Benchmark, bop_accuracy: f64) -> Check {
    let baseline = baseline_accuracy(&b.corpus, &SvmOptions::default()).unwrap();
    (
        bop_accuracy >= baseline,
        format!("BoP accuracy {bop_accuracy:.3} ≥ mean-descriptor baseline {baseline:.3}"),
    )
}

fn determinism(b: &Benchmark) -> Check {
    let run = || {
        let out = run_pipeline(
            &b.corpus,
            &LearnOptions::new(4, SolverKind::Isa),
            EncodingScheme::SbopPcop,
            &SvmOptions::default(),
        )
        .unwrap();
        serde_json::to_vec_pretty(&out.report).unwrap()
    };
    let first = run();
    let second = run();
    (
        first == second,
        format!(
            "two full runs, {} report bytes, identical: {}",
            first.len(),
            first == second
        ),
    )
}

fn main() {
    let bench = benchmark();
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let (pass, detail) = f();
        if !pass {
            failures += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };
    report("projection optimality", &mut projection_optimality);
    report("objective identities", &mut objective_identities);
    report("gradient check", &mut gradient_check);
    report("ipfp monotonicity", &mut ipfp_monotonicity);
    report("sinkhorn balance and gap", &mut sinkhorn_balance);
    report("gfb residual and monotonicity", &mut || {
        gfb_residual_and_monotonicity(&bench)
    });
    report(
        "simplex projection and spectral norm",
        &mut simplex_and_spectral,
    );
    let mut bop = f64::NAN;
    report("planted recovery", &mut || {
        let r = planted_recovery(&bench);
        bop = r.bop_accuracy;
        r.check
    });
    report("part encoding beats full-image baseline", &mut || {
        relative_ordering(&bench, bop)
    });
    report("determinism", &mut || determinism(&bench));
    println!("{} of 10 criteria passed", 10 - failures);
    if failures > 0 && std::env::var_os("QAP_PARTS_STRICT_ACCEPTANCE").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
