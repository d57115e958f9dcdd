mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{context, random_corpus, random_hard};
use qap_parts::linalg::Matrix;
use qap_parts::matching::MatchingMatrix;
use qap_parts::projection::{
    project_capped_sum_in_place, project_halfspace_sum, project_matching, project_simplex,
};
use qap_parts::solvers::{round_to_hard, sinkhorn_assign};

/// A point `x` is the projection of `v` onto a convex set containing `x`
/// iff `⟨v − x, y − x⟩ ≤ 0` for every `y` in the set.
fn obtuse(v: &[f64], x: &[f64], y: &[f64]) -> bool {
    let s: f64 = v
        .iter()
        .zip(x)
        .zip(y)
        .map(|((v, x), y)| (v - x) * (y - x))
        .sum();
    s <= 1e-9
}

fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) + 1e-12).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 1..9)
}

proptest! {
    #[test]
    fn simplex_projection_is_the_nearest_point(v in vector(), seed in any::<u64>()) {
        let x = project_simplex(&v);
        prop_assert!(x.iter().all(|&xi| xi >= 0.0));
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in project_simplex(&x).iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let y = simplex_point(&mut rng, v.len());
            prop_assert!(obtuse(&v, &x, &y));
        }
        for i in 0..v.len() {
            let mut vertex = vec![0.0; v.len()];
            vertex[i] = 1.0;
            prop_assert!(obtuse(&v, &x, &vertex));
        }
    }

    #[test]
    fn halfspace_projection_is_the_nearest_point(v in vector(), seed in any::<u64>()) {
        let x = project_halfspace_sum(&v);
        prop_assert!(x.iter().sum::<f64>() <= 1.0 + 1e-12);
        if v.iter().sum::<f64>() <= 1.0 {
            prop_assert_eq!(&x, &v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let y: Vec<f64> = simplex_point(&mut rng, v.len())
                .into_iter()
                .map(|s| s - rng.random_range(0.0..2.0))
                .collect();
            prop_assert!(obtuse(&v, &x, &y));
        }
    }

    #[test]
    fn capped_projection_is_the_nearest_point(v in vector(), seed in any::<u64>()) {
        let mut x = v.clone();
        project_capped_sum_in_place(&mut x);
        prop_assert!(x.iter().all(|&xi| xi >= 0.0));
        prop_assert!(x.iter().sum::<f64>() <= 1.0 + 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let scale = rng.random_range(0.0..1.0);
            let y: Vec<f64> = simplex_point(&mut rng, v.len()).into_iter().map(|s| s * scale).collect();
            prop_assert!(obtuse(&v, &x, &y));
        }
        prop_assert!(obtuse(&v, &x, &vec![0.0; v.len()]));
    }

    #[test]
    fn matching_projection_beats_every_sampled_matching(
        parts in 1usize..4,
        extra in 0usize..3,
        images in 1usize..4,
        seed in any::<u64>(),
    ) {
        let rpi = parts + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Matrix::from_fn(parts, rpi * images, |_, _| rng.random_range(-1.0..1.0));
        let best = project_matching(&c, rpi).unwrap();
        prop_assert!(best.in_m());
        let value = best.values().dot(&c);
        for _ in 0..20 {
            let other = random_hard(&mut rng, parts, images, rpi);
            prop_assert!(other.values().dot(&c) <= value + 1e-12);
        }
    }

    #[test]
    fn rounding_is_idempotent(parts in 1usize..4, images in 1usize..4, seed in any::<u64>()) {
        let rpi = parts + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let soft = Matrix::from_fn(parts, rpi * images, |_, _| rng.random_range(0.0..1.0));
        let m = MatchingMatrix::new(soft, rpi).unwrap();
        let hard = round_to_hard(&m).unwrap();
        prop_assert!(hard.in_m());
        prop_assert_eq!(round_to_hard(&hard).unwrap(), hard);
    }

    #[test]
    fn objective_identities_hold(seed in 0u64..1000, rho in 0.0..5.0f64) {
        let corpus = random_corpus(seed, 3, 4, 3, 2);
        let ctx = context(&corpus, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hard = random_hard(&mut rng, 2, 3, 4);
        let m = hard.values();
        let j0 = ctx.objective_j0(m).unwrap();
        prop_assert!((ctx.objective_j(m).unwrap() + j0).abs() < 1e-12 * j0.abs().max(1.0));
        let offset = ctx.objective_jrho(m, rho).unwrap() - j0;
        prop_assert!((offset - rho * 6.0).abs() < 1e-9 * offset.abs().max(1.0));

        let soft = Matrix::from_fn(2, 12, |_, _| rng.random_range(0.0..1.0));
        let dir = Matrix::from_fn(2, 12, |_, _| rng.random_range(-1.0..1.0));
        let g = ctx.gradient_jrho(&soft, rho).unwrap();
        let h = 1e-5;
        let plus = ctx.objective_jrho(&soft.zip_map(&dir, |a, b| a + h * b), rho).unwrap();
        let minus = ctx.objective_jrho(&soft.zip_map(&dir, |a, b| a - h * b), rho).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let exact = g.dot(&dir);
        prop_assert!((fd - exact).abs() < 1e-5 * exact.abs().max(1.0));
    }

    #[test]
    fn sinkhorn_rows_sum_to_one(
        parts in 1usize..4,
        extra in 0usize..4,
        log_beta in -1.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = Matrix::from_fn(parts, parts + extra, |_, _| rng.random_range(-1.0..1.0));
        let soft = sinkhorn_assign(&block, 10f64.powf(log_beta), None, 1e-10, 100_000).unwrap();
        for s in soft.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-8);
        }
        for s in soft.col_sums() {
            prop_assert!(s <= 1.0 + 1e-8);
        }
    }
}
