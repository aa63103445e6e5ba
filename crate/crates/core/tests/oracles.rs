//! Cross-checks of the numeric kernels against independent implementations.

use nalgebra::{DMatrix, DVector};
use plad::features::FeatureGrid;
use plad::padim::{fit_padim, score_padim, Cholesky};
use plad::patchcore::{
    coreset_size, fit_patchcore, greedy_k_center, score_patchcore, MemoryBank,
};
use proptest::prelude::*;
use rand::Rng;

fn random_spd(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let spd = &a * a.transpose() + DMatrix::<f64>::identity(n, n) * 0.1;
    (0..n * n).map(|k| spd[(k / n, k % n)]).collect()
}

#[test]
fn cholesky_mahalanobis_matches_explicit_inverse() {
    let mut rng = plad::seed::rng(7);
    for trial in 0..100 {
        let n = 1 + trial % 8;
        let m = random_spd(&mut rng, n);
        let diff: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let chol = Cholesky::factor(&m, n).unwrap();
        let ours = chol.mahalanobis(&diff);

        let dense = DMatrix::from_row_slice(n, n, &m);
        let inv = dense.try_inverse().unwrap();
        let d = DVector::from_column_slice(&diff);
        let reference = (d.transpose() * inv * &d)[(0, 0)].sqrt();
        assert!(
            (ours - reference).abs() <= 1e-8 * reference.max(1e-12),
            "trial {trial}: {ours} vs {reference}"
        );
    }
}

#[test]
fn cholesky_inverse_and_reconstruction_match_nalgebra() {
    let mut rng = plad::seed::rng(11);
    for n in 1..=8 {
        let m = random_spd(&mut rng, n);
        let chol = Cholesky::factor(&m, n).unwrap();
        let dense = DMatrix::from_row_slice(n, n, &m);
        let inv = dense.clone().try_inverse().unwrap();
        let ours = chol.inverse();
        let back = chol.reconstruct();
        for k in 0..n * n {
            let (i, j) = (k / n, k % n);
            assert!((ours[k] - inv[(i, j)]).abs() <= 1e-8 * inv.amax());
            assert!((back[k] - m[k]).abs() <= 1e-12 * dense.amax());
        }
    }
}

/// Gram-Schmidt on random vectors: an orthogonal `d x d` matrix.
fn random_rotation(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q()
}

#[test]
fn padim_scores_are_invariant_to_feature_rotation() {
    // With covariance S + eps*I, rotating every embedding by R gives
    // R S R^T + eps*I = R (S + eps*I) R^T, so distances are unchanged.
    let mut rng = plad::seed::rng(3);
    let (d, n) = (5, 12);
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let query: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let r = random_rotation(&mut rng, d);
    let rotate = |v: &[f64]| -> Vec<f64> {
        (r.clone() * DVector::from_column_slice(v)).iter().copied().collect()
    };
    let grid = |v: &[f64]| FeatureGrid::new(1, 1, d, v.iter().map(|&x| x as f32).collect()).unwrap();

    let plain: Vec<FeatureGrid> = samples.iter().map(|s| grid(s)).collect();
    let turned: Vec<FeatureGrid> = samples.iter().map(|s| grid(&rotate(s))).collect();
    let a = score_padim(&fit_padim(&plain, 0.01).unwrap(), &grid(&query)).unwrap();
    let b = score_padim(&fit_padim(&turned, 0.01).unwrap(), &grid(&rotate(&query))).unwrap();
    let (a, b) = (a.values()[0], b.values()[0]);
    assert!((a - b).abs() <= 1e-4 * a, "{a} vs {b}");
}

fn covering_radius(points: &[f32], dim: usize, centres: &[usize]) -> f32 {
    points
        .chunks_exact(dim)
        .map(|p| {
            centres
                .iter()
                .map(|&c| {
                    let q = &points[c * dim..(c + 1) * dim];
                    p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
                })
                .fold(f32::INFINITY, f32::min)
        })
        .fold(0.0, f32::max)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (0..n)
        .flat_map(|last| {
            subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

fn small_points() -> impl Strategy<Value = (usize, Vec<f32>)> {
    (1usize..=3, 1usize..=10).prop_flat_map(|(dim, n)| {
        (Just(dim), prop::collection::vec(-50i32..50, dim * n))
            .prop_map(|(dim, v)| (dim, v.into_iter().map(|x| x as f32).collect()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn greedy_is_within_twice_the_optimal_radius(
        (dim, points) in small_points(),
        k in 1usize..=3,
        start_pick in 0usize..10,
    ) {
        let n = points.len() / dim;
        let k = k.min(n);
        let start = start_pick % n;
        let greedy = greedy_k_center(&points, dim, k, start);
        let ours = covering_radius(&points, dim, &greedy);
        let optimal = subsets(n, k)
            .iter()
            .map(|s| covering_radius(&points, dim, s))
            .fold(f32::INFINITY, f32::min);
        prop_assert!(ours <= 2.0 * optimal + 1e-4, "greedy {} optimal {}", ours, optimal);
    }

    #[test]
    fn greedy_radius_never_grows_with_more_centres(
        (dim, points) in small_points(),
        start_pick in 0usize..10,
    ) {
        let n = points.len() / dim;
        let order = greedy_k_center(&points, dim, n, start_pick % n);
        let mut last = f32::INFINITY;
        for m in 1..=n {
            prop_assert_eq!(&greedy_k_center(&points, dim, m, start_pick % n)[..], &order[..m]);
            let r = covering_radius(&points, dim, &order[..m]);
            prop_assert!(r <= last);
            last = r;
        }
        prop_assert_eq!(last, 0.0);
    }

    #[test]
    fn patchcore_scores_match_brute_force(
        bank_vals in prop::collection::vec(-20i32..20, 3 * 6),
        query_vals in prop::collection::vec(-20i32..20, 3 * 4),
    ) {
        let dim = 3;
        let bank_f: Vec<f32> = bank_vals.iter().map(|&v| v as f32).collect();
        let bank = MemoryBank::new(dim, bank_f.clone(), 1.0, 0, 6).unwrap();
        let grid = FeatureGrid::new(2, 2, dim, query_vals.iter().map(|&v| v as f32).collect()).unwrap();
        let map = score_patchcore(&bank, &grid).unwrap();
        for (cell, &got) in map.values().iter().enumerate() {
            let q = grid.cell(cell);
            let best = bank_f
                .chunks_exact(dim)
                .map(|b| b.iter().zip(q).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            prop_assert!((got - best).abs() <= 1e-6 * best.max(1.0));
        }
    }

    #[test]
    fn patchcore_memory_is_bounded_by_the_ratio(
        n_grids in 1usize..5,
        ratio in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let grids: Vec<FeatureGrid> = (0..n_grids)
            .map(|g| {
                let v = (0..4 * 4 * 2).map(|k| ((k * 7 + g * 13) % 11) as f32).collect();
                FeatureGrid::new(4, 4, 2, v).unwrap()
            })
            .collect();
        let bank = fit_patchcore(&grids, ratio, seed).unwrap();
        let n_source = n_grids * 16;
        prop_assert_eq!(bank.len(), coreset_size(n_source, ratio));
        let bound = ratio * n_source as f64 * 2.0 * 4.0;
        prop_assert!(bank.storage_bytes() as f64 <= bound + 2.0 * 4.0);
    }
}

#[test]
fn patchcore_fit_is_deterministic_per_seed() {
    let grids: Vec<FeatureGrid> = (0..3)
        .map(|g| {
            let v = (0..8 * 8 * 4).map(|k| ((k * 31 + g * 7) % 29) as f32 * 0.5).collect();
            FeatureGrid::new(8, 8, 4, v).unwrap()
        })
        .collect();
    let a = fit_patchcore(&grids, 0.2, 42).unwrap();
    let b = fit_patchcore(&grids, 0.2, 42).unwrap();
    assert_eq!(a, b);
}
