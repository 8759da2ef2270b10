mod common;

use common::*;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use unmix_core::metrics::{align_classes, armse, evaluate, permute_columns, permute_rows};
use unmix_core::simgen::{generate_scene, noiseless_signal, GmmComponent, SceneSpec};
use unmix_core::solvers::{fclsu, SolverConfig};
use unmix_core::subspace::{estimate_id, numerical_rank};
use unmix_core::{AbundanceMatrix, EndmemberMatrix, SpectralCube};
use itertools::Itertools;

const FLAT_GMM: [GmmComponent; 4] = [GmmComponent { mean: 1.0, std_dev: 0.0, weight: 0.25 }; 4];

fn small(seed: u64) -> SceneSpec {
    SceneSpec { bands: 60, lines: 30, samples: 30, seed, ..SceneSpec::default() }
}

#[test]
fn realized_snr_matches_spec() {
    for seed in 0..3 {
        let spec = small(seed);
        let (cube, truth) = generate_scene(&spec).unwrap();
        let clean = noiseless_signal(&truth);
        let noise = cube.data() - &clean;
        let snr = 10.0 * (clean.norm_squared() / noise.norm_squared()).log10();
        assert!((snr - spec.snr_db).abs() < 0.5, "snr {snr}");
    }
}

#[test]
fn dirichlet_abundances_are_sparse() {
    let (_, truth) = generate_scene(&SceneSpec { bands: 20, lines: 100, samples: 100, ..small(1) }).unwrap();
    let a = truth.abundances.data();
    let sparse = a.column_iter().filter(|c| c.max() > 0.9).count();
    assert!(sparse as f64 >= 0.3 * a.ncols() as f64, "{sparse} of {}", a.ncols());
}

#[test]
fn noiseless_single_variant_scene_is_exact_lmm() {
    let spec = SceneSpec { snr_db: f64::INFINITY, variants_per_class: 1, gmm: FLAT_GMM, ..small(2) };
    let (cube, truth) = generate_scene(&spec).unwrap();
    let cfg = SolverConfig { epsilon: 1e-6, max_inner_iter: 5000, ..SolverConfig::default() };
    let res = fclsu(&cube, &truth.library.references, &cfg).unwrap();
    assert!(armse(&res.abundances, &truth.abundances).unwrap() < 1e-6);
}

#[test]
fn shadows_create_dark_pixels() {
    // at 30 dB the noise alone is about 3% of a typical pixel norm, so the
    // contrast is checked on the noiseless scene
    let spec = SceneSpec { shadow_fraction: 0.02, snr_db: f64::INFINITY, ..small(3) };
    let (cube, truth) = generate_scene(&spec).unwrap();
    assert_eq!(truth.shadow_pixels.len(), 18);
    let mut norms: Vec<f64> = cube.data().column_iter().map(|c| c.norm()).collect();
    norms.sort_by(f64::total_cmp);
    assert!(norms[0] < 0.02 * norms[norms.len() / 2]);
}

#[test]
fn variability_inflates_dimension() {
    let (cube, _) = generate_scene(&small(4)).unwrap();
    assert!(estimate_id(&cube).dimension > 3);
    let spec = SceneSpec { variants_per_class: 1, gmm: FLAT_GMM, ..small(4) };
    let (cube, _) = generate_scene(&spec).unwrap();
    assert_eq!(estimate_id(&cube).dimension, 3);
}

#[test]
fn five_independent_variants_give_dimension_five() {
    let mut r = rng(41);
    let variants = positive_matrix(40, 5, &mut r);
    let mix = positive_matrix(5, 3000, &mut r);
    let clean = &variants * mix;
    let rank = numerical_rank(&clean, 1e-8);
    let normal = Normal::new(0.0, 1e-3).unwrap();
    let noisy = &clean + DMatrix::from_fn(40, 3000, |_, _| normal.sample(&mut r));
    assert_eq!(estimate_id(&SpectralCube::from_pixels(noisy).unwrap()).dimension, rank);
}

#[test]
fn alignment_matches_brute_force() {
    let mut r = rng(42);
    for _ in 0..20 {
        let truth = EndmemberMatrix::new(positive_matrix(10, 4, &mut r)).unwrap();
        let est = EndmemberMatrix::new(positive_matrix(10, 4, &mut r)).unwrap();
        let perm = align_classes(&est, &truth).unwrap();
        let cost = |p: &[usize]| -> f64 {
            p.iter().enumerate().map(|(i, &j)| degrees(truth.data().column(i).as_slice(), est.data().column(j).as_slice())).sum()
        };
        let best = (0..4).permutations(4).map(|p| cost(&p)).fold(f64::INFINITY, f64::min);
        assert!((cost(&perm) - best).abs() < 1e-9);
    }
}

#[test]
fn aligned_armse_is_minimal_over_permutations() {
    let (cube, truth) = generate_scene(&small(5)).unwrap();
    let refs = &truth.library.references;
    let shuffled = EndmemberMatrix::new(permute_columns(refs.data(), &[2, 0, 1])).unwrap();
    let res = fclsu(&cube, &shuffled, &SolverConfig::default()).unwrap();
    let report = evaluate(&cube, &res, &truth).unwrap();
    for perm in (0..3).permutations(3) {
        let a = AbundanceMatrix::new(permute_rows(res.abundances.data(), &perm)).unwrap();
        assert!(report.armse <= armse(&a, &truth.abundances).unwrap() + 1e-15);
    }
}
