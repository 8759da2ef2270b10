mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use unmix_core::extract::spherical_kmeans;
use unmix_core::metrics::armse;
use unmix_core::simgen::{generate_scene, SceneSpec};
use unmix_core::solvers::{elmm, fclsu, relmm, sclsu, SolverConfig};
use unmix_core::{AbundanceMatrix, EndmemberMatrix, SpectralCube};

fn simplex_columns(p: usize, n: usize, r: &mut impl Rng) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(p, n, |_, _| -r.random_range(1e-6f64..1.0).ln());
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    // pure pixels first
    for k in 0..p {
        a.column_mut(k).fill(0.0);
        a[(k, k)] = 1.0;
    }
    a
}

#[test]
fn fclsu_recovers_noiseless_lmm() {
    let mut r = rng(51);
    let s = EndmemberMatrix::new(positive_matrix(25, 4, &mut r)).unwrap();
    let a = simplex_columns(4, 300, &mut r);
    let cube = SpectralCube::from_pixels(s.data() * &a).unwrap();
    let cfg = SolverConfig { epsilon: 1e-6, max_inner_iter: 5000, ..SolverConfig::default() };
    let res = fclsu(&cube, &s, &cfg).unwrap();
    let truth = AbundanceMatrix::new(a).unwrap();
    assert!(armse(&res.abundances, &truth).unwrap() < 1e-6);
}

#[test]
fn sclsu_recovers_scaled_cone() {
    let mut r = rng(52);
    let s0 = EndmemberMatrix::normalized(positive_matrix(25, 3, &mut r)).unwrap();
    let a = simplex_columns(3, 200, &mut r);
    let psi = DVector::from_fn(200, |_, _| r.random_range(0.5..1.5));
    let mut x = s0.data() * &a;
    for (mut c, v) in x.column_iter_mut().zip(psi.iter()) {
        c *= *v;
    }
    let res = sclsu(&SpectralCube::from_pixels(x).unwrap(), &s0, &SolverConfig::default()).unwrap();
    assert!((res.abundances.data() - &a).amax() < 1e-6);
    for (px, v) in psi.iter().enumerate() {
        assert!(res.scalings.data().column(px).iter().all(|s| (s - v).abs() < 1e-6));
    }
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

#[test]
fn variability_solvers_descend() {
    let spec = SceneSpec { bands: 50, lines: 20, samples: 20, shadow_fraction: 0.02, seed: 3, ..SceneSpec::default() };
    let (cube, _) = generate_scene(&spec).unwrap();
    let refs = spherical_kmeans(&cube, 3, 3).unwrap().endmembers;
    let cfg = SolverConfig::default();
    let init = sclsu(&cube, &refs, &cfg).unwrap();
    let e = elmm(&cube, &refs, &SolverConfig { lambda_s: 0.01, ..cfg.clone() }, &init).unwrap();
    assert!(monotone(&e.objective_trace));
    let rl = relmm(&cube, &refs, &cfg).unwrap();
    assert!(monotone(&rl.objective_trace));
    assert!(rl.references.is_normalized());
    assert!(rl.abundances.is_column_stochastic(1e-9));
    // without the unit-norm constraint, shrinking the references while the
    // scalings grow lowers the volume term at no cost elsewhere
    let free = relmm(&cube, &refs, &SolverConfig { normalize_references: false, ..cfg }).unwrap();
    assert!(monotone(&free.objective_trace));
    assert!(free.references.data().column_iter().all(|c| c.norm() < 1.0));
}

#[test]
fn relmm_needs_positive_lambda() {
    let mut r = rng(53);
    let s = EndmemberMatrix::new(positive_matrix(5, 2, &mut r)).unwrap();
    let cube = SpectralCube::from_pixels(positive_matrix(5, 10, &mut r)).unwrap();
    assert!(relmm(&cube, &s, &SolverConfig { lambda_s: 0.0, ..SolverConfig::default() }).is_err());
}

#[test]
fn relmm_ignores_reference_scaling() {
    let spec = SceneSpec { bands: 40, lines: 12, samples: 12, seed: 6, ..SceneSpec::default() };
    let (cube, _) = generate_scene(&spec).unwrap();
    // unflagged, so both inputs take the same normalization path
    let refs = EndmemberMatrix::new(spherical_kmeans(&cube, 3, 6).unwrap().endmembers.into_inner()).unwrap();
    // powers of two keep the normalization bitwise exact
    let scaled = EndmemberMatrix::new(refs.data() * DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 2.0, 8.0])))
        .unwrap();
    assert_eq!(scaled.to_normalized().data(), refs.to_normalized().data());
    let cfg = SolverConfig { max_outer_iter: 10, ..SolverConfig::default() };
    let a = relmm(&cube, &refs, &cfg).unwrap();
    let b = relmm(&cube, &scaled, &cfg).unwrap();
    assert_eq!(a.abundances.data(), b.abundances.data());
    assert_eq!(a.references.data(), b.references.data());
    assert_eq!(a.objective_trace, b.objective_trace);

    let mut r = rng(53);
    let factors: Vec<f64> = (0..3).map(|_| r.random_range(0.1..10.0)).collect();
    let arbitrary =
        EndmemberMatrix::new(refs.data() * DMatrix::from_diagonal(&DVector::from_vec(factors))).unwrap();
    // other scalings agree to the rounding of an L-term norm
    let bound = 4.0 * refs.bands() as f64 * f64::EPSILON;
    assert!((arbitrary.to_normalized().data() - refs.to_normalized().data()).amax() < bound);
}
