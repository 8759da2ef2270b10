mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use unmix_core::solvers::solve_simplex_qp;
use unmix_core::hsi::{perspective_project, PERSPECTIVE_FLOOR};

/// Points drawn from a polyhedral cone land, after perspective projection,
/// inside the convex hull of the projected generators.
#[test]
fn cone_projects_into_simplex() {
    let mut r = rng(21);
    for trial in 0..50 {
        let p = [2, 3, 5][trial % 3];
        let gens = positive_matrix(20, p, &mut r);
        let u = DVector::from_fn(20, |_, _| r.random_range(0.1..1.0));
        let projected = DMatrix::from_columns(
            &gens
                .column_iter()
                .map(|g| perspective_project(g.as_slice(), u.as_slice(), PERSPECTIVE_FLOOR).unwrap())
                .collect::<Vec<_>>(),
        );
        let gram = projected.transpose() * &projected;
        let start = DVector::from_element(p, 1.0 / p as f64);
        for _ in 0..10 {
            let coef = DVector::from_fn(p, |_, _| r.random_range(0.0..3.0));
            let x = &gens * coef;
            let y = perspective_project(x.as_slice(), u.as_slice(), PERSPECTIVE_FLOOR).unwrap();
            let sol = solve_simplex_qp(&gram, &projected.tr_mul(&y), &start, 1e-14, 20_000);
            assert!(sol.x.iter().all(|v| *v >= 0.0));
            assert!((sol.x.sum() - 1.0).abs() < 1e-12);
            let resid = (&y - &projected * &sol.x).norm();
            assert!(resid < 1e-8, "trial {trial}: residual {resid}");
        }
    }
}
