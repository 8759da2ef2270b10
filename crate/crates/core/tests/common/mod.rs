#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn positive_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.05..1.0))
}

pub fn unit_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let mut m = m;
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

/// Nonzero subsets of `0..p` as index lists.
fn subsets(p: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << p)).map(move |mask| (0..p).filter(|i| mask & (1 << i) != 0).collect())
}

/// Euclidean projection onto the unit simplex by enumerating supports: on
/// each support the equality-constrained projection is a uniform shift;
/// the closest feasible candidate wins.
pub fn simplex_projection_oracle(y: &[f64]) -> Vec<f64> {
    let p = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in subsets(p) {
        let shift = (support.iter().map(|&i| y[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; p];
        let mut feasible = true;
        for &i in &support {
            x[i] = y[i] - shift;
            feasible &= x[i] >= 0.0;
        }
        if !feasible {
            continue;
        }
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|b| dist < b.0) {
            best = Some((dist, x));
        }
    }
    best.expect("a vertex is always feasible").1
}

/// Nonnegative least squares by enumerating passive sets: unconstrained
/// least squares on each subset, keeping the best nonnegative candidate.
pub fn nnls_oracle(s: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let p = s.ncols();
    let mut best = (x.norm_squared(), DVector::zeros(p));
    for support in subsets(p) {
        let sub = DMatrix::from_columns(&support.iter().map(|&i| s.column(i)).collect::<Vec<_>>());
        let Some(chol) = (sub.transpose() * &sub).cholesky() else { continue };
        let coef = chol.solve(&sub.tr_mul(x));
        if coef.iter().any(|c| *c < 0.0) {
            continue;
        }
        let resid = (x - &sub * &coef).norm_squared();
        if resid < best.0 {
            let mut full = DVector::zeros(p);
            for (k, &i) in support.iter().enumerate() {
                full[i] = coef[k];
            }
            best = (resid, full);
        }
    }
    best.1
}

pub fn degrees(a: &[f64], b: &[f64]) -> f64 {
    unmix_core::spectral_angle(a, b).unwrap().to_degrees()
}
