//! Euclidean projection onto the unit simplex and the simplex-constrained
//! quadratic solver used for every abundance update.

use nalgebra::{DMatrix, DVector};

/// Projection of `v` onto `{a >= 0, sum(a) = 1}` by the sort-and-threshold
/// algorithm.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn project_in_place(v: &mut DVector<f64>) {
    let p = project_simplex(v.as_slice());
    v.copy_from_slice(&p);
}

/// Outcome of a simplex-constrained quadratic solve.
#[derive(Debug, Clone)]
pub struct SimplexQpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `0.5 a'Ga - b'a` over the unit simplex.
///
/// `G` must be symmetric positive semidefinite (it is `S'S` for the
/// least-squares problems solved here). The iteration is projected
/// gradient with the constant step `1 / lambda_max(G)`, accelerated by
/// momentum that is kept only while it does not increase the objective,
/// so the objective never rises above its value at `start`. It stops once
/// the plain projected-gradient step changes the iterate by less than
/// `tol` relative to its norm. A final pass solves the equality-constrained
/// problem on the detected support and keeps that point when it is
/// feasible and no worse.
pub fn solve_simplex_qp(
    gram: &DMatrix<f64>,
    lin: &DVector<f64>,
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> SimplexQpSolution {
    let p = lin.len();
    let objective = |a: &DVector<f64>| 0.5 * a.dot(&(gram * a)) - lin.dot(a);

    let mut x = start.clone();
    project_in_place(&mut x);
    if p == 1 {
        return SimplexQpSolution { x, iterations: 0, converged: true };
    }
    let lipschitz = gram.clone().symmetric_eigenvalues().max();
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return SimplexQpSolution { x, iterations: 0, converged: true };
    }
    let step = 1.0 / lipschitz;

    let mut fx = objective(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut plain = &x - (gram * &x - lin) * step;
        project_in_place(&mut plain);
        let change = (&plain - &x).norm();
        if change <= tol * x.norm().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let mut accel = &y - (gram * &y - lin) * step;
        project_in_place(&mut accel);

        let f_plain = objective(&plain);
        let f_accel = objective(&accel);
        let x_prev = x.clone();
        if f_accel <= f_plain && f_accel <= fx {
            x = accel;
            fx = f_accel;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
        } else {
            // plain projected-gradient steps never increase the objective
            if f_plain <= fx {
                x = plain;
                fx = f_plain;
            }
            y = x.clone();
            t = 1.0;
        }
    }

    if let Some(polished) = polish_on_support(gram, lin, &x) {
        if objective(&polished) <= fx {
            x = polished;
        }
    }
    SimplexQpSolution { x, iterations, converged }
}

/// Solves the KKT system of the problem restricted to the support of `x`
/// with only the sum-to-one constraint active. Returns `None` when that
/// system is singular or the solution leaves the nonnegative orthant.
fn polish_on_support(gram: &DMatrix<f64>, lin: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
    let k = support.len();
    if k == 0 {
        return None;
    }
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            kkt[(r, c)] = gram[(i, j)];
        }
        kkt[(r, k)] = 1.0;
        kkt[(k, r)] = 1.0;
        rhs[r] = lin[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = DVector::zeros(x.len());
    for (r, &i) in support.iter().enumerate() {
        if sol[r] < 0.0 {
            return None;
        }
        out[i] = sol[r];
    }
    let total = out.sum();
    if (total - 1.0).abs() > 1e-12 {
        out /= total;
    }
    Some(out)
}
