//! Nonnegative least squares by the Lawson-Hanson active-set method,
//! working on the normal equations so one Gram matrix serves every pixel.

use nalgebra::{DMatrix, DVector};

use crate::hsi::EndmemberMatrix;

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub coef: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `min ||x - S phi||^2` subject to `phi >= 0`.
pub fn nnls(s: &EndmemberMatrix, x: &[f64], max_iter: usize) -> NnlsSolution {
    let s = s.data();
    let gram = s.transpose() * s;
    let lin = s.transpose() * DVector::from_column_slice(x);
    nnls_gram(&gram, &lin, max_iter)
}

/// Same problem stated as `min 0.5 phi'G phi - b'phi`, `phi >= 0`, with
/// `G = S'S` and `b = S'x`.
pub fn nnls_gram(gram: &DMatrix<f64>, lin: &DVector<f64>, max_iter: usize) -> NnlsSolution {
    let p = lin.len();
    let scale = gram.diagonal().amax().max(lin.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;

    let mut coef = DVector::<f64>::zeros(p);
    let mut passive = vec![false; p];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // dual vector: negative gradient
        let w = lin - gram * &coef;
        let candidate = (0..p)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(enter) = candidate else {
            converged = true;
            break;
        };
        if iterations >= max_iter {
            break;
        }
        passive[enter] = true;

        loop {
            iterations += 1;
            let z = solve_on(gram, lin, &passive);
            let blocked: Vec<usize> = (0..p).filter(|&j| passive[j] && z[j] <= 0.0).collect();
            if blocked.is_empty() {
                coef = z;
                break;
            }
            let alpha = blocked
                .iter()
                .map(|&j| coef[j] / (coef[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            coef += (z - &coef) * alpha;
            let floor = 1e-15 * (1.0 + coef.amax());
            for j in 0..p {
                if passive[j] && coef[j] <= floor {
                    passive[j] = false;
                    coef[j] = 0.0;
                }
            }
            if iterations >= max_iter {
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
    }
    for v in coef.iter_mut() {
        *v = v.max(0.0);
    }
    NnlsSolution { coef, iterations, converged }
}

/// Unconstrained least squares restricted to the passive set; the other
/// coordinates are zero.
fn solve_on(gram: &DMatrix<f64>, lin: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |r, c| gram[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(k, |r, _| lin[idx[r]]);
    let sol = match sub.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => sub
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(k)),
    };
    let mut full = DVector::zeros(passive.len());
    for (r, &j) in idx.iter().enumerate() {
        full[j] = sol[r];
    }
    full
}

/// Largest violation of the NNLS optimality conditions at `phi`:
/// complementarity `phi_i |g_i|` and dual feasibility `max(0, -g_i)`, where
/// `g = G phi - b` is the gradient.
pub fn kkt_residual(gram: &DMatrix<f64>, lin: &DVector<f64>, phi: &DVector<f64>) -> f64 {
    let g = gram * phi - lin;
    phi.iter()
        .zip(g.iter())
        .map(|(x, gi)| (x * gi.abs()).max((-gi).max(0.0)))
        .fold(0.0, f64::max)
}
