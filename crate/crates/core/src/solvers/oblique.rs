//! Riemannian conjugate gradient on the oblique manifold (matrices with
//! unit-norm columns), and the reference-endmember objective it minimizes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, UnmixError};
use crate::hsi::{EndmemberMatrix, LocalEndmemberStack};

/// A smooth function of an `L x P` matrix restricted to the oblique
/// manifold.
pub trait ObliqueObjective {
    fn value(&self, s0: &DMatrix<f64>) -> f64;
    fn euclidean_gradient(&self, s0: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Column-wise projection onto the tangent space at `x`:
/// `g_p - (x_p' g_p) x_p`.
pub fn project_tangent(x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = g.clone();
    for (p, mut col) in out.column_iter_mut().enumerate() {
        let xp = x.column(p);
        let inner = xp.dot(&col);
        col.axpy(-inner, &xp, 1.0);
    }
    out
}

/// Retraction by column renormalization of `x + v`.
pub fn retract(x: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x + v;
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    out
}

pub fn riemannian_gradient<O: ObliqueObjective + ?Sized>(obj: &O, x: &DMatrix<f64>) -> DMatrix<f64> {
    project_tangent(x, &obj.euclidean_gradient(x))
}

/// `V = P I - 1 1'`.
pub fn volume_matrix(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { p as f64 - 1.0 } else { -1.0 })
}

/// `tr(S V S')`, evaluated as `P ||S||_F^2 - ||S 1||^2`.
pub fn volume_penalty(s0: &DMatrix<f64>) -> f64 {
    let p = s0.ncols() as f64;
    let row_sums: DVector<f64> = s0.column_sum();
    p * s0.norm_squared() - row_sums.norm_squared()
}

/// Sum of squared Euclidean distances over all pairs of columns.
pub fn pairwise_sq_distances(s0: &DMatrix<f64>) -> f64 {
    let p = s0.ncols();
    let mut total = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            total += (s0.column(i) - s0.column(j)).norm_squared();
        }
    }
    total
}

/// The part of the RELMM objective that depends on the references:
///
/// `lambda_s / 2 * sum_n ||S_n - S0 diag(psi_n)||_F^2 + lambda_s0 / 2 * tr(S0 V S0')`
///
/// The pixel sum is folded into per-endmember sufficient statistics
/// (`sum_n ||s_np||^2`, `sum_n psi_pn s_np`, `sum_n psi_pn^2`), accumulated
/// in pixel order.
#[derive(Debug, Clone)]
pub struct ReferenceObjective {
    pub lambda_s: f64,
    pub lambda_s0: f64,
    local_sq_norms: Vec<f64>,
    moments: DMatrix<f64>,
    psi_sq_sums: Vec<f64>,
}

impl ReferenceObjective {
    pub fn new(
        locals: &LocalEndmemberStack,
        psi: &DMatrix<f64>,
        lambda_s: f64,
        lambda_s0: f64,
    ) -> Result<Self> {
        let (l, p, n) = (locals.bands(), locals.endmembers(), locals.pixels());
        if psi.nrows() != p || psi.ncols() != n {
            return Err(UnmixError::Dimension(format!(
                "scalings are {}x{}, expected {p}x{n}",
                psi.nrows(),
                psi.ncols()
            )));
        }
        let mut local_sq_norms = vec![0.0; p];
        let mut moments = DMatrix::zeros(l, p);
        let mut psi_sq_sums = vec![0.0; p];
        for px in 0..n {
            let sn = locals.get(px);
            for k in 0..p {
                let col = sn.column(k);
                let w = psi[(k, px)];
                local_sq_norms[k] += col.norm_squared();
                moments.column_mut(k).axpy(w, &col, 1.0);
                psi_sq_sums[k] += w * w;
            }
        }
        Ok(Self { lambda_s, lambda_s0, local_sq_norms, moments, psi_sq_sums })
    }

    /// Minimizer without the unit-norm constraint:
    /// `S0 = lambda_s M (lambda_s Q + lambda_s0 V)^-1` with `Q = diag(sum psi^2)`.
    pub fn unconstrained_minimizer(&self) -> Result<DMatrix<f64>> {
        let p = self.psi_sq_sums.len();
        let mut system = volume_matrix(p) * self.lambda_s0;
        for k in 0..p {
            system[(k, k)] += self.lambda_s * self.psi_sq_sums[k];
        }
        let chol = system.cholesky().ok_or_else(|| {
            UnmixError::Numerical("reference normal matrix is not positive definite".into())
        })?;
        // S0 H = lambda_s M with H symmetric  =>  H S0' = lambda_s M'
        let rhs = self.moments.transpose() * self.lambda_s;
        Ok(chol.solve(&rhs).transpose())
    }
}

impl ObliqueObjective for ReferenceObjective {
    fn value(&self, s0: &DMatrix<f64>) -> f64 {
        let mut fit = 0.0;
        for k in 0..s0.ncols() {
            let col = s0.column(k);
            fit += self.local_sq_norms[k] - 2.0 * col.dot(&self.moments.column(k))
                + self.psi_sq_sums[k] * col.norm_squared();
        }
        0.5 * self.lambda_s * fit + 0.5 * self.lambda_s0 * volume_penalty(s0)
    }

    fn euclidean_gradient(&self, s0: &DMatrix<f64>) -> DMatrix<f64> {
        let p = s0.ncols();
        let mut grad = s0 * volume_matrix(p) * self.lambda_s0;
        for k in 0..p {
            let mut col = grad.column_mut(k);
            col.axpy(self.lambda_s * self.psi_sq_sums[k], &s0.column(k), 1.0);
            col.axpy(-self.lambda_s, &self.moments.column(k), 1.0);
        }
        grad
    }
}

#[derive(Debug, Clone)]
pub struct CgOptions {
    pub max_iter: usize,
    /// Stop when the Riemannian gradient norm drops below this fraction of
    /// its initial value.
    pub grad_rel_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Restart with steepest descent every this many iterations
    /// (`0` means `P * L`).
    pub restart_every: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_rel_tol: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            restart_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub point: EndmemberMatrix,
    pub initial_value: f64,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The line search failed along both the conjugate and the steepest
    /// descent direction.
    pub stalled: bool,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Armijo backtracking along `dir` from `x`. Returns the accepted point,
/// its value and the step.
fn backtrack<O: ObliqueObjective + ?Sized>(
    obj: &O,
    x: &DMatrix<f64>,
    fx: f64,
    dir: &DMatrix<f64>,
    slope: f64,
    alpha0: f64,
    opts: &CgOptions,
) -> Option<(DMatrix<f64>, f64, f64)> {
    let mut alpha = alpha0;
    for _ in 0..opts.max_backtracks {
        let candidate = retract(x, &(dir * alpha));
        let fc = obj.value(&candidate);
        if fc.is_finite() && fc <= fx + opts.armijo * alpha * slope {
            return Some((candidate, fc, alpha));
        }
        alpha *= opts.shrink;
    }
    None
}

/// Riemannian conjugate gradient from `s0` (which must be normalized).
///
/// Directions use the Hestenes-Stiefel formula (clipped at zero) with
/// vector transport by tangent projection, restarting on loss of descent
/// and every `restart_every` iterations. Steps come from Armijo
/// backtracking; a failed search along the conjugate direction is retried
/// along the negative gradient, and a second failure ends the run with
/// `stalled` set. The objective never increases.
pub fn oblique_cg_step<O: ObliqueObjective + ?Sized>(
    s0: &EndmemberMatrix,
    obj: &O,
    opts: &CgOptions,
) -> Result<CgOutcome> {
    if !s0.is_normalized() {
        return Err(UnmixError::InvalidValue(
            "oblique CG needs a normalized starting point".into(),
        ));
    }
    let mut x = s0.data().clone();
    let (l, p) = x.shape();
    let restart_every = if opts.restart_every == 0 { l * p } else { opts.restart_every };

    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(UnmixError::Numerical("reference objective is not finite".into()));
    }
    let initial_value = fx;
    let mut grad = riemannian_gradient(obj, &x);
    let g0 = grad.norm();
    let mut dir = -&grad;
    let mut alpha_prev = 1.0 / g0.max(1.0);
    let mut since_restart = 0;
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < opts.max_iter {
        let gnorm = grad.norm();
        if gnorm == 0.0 || gnorm <= opts.grad_rel_tol * g0 {
            break;
        }
        iterations += 1;
        let mut slope = inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -&grad;
            slope = -gnorm * gnorm;
            since_restart = 0;
        }
        let alpha0 = 2.0 * alpha_prev;
        let step = backtrack(obj, &x, fx, &dir, slope, alpha0, opts).or_else(|| {
            dir = -&grad;
            since_restart = 0;
            backtrack(obj, &x, fx, &dir, -gnorm * gnorm, alpha0.max(1.0 / gnorm), opts)
        });
        let Some((x_new, f_new, alpha)) = step else {
            stalled = true;
            break;
        };
        let decrease = fx - f_new;
        alpha_prev = alpha;

        let grad_new = riemannian_gradient(obj, &x_new);
        let dir_t = project_tangent(&x_new, &dir);
        let grad_t = project_tangent(&x_new, &grad);
        since_restart += 1;
        let beta = if since_restart >= restart_every {
            since_restart = 0;
            0.0
        } else {
            let y = &grad_new - &grad_t;
            let denom = inner(&dir_t, &y);
            if denom.abs() > f64::MIN_POSITIVE {
                (inner(&grad_new, &y) / denom).max(0.0)
            } else {
                0.0
            }
        };
        dir = &dir_t * beta - &grad_new;
        x = x_new;
        fx = f_new;
        grad = grad_new;
        if decrease <= 1e-16 * fx.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let grad_norm = grad.norm();
    Ok(CgOutcome {
        point: EndmemberMatrix::from_unit_columns(x)?,
        initial_value,
        value: fx,
        iterations,
        grad_norm,
        stalled,
    })
}
