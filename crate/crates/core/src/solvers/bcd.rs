//! Block-coordinate descent for the extended linear mixing model (fixed
//! references) and its reference-refining variant.
//!
//! The objective is
//!
//! ```text
//! 1/2 sum_n ( ||x_n - S_n a_n||^2 + lambda_s ||S_n - S0 diag(psi_n)||_F^2 )
//!     + lambda_s0 / 2 tr(S0 V S0')          (reference refinement only)
//! ```
//!
//! with `a_n` on the unit simplex. One outer iteration updates the local
//! endmembers, then abundances and scalings (one block), then the
//! references. Each update is an exact minimizer or a monotone descent
//! method, so the objective trace never increases.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::oblique::{oblique_cg_step, volume_penalty, CgOptions, CgOutcome, ReferenceObjective};
use super::simplex::solve_simplex_qp;
use super::{least_squares::sclsu, reconstruction_rmse, SolverConfig, UnmixResult};
use crate::error::{Result, UnmixError};
use crate::hsi::{
    AbundanceMatrix, EndmemberMatrix, LocalEndmemberStack, ScalingMatrix, SpectralCube,
};

/// Mutable iterate of the block-coordinate descent.
#[derive(Debug, Clone)]
pub struct BcdState {
    pub abundances: DMatrix<f64>,
    pub scalings: DMatrix<f64>,
    pub locals: LocalEndmemberStack,
    pub references: DMatrix<f64>,
}

impl BcdState {
    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        let (l, n) = x.shape();
        let p = self.references.ncols();
        let ok = self.references.nrows() == l
            && self.abundances.shape() == (p, n)
            && self.scalings.shape() == (p, n)
            && self.locals.bands() == l
            && self.locals.endmembers() == p
            && self.locals.pixels() == n;
        if ok {
            Ok(())
        } else {
            Err(UnmixError::Dimension(format!(
                "solver state does not match a {l}x{n} image with {p} endmembers"
            )))
        }
    }
}

/// Squared norms of the change and of the previous value, summed in pixel
/// order.
#[derive(Debug, Clone, Copy, Default)]
struct Change {
    diff_sq: f64,
    base_sq: f64,
}

impl Change {
    fn of(old: &[f64], new: &[f64]) -> Self {
        let mut c = Change::default();
        for (o, n) in old.iter().zip(new) {
            c.diff_sq += (n - o) * (n - o);
            c.base_sq += o * o;
        }
        c
    }

    fn sum(parts: &[Change]) -> Self {
        parts.iter().fold(Change::default(), |acc, c| Change {
            diff_sq: acc.diff_sq + c.diff_sq,
            base_sq: acc.base_sq + c.base_sq,
        })
    }

    fn relative(&self) -> f64 {
        if self.base_sq > 0.0 {
            (self.diff_sq / self.base_sq).sqrt()
        } else {
            self.diff_sq.sqrt()
        }
    }
}

/// Closed-form local endmember update
/// `S_n = (x_n a_n' + lambda_s S0 diag(psi_n)) (a_n a_n' + lambda_s I)^-1`.
/// Returns the relative change of the whole stack.
pub fn update_locals(x: &DMatrix<f64>, state: &mut BcdState, lambda_s: f64) -> Result<f64> {
    state.check(x)?;
    let (l, p) = state.references.shape();
    let BcdState { abundances, scalings, locals, references } = state;
    let block = locals.block_len();
    let changes: Vec<Result<Change>> = locals
        .as_mut_slice()
        .par_chunks_mut(block)
        .enumerate()
        .map(|(n, chunk)| {
            let a = abundances.column(n);
            let mut gram = &a * a.transpose();
            for k in 0..p {
                gram[(k, k)] += lambda_s;
            }
            let chol = gram.cholesky().ok_or_else(|| {
                UnmixError::Numerical(format!("local endmember system of pixel {n} is singular"))
            })?;
            let mut rhs = x.column(n) * a.transpose();
            for k in 0..p {
                rhs.column_mut(k).axpy(lambda_s * scalings[(k, n)], &references.column(k), 1.0);
            }
            // gram is symmetric: S_n gram = rhs  <=>  gram S_n' = rhs'
            let solved = chol.solve(&rhs.transpose()).transpose();
            debug_assert_eq!(solved.shape(), (l, p));
            let change = Change::of(chunk, solved.as_slice());
            chunk.copy_from_slice(solved.as_slice());
            Ok(change)
        })
        .collect();
    let changes = changes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Change::sum(&changes).relative())
}

/// Per-pixel simplex-constrained least squares against `S_n`, warm-started
/// from the current abundances. Returns the relative change and the pixels
/// whose inner solver hit `max_iter`.
pub fn update_abundances(
    x: &DMatrix<f64>,
    state: &mut BcdState,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<usize>)> {
    state.check(x)?;
    let p = state.references.ncols();
    let BcdState { abundances, locals, .. } = state;
    let locals = &*locals;
    let out: Vec<(Change, bool)> = abundances
        .as_mut_slice()
        .par_chunks_mut(p)
        .enumerate()
        .map(|(n, a)| {
            let sn = locals.get(n);
            let gram = sn.tr_mul(&sn);
            let lin = sn.tr_mul(&x.column(n));
            let start = DVector::from_column_slice(a);
            let sol = solve_simplex_qp(&gram, &lin, &start, tol, max_iter);
            let change = Change::of(a, sol.x.as_slice());
            a.copy_from_slice(sol.x.as_slice());
            (change, sol.converged)
        })
        .collect();
    let flagged = out.iter().enumerate().filter(|(_, (_, ok))| !ok).map(|(n, _)| n).collect();
    let changes: Vec<Change> = out.into_iter().map(|(c, _)| c).collect();
    Ok((Change::sum(&changes).relative(), flagged))
}

/// Closed-form scaling update `psi_pn = s0_p' s_np / ||s0_p||^2`, floored.
pub fn update_scalings(x: &DMatrix<f64>, state: &mut BcdState, floor: f64) -> Result<f64> {
    state.check(x)?;
    let p = state.references.ncols();
    let BcdState { scalings, locals, references, .. } = state;
    let locals = &*locals;
    let sq_norms: Vec<f64> = references.column_iter().map(|c| c.norm_squared()).collect();
    let changes: Vec<Change> = scalings
        .as_mut_slice()
        .par_chunks_mut(p)
        .enumerate()
        .map(|(n, psi)| {
            let sn = locals.get(n);
            let new: Vec<f64> = (0..p)
                .map(|k| (references.column(k).dot(&sn.column(k)) / sq_norms[k]).max(floor))
                .collect();
            let change = Change::of(psi, &new);
            psi.copy_from_slice(&new);
            change
        })
        .collect();
    Ok(Change::sum(&changes).relative())
}

/// Reference update: Riemannian CG on the oblique manifold, or the
/// closed-form minimizer when `cfg.normalize_references` is false.
/// Returns the relative change and the CG outcome, if CG ran.
pub fn update_references(
    x: &DMatrix<f64>,
    state: &mut BcdState,
    cfg: &SolverConfig,
) -> Result<(f64, Option<CgOutcome>)> {
    state.check(x)?;
    let obj = ReferenceObjective::new(&state.locals, &state.scalings, cfg.lambda_s, cfg.lambda_s0)?;
    let (new, outcome) = if cfg.normalize_references {
        let start = EndmemberMatrix::from_unit_columns(state.references.clone())?;
        let opts = CgOptions { max_iter: cfg.max_inner_iter, ..CgOptions::default() };
        let outcome = oblique_cg_step(&start, &obj, &opts)?;
        // near convergence the Armijo test sits at rounding level, so a
        // stall is the usual way the inner solve ends
        if outcome.stalled {
            debug!("reference line search stalled after {} iterations", outcome.iterations);
        }
        (outcome.point.data().clone(), Some(outcome))
    } else {
        (obj.unconstrained_minimizer()?, None)
    };
    let change = Change::of(state.references.as_slice(), new.as_slice()).relative();
    state.references = new;
    Ok((change, outcome))
}

/// Full objective, reduced in pixel order. `lambda_s0 = None` drops the
/// volume term (fixed references).
pub fn objective(x: &DMatrix<f64>, state: &BcdState, lambda_s: f64, lambda_s0: Option<f64>) -> f64 {
    let p = state.references.ncols();
    let terms: Vec<f64> = (0..x.ncols())
        .into_par_iter()
        .map(|n| {
            let sn = state.locals.get(n);
            let fit = (x.column(n) - &sn * state.abundances.column(n)).norm_squared();
            let mut pull = 0.0;
            for k in 0..p {
                let psi = state.scalings[(k, n)];
                pull += sn
                    .column(k)
                    .iter()
                    .zip(state.references.column(k).iter())
                    .map(|(s, r)| (s - psi * r).powi(2))
                    .sum::<f64>();
            }
            0.5 * (fit + lambda_s * pull)
        })
        .collect();
    let mut total: f64 = terms.iter().sum();
    if let Some(l0) = lambda_s0 {
        total += 0.5 * l0 * volume_penalty(&state.references);
    }
    total
}

fn run(
    cube: &SpectralCube,
    mut state: BcdState,
    cfg: &SolverConfig,
    refine_references: bool,
) -> Result<UnmixResult> {
    let x = cube.data();
    state.check(x)?;
    let volume = refine_references.then_some(cfg.lambda_s0);
    let inner_tol = cfg.epsilon * 1e-2;

    let mut trace = vec![objective(x, &state, cfg.lambda_s, volume)];
    if !trace[0].is_finite() {
        return Err(UnmixError::Numerical("initial objective is not finite".into()));
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut flagged = Vec::new();
    while iterations < cfg.max_outer_iter {
        iterations += 1;
        let d_locals = update_locals(x, &mut state, cfg.lambda_s)?;
        let (d_abund, unconverged) = update_abundances(x, &mut state, inner_tol, cfg.max_inner_iter)?;
        let d_psi = update_scalings(x, &mut state, cfg.psi_floor)?;
        let d_refs = if refine_references {
            update_references(x, &mut state, cfg)?.0
        } else {
            0.0
        };
        flagged = unconverged;

        let f = objective(x, &state, cfg.lambda_s, volume);
        if !f.is_finite() {
            return Err(UnmixError::Numerical(format!(
                "objective became non-finite at outer iteration {iterations}"
            )));
        }
        trace.push(f);
        if [d_locals, d_abund, d_psi, d_refs].iter().all(|d| *d < cfg.epsilon) {
            converged = true;
            break;
        }
    }

    let rmse = reconstruction_rmse(x, &state.locals, &state.abundances);
    let references = if refine_references && cfg.normalize_references {
        EndmemberMatrix::from_unit_columns(state.references)?
    } else {
        EndmemberMatrix::new(state.references)?
    };
    Ok(UnmixResult {
        abundances: AbundanceMatrix::new(state.abundances)?,
        scalings: ScalingMatrix::new(state.scalings)?,
        references,
        locals: state.locals,
        objective_trace: trace,
        reconstruction_rmse: rmse,
        iterations,
        converged,
        flagged_pixels: flagged,
    })
}

/// Extended linear mixing model with fixed references `s0`, started from
/// `init` (typically the SCLSU solution against `s0`).
pub fn elmm(
    cube: &SpectralCube,
    s0: &EndmemberMatrix,
    cfg: &SolverConfig,
    init: &UnmixResult,
) -> Result<UnmixResult> {
    cfg.validate_variability()?;
    let state = BcdState {
        abundances: init.abundances.data().clone(),
        scalings: init.scalings.data().map(|v| v.max(cfg.psi_floor)),
        locals: init.locals.clone(),
        references: s0.data().clone(),
    };
    run(cube, state, cfg, false)
}

/// Reference-refining ELMM. `s0_init` is normalized (or used as is when
/// `cfg.normalize_references` is false); abundances and scalings start
/// from SCLSU against it and local endmembers from `S0 diag(psi_n)`.
pub fn relmm(cube: &SpectralCube, s0_init: &EndmemberMatrix, cfg: &SolverConfig) -> Result<UnmixResult> {
    cfg.validate_variability()?;
    let s0 = if cfg.normalize_references { s0_init.to_normalized() } else { s0_init.clone() };
    let init = sclsu(cube, &s0, cfg)?;
    let state = BcdState {
        abundances: init.abundances.into_inner(),
        scalings: init.scalings.into_inner(),
        locals: init.locals,
        references: s0.into_inner(),
    };
    run(cube, state, cfg, true)
}
