use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::nnls::nnls_gram;
use super::simplex::solve_simplex_qp;
use super::{reconstruction_rmse, SolverConfig, UnmixResult};
use crate::error::{Result, UnmixError};
use crate::hsi::{AbundanceMatrix, EndmemberMatrix, LocalEndmemberStack, ScalingMatrix, SpectralCube};

fn check_dims(cube: &SpectralCube, s: &EndmemberMatrix) -> Result<()> {
    if cube.bands() != s.bands() {
        return Err(UnmixError::Dimension(format!(
            "cube has {} bands, endmembers {}",
            cube.bands(),
            s.bands()
        )));
    }
    if s.count() > s.bands() {
        return Err(UnmixError::Dimension(format!(
            "{} endmembers exceed {} bands",
            s.count(),
            s.bands()
        )));
    }
    Ok(())
}

/// Fully constrained least squares: per pixel, `min ||x_n - S a_n||^2`
/// over the unit simplex. Every pixel shares `S`, so the scalings are all
/// one.
pub fn fclsu(cube: &SpectralCube, s: &EndmemberMatrix, cfg: &SolverConfig) -> Result<UnmixResult> {
    cfg.validate()?;
    check_dims(cube, s)?;
    let (p, n) = (s.count(), cube.pixels());
    let sm = s.data();
    let gram = sm.transpose() * sm;
    let start = DVector::from_element(p, 1.0 / p as f64);
    let tol = cfg.epsilon * 1e-2;

    let solved: Vec<(DVector<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|px| {
            let lin = sm.tr_mul(&cube.data().column(px));
            let sol = solve_simplex_qp(&gram, &lin, &start, tol, cfg.max_inner_iter);
            (sol.x, sol.converged)
        })
        .collect();

    let mut a = DMatrix::zeros(p, n);
    let mut flagged = Vec::new();
    for (px, (col, ok)) in solved.into_iter().enumerate() {
        a.set_column(px, &col);
        if !ok {
            flagged.push(px);
        }
    }
    let locals = LocalEndmemberStack::repeated(sm, n);
    let rmse = reconstruction_rmse(cube.data(), &locals, &a);
    let fit = 0.5 * rmse * rmse * cube.data().len() as f64;
    Ok(UnmixResult {
        abundances: AbundanceMatrix::new(a)?,
        scalings: ScalingMatrix::ones(p, n),
        references: s.clone(),
        locals,
        objective_trace: vec![fit],
        reconstruction_rmse: rmse,
        iterations: 1,
        converged: flagged.is_empty(),
        flagged_pixels: flagged,
    })
}

/// Scaled constrained least squares: `phi_n = nnls(S0, x_n)`, then
/// `psi_n = sum(phi_n)` and `a_n = phi_n / psi_n`. Pixels darker than
/// `psi_floor` get uniform abundances and `psi_n = psi_floor` and are
/// reported in `flagged_pixels`.
pub fn sclsu(cube: &SpectralCube, s0: &EndmemberMatrix, cfg: &SolverConfig) -> Result<UnmixResult> {
    cfg.validate()?;
    check_dims(cube, s0)?;
    let (p, n) = (s0.count(), cube.pixels());
    let sm = s0.data();
    let gram = sm.transpose() * sm;

    let solved: Vec<(DVector<f64>, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|px| {
            let lin = sm.tr_mul(&cube.data().column(px));
            let sol = nnls_gram(&gram, &lin, cfg.max_inner_iter);
            let psi = sol.coef.sum();
            if psi < cfg.psi_floor {
                (DVector::from_element(p, 1.0 / p as f64), cfg.psi_floor, false)
            } else {
                (sol.coef / psi, psi, sol.converged)
            }
        })
        .collect();

    let mut a = DMatrix::zeros(p, n);
    let mut psi = DMatrix::zeros(p, n);
    let mut flagged = Vec::new();
    for (px, (col, scale, ok)) in solved.into_iter().enumerate() {
        a.set_column(px, &col);
        psi.column_mut(px).fill(scale);
        if !ok {
            flagged.push(px);
        }
    }
    let locals = LocalEndmemberStack::scaled(sm, &psi);
    let rmse = reconstruction_rmse(cube.data(), &locals, &a);
    let fit = 0.5 * rmse * rmse * cube.data().len() as f64;
    Ok(UnmixResult {
        abundances: AbundanceMatrix::new(a)?,
        scalings: ScalingMatrix::new(psi)?,
        references: s0.clone(),
        locals,
        objective_trace: vec![fit],
        reconstruction_rmse: rmse,
        iterations: 1,
        converged: true,
        flagged_pixels: flagged,
    })
}
