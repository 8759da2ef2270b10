//! Unmixing solvers and their optimization primitives.
//!
//! * [`fclsu`]: fully constrained least squares against fixed endmembers.
//! * [`sclsu`]: nonnegative least squares split into abundances and one
//!   scaling factor per pixel.
//! * [`elmm`]: block-coordinate descent on the extended linear mixing model
//!   with per-pixel endmembers pulled towards scaled fixed references.
//! * [`relmm`]: as `elmm`, but the references are re-estimated on the
//!   oblique manifold under a pairwise-distance volume penalty.

mod bcd;
mod least_squares;
pub mod nnls;
pub mod oblique;
pub mod simplex;

use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};
use crate::hsi::{AbundanceMatrix, EndmemberMatrix, LocalEndmemberStack, ScalingMatrix};

pub use bcd::{
    elmm, objective, relmm, update_abundances, update_locals, update_references, update_scalings,
    BcdState,
};
pub use least_squares::{fclsu, sclsu};
pub use nnls::{nnls, NnlsSolution};
pub use oblique::{oblique_cg_step, CgOptions, CgOutcome, ObliqueObjective, ReferenceObjective};
pub use simplex::{project_simplex, solve_simplex_qp};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Weight of `||S_n - S0 diag(psi_n)||_F^2`.
    pub lambda_s: f64,
    /// Weight of the volume penalty `tr(S0 V S0')`.
    pub lambda_s0: f64,
    /// Relative-change tolerance on every block.
    pub epsilon: f64,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    pub psi_floor: f64,
    pub seed: u64,
    /// Keep the references on the oblique manifold. When false the
    /// reference block is the closed-form unconstrained minimizer.
    pub normalize_references: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_s: 0.1,
            lambda_s0: 0.5,
            epsilon: 1e-3,
            max_outer_iter: 200,
            max_inner_iter: 500,
            psi_floor: 1e-8,
            seed: 0,
            normalize_references: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(UnmixError::Config("epsilon must be positive".into()));
        }
        if !(self.lambda_s >= 0.0) || !(self.lambda_s0 >= 0.0) {
            return Err(UnmixError::Config("regularization weights must be nonnegative".into()));
        }
        if !(self.psi_floor > 0.0) {
            return Err(UnmixError::Config("psi_floor must be positive".into()));
        }
        if self.max_inner_iter == 0 {
            return Err(UnmixError::Config("max_inner_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// ELMM and RELMM are only strictly convex in the local endmembers
    /// when `lambda_s > 0`.
    pub fn validate_variability(&self) -> Result<()> {
        self.validate()?;
        if !(self.lambda_s > 0.0) {
            return Err(UnmixError::Config("lambda_s must be > 0 for ELMM/RELMM".into()));
        }
        Ok(())
    }
}

/// Solver output bundle.
#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub abundances: AbundanceMatrix,
    pub scalings: ScalingMatrix,
    pub references: EndmemberMatrix,
    pub locals: LocalEndmemberStack,
    /// Objective value at the starting point followed by one value per
    /// outer iteration.
    pub objective_trace: Vec<f64>,
    pub reconstruction_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Pixels whose brightness fell below `psi_floor` (SCLSU) or whose
    /// inner solver hit its iteration cap.
    pub flagged_pixels: Vec<usize>,
}

/// Root mean square of `x_n - S_n a_n` over all bands and pixels.
pub fn reconstruction_rmse(
    x: &DMatrix<f64>,
    locals: &LocalEndmemberStack,
    a: &DMatrix<f64>,
) -> f64 {
    let mut total = 0.0;
    for n in 0..x.ncols() {
        let r = x.column(n) - locals.get(n) * a.column(n);
        total += r.norm_squared();
    }
    (total / x.len() as f64).sqrt()
}
