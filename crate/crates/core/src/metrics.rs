//! Scores against ground truth.
//!
//! Estimated classes come out in arbitrary order, so they are first matched
//! to the true classes by spectral angle between reference endmembers and
//! the same relabeling is applied to abundances, scalings and local
//! endmembers.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};
use crate::hsi::{spectral_angle, AbundanceMatrix, EndmemberMatrix, LocalEndmemberStack, SpectralCube};
use crate::simgen::GroundTruth;
use crate::solvers::UnmixResult;

/// Largest class count aligned by exhaustive search.
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub armse: f64,
    pub mean_sam_deg: f64,
    /// Pixel/class pairs left out of the mean SAM because a column was zero.
    pub sam_skipped: usize,
    pub recon_rmse: f64,
    /// `permutation[i]` is the estimated class matched to true class `i`.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamSummary {
    pub mean_deg: f64,
    pub skipped: usize,
}

fn angle_table(est: &EndmemberMatrix, truth: &EndmemberMatrix) -> Result<DMatrix<f64>> {
    if est.count() != truth.count() || est.bands() != truth.bands() {
        return Err(UnmixError::Dimension(format!(
            "estimated endmembers {}x{} vs true {}x{}",
            est.bands(),
            est.count(),
            truth.bands(),
            truth.count()
        )));
    }
    let p = truth.count();
    let mut table = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            table[(i, j)] = spectral_angle(
                truth.data().column(i).as_slice(),
                est.data().column(j).as_slice(),
            )?;
        }
    }
    Ok(table)
}

/// Matching of estimated to true classes minimizing the summed spectral
/// angle. Exhaustive up to `EXHAUSTIVE_LIMIT` classes, greedy beyond.
pub fn align_classes(est: &EndmemberMatrix, truth: &EndmemberMatrix) -> Result<Vec<usize>> {
    let table = angle_table(est, truth)?;
    let p = truth.count();
    if p <= EXHAUSTIVE_LIMIT {
        let mut best = (f64::INFINITY, (0..p).collect::<Vec<_>>());
        for perm in (0..p).permutations(p) {
            let cost: f64 = perm.iter().enumerate().map(|(i, &j)| table[(i, j)]).sum();
            if cost < best.0 {
                best = (cost, perm);
            }
        }
        return Ok(best.1);
    }
    // greedy on globally smallest remaining angle
    let mut pairs: Vec<(usize, usize)> = (0..p).cartesian_product(0..p).collect();
    pairs.sort_by(|a, b| table[*a].total_cmp(&table[*b]));
    let mut perm = vec![usize::MAX; p];
    let mut used = vec![false; p];
    for (i, j) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
        }
    }
    Ok(perm)
}

/// `(1 / (N sqrt(P))) * sum_n ||a_est_n - a_true_n||`.
pub fn armse(est: &AbundanceMatrix, truth: &AbundanceMatrix) -> Result<f64> {
    let (e, t) = (est.data(), truth.data());
    if e.shape() != t.shape() {
        return Err(UnmixError::Dimension(format!(
            "abundances {:?} vs {:?}",
            e.shape(),
            t.shape()
        )));
    }
    let (p, n) = t.shape();
    let total: f64 = (0..n).map(|px| (e.column(px) - t.column(px)).norm()).sum();
    Ok(total / (n as f64 * (p as f64).sqrt()))
}

/// Mean spectral angle, in degrees, over all pixel/class pairs.
pub fn mean_sam(est: &LocalEndmemberStack, truth: &LocalEndmemberStack) -> Result<SamSummary> {
    if est.bands() != truth.bands() || est.endmembers() != truth.endmembers() || est.pixels() != truth.pixels()
    {
        return Err(UnmixError::Dimension("local endmember stacks differ in shape".into()));
    }
    let l = truth.bands();
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (a, b) in est.as_slice().chunks(l).zip(truth.as_slice().chunks(l)) {
        match spectral_angle(a, b) {
            Ok(angle) => {
                total += angle;
                counted += 1;
            }
            Err(UnmixError::ZeroNorm) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let mean = if counted > 0 { (total / counted as f64).to_degrees() } else { 0.0 };
    Ok(SamSummary { mean_deg: mean, skipped })
}

/// Root mean square of `x_n - S_n a_n` over all bands and pixels.
pub fn recon_rmse(cube: &SpectralCube, locals: &LocalEndmemberStack, a: &AbundanceMatrix) -> Result<f64> {
    if locals.pixels() != cube.pixels() || locals.bands() != cube.bands() {
        return Err(UnmixError::Dimension("local endmembers do not match the cube".into()));
    }
    if a.data().shape() != (locals.endmembers(), cube.pixels()) {
        return Err(UnmixError::Dimension("abundances do not match the local endmembers".into()));
    }
    Ok(crate::solvers::reconstruction_rmse(cube.data(), locals, a.data()))
}

/// Rows reordered so that row `i` of the output is row `perm[i]` of `m`.
pub fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), m.ncols(), |i, j| m[(perm[i], j)])
}

pub fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), perm.len(), |i, j| m[(i, perm[j])])
}

pub fn permute_stack(stack: &LocalEndmemberStack, perm: &[usize]) -> Result<LocalEndmemberStack> {
    let (l, p) = (stack.bands(), stack.endmembers());
    let mut data = Vec::with_capacity(stack.as_slice().len());
    for block in stack.as_slice().chunks(l * p) {
        for &src in perm {
            data.extend_from_slice(&block[src * l..(src + 1) * l]);
        }
    }
    LocalEndmemberStack::from_vec(l, perm.len(), data)
}

/// Aligns `result` to `truth` through the reference endmembers, then scores
/// abundances, local endmembers and reconstruction.
pub fn evaluate(cube: &SpectralCube, result: &UnmixResult, truth: &GroundTruth) -> Result<EvalReport> {
    let permutation = align_classes(&result.references, &truth.library.references)?;
    let a = AbundanceMatrix::new(permute_rows(result.abundances.data(), &permutation))?;
    let locals = permute_stack(&result.locals, &permutation)?;
    let sam = mean_sam(&locals, &truth.locals)?;
    Ok(EvalReport {
        armse: armse(&a, &truth.abundances)?,
        mean_sam_deg: sam.mean_deg,
        sam_skipped: sam.skipped,
        recon_rmse: recon_rmse(cube, &result.locals, &result.abundances)?,
        permutation,
    })
}
