//! Signal subspace identification: noise estimation by multiple regression
//! across bands, then minimum-error selection of eigen-directions of the
//! denoised signal correlation.
//!
//! Thresholds:
//! * The band-regression normal matrix is treated as ill-conditioned when
//!   its eigenvalue ratio falls below [`ILL_CONDITIONED_RATIO`]; a ridge
//!   of [`RIDGE_SCALE`]` * trace / L` is then added and its bias removed by
//!   [`RIDGE_REFINEMENTS`] steps of iterated refinement.
//! * The noise correlation gets a floor of [`NOISE_FLOOR_SCALE`]` * trace(Rx) / L`
//!   on its diagonal so that directions carrying only rounding error are
//!   never selected.
//! * A direction is kept when its projected data power exceeds twice its
//!   projected noise power (strictly).

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::hsi::SpectralCube;

pub const ILL_CONDITIONED_RATIO: f64 = 1e-10;
pub const RIDGE_SCALE: f64 = 1e-6;
pub const RIDGE_REFINEMENTS: usize = 4;
pub const NOISE_FLOOR_SCALE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    /// Regression residuals, `L x N`.
    pub residuals: DMatrix<f64>,
    /// Mean squared residual per band.
    pub band_variance: Vec<f64>,
    /// Ridge added to the normal matrix (zero when well conditioned).
    pub ridge: f64,
}

#[derive(Debug, Clone)]
pub struct IdEstimate {
    pub dimension: usize,
    pub noise_band_power: Vec<f64>,
    /// Data power along each eigen-direction of the signal correlation,
    /// in decreasing eigenvalue order.
    pub eigen_signal_power: Vec<f64>,
    /// Noise power along the same directions.
    pub eigen_noise_power: Vec<f64>,
}

/// Residual of regressing each band on all the others.
pub fn estimate_noise(cube: &SpectralCube) -> NoiseEstimate {
    let y = cube.data();
    let (l, n) = y.shape();
    if l < 2 {
        return NoiseEstimate {
            residuals: DMatrix::zeros(l, n),
            band_variance: vec![0.0; l],
            ridge: 0.0,
        };
    }
    if n <= l {
        warn!("noise estimation with {n} pixels for {l} bands is poorly determined");
    }
    let r = y * y.transpose();
    let eig = r.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    let ridge = if max_ev <= 0.0 || min_ev <= ILL_CONDITIONED_RATIO * max_ev {
        RIDGE_SCALE * (r.trace() / l as f64).max(f64::MIN_POSITIVE)
    } else {
        0.0
    };
    // precision matrix of R + ridge I
    let inv_ev = eig.eigenvalues.map(|v| 1.0 / (v + ridge));
    let theta = &eig.eigenvectors * DMatrix::from_diagonal(&inv_ev) * eig.eigenvectors.transpose();

    // (R_{-i,-i} + ridge I)^-1 z for z with z_i = 0, via the Schur complement
    // of the precision matrix
    let solve_minor = |i: usize, z: &DVector<f64>| -> DVector<f64> {
        let w = &theta * z;
        let wi = w[i];
        let mut out = w - theta.column(i) * (wi / theta[(i, i)]);
        out[i] = 0.0;
        out
    };

    let mut coef = DMatrix::<f64>::zeros(l, l);
    for i in 0..l {
        let mut base = -theta.column(i) / theta[(i, i)];
        base[i] = 0.0;
        let mut beta = base.clone();
        if ridge > 0.0 {
            for _ in 0..RIDGE_REFINEMENTS {
                beta = &base + solve_minor(i, &beta) * ridge;
            }
        }
        let mut col = -beta;
        col[i] = 1.0;
        coef.set_column(i, &col);
    }
    let residuals = coef.transpose() * y;
    let band_variance = residuals
        .row_iter()
        .map(|row| row.norm_squared() / n as f64)
        .collect();
    NoiseEstimate { residuals, band_variance, ridge }
}

/// Estimate of the signal subspace dimension (at least 1).
pub fn estimate_id(cube: &SpectralCube) -> IdEstimate {
    let noise = estimate_noise(cube);
    let y = cube.data();
    let (l, n) = y.shape();
    let nf = n as f64;
    let signal = y - &noise.residuals;
    let rx = &signal * signal.transpose() / nf;
    let ry = y * y.transpose() / nf;
    let mut rn = &noise.residuals * noise.residuals.transpose() / nf;
    let floor = NOISE_FLOOR_SCALE * rx.trace().max(0.0) / l as f64;
    for i in 0..l {
        rn[(i, i)] += floor;
    }

    let eig = rx.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigen_signal_power = Vec::with_capacity(l);
    let mut eigen_noise_power = Vec::with_capacity(l);
    for &k in &order {
        let e = eig.eigenvectors.column(k);
        eigen_signal_power.push(e.dot(&(&ry * e)));
        eigen_noise_power.push(e.dot(&(&rn * e)));
    }
    let selected = eigen_signal_power
        .iter()
        .zip(&eigen_noise_power)
        .filter(|(py, pn)| **py > 2.0 * **pn)
        .count();
    IdEstimate {
        dimension: selected.max(1),
        noise_band_power: noise.band_variance,
        eigen_signal_power,
        eigen_noise_power,
    }
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn positive_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.05..1.0))
    }

    #[test]
    fn rank_one_cube_has_no_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = positive_matrix(12, 1, &mut rng);
        let c = positive_matrix(1, 300, &mut rng);
        let cube = SpectralCube::from_pixels(&s * &c).unwrap();
        let est = estimate_noise(&cube);
        assert!(est.ridge > 0.0);
        for v in &est.band_variance {
            assert!(*v < 1e-20, "variance {v}");
        }
    }

    #[test]
    fn recovers_white_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (l, n, sigma) = (50, 10_000, 0.01);
        let s = positive_matrix(l, 3, &mut rng);
        let a = positive_matrix(3, n, &mut rng);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noise = DMatrix::from_fn(l, n, |_, _| normal.sample(&mut rng));
        let cube = SpectralCube::from_pixels(&s * &a + noise).unwrap();
        let est = estimate_noise(&cube);
        let mean = est.band_variance.iter().sum::<f64>() / l as f64;
        assert!((mean / (sigma * sigma) - 1.0).abs() < 0.15, "ratio {}", mean / (sigma * sigma));
    }

    #[test]
    fn pure_noise_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.2).unwrap();
        let cube =
            SpectralCube::from_pixels(DMatrix::from_fn(20, 5000, |_, _| normal.sample(&mut rng)))
                .unwrap();
        let est = estimate_noise(&cube);
        for v in &est.band_variance {
            assert!((v / 0.04 - 1.0).abs() < 0.25);
        }
    }

    #[test]
    fn noiseless_mixture_dimension_is_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in 1..=6 {
            let s = positive_matrix(30, p, &mut rng);
            let a = positive_matrix(p, 500, &mut rng);
            let y = &s * &a;
            let rank = numerical_rank(&y, 1e-8);
            assert_eq!(rank, p);
            let est = estimate_id(&SpectralCube::from_pixels(y).unwrap());
            assert_eq!(est.dimension, rank);
        }
    }

    #[test]
    fn adding_a_signature_never_lowers_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = positive_matrix(25, 4, &mut rng);
        let a = positive_matrix(3, 400, &mut rng);
        let base = s.columns(0, 3) * &a;
        let d0 = estimate_id(&SpectralCube::from_pixels(base.clone()).unwrap()).dimension;
        let extra_a = positive_matrix(4, 100, &mut rng);
        let extra = &s * extra_a;
        let mut grown = DMatrix::zeros(25, 500);
        grown.columns_mut(0, 400).copy_from(&base);
        grown.columns_mut(400, 100).copy_from(&extra);
        let d1 = estimate_id(&SpectralCube::from_pixels(grown).unwrap()).dimension;
        assert!(d1 >= d0);
        assert_eq!((d0, d1), (3, 4));
    }

    #[test]
    fn degenerate_cube_gives_one() {
        let cube = SpectralCube::from_pixels(DMatrix::zeros(5, 40)).unwrap();
        assert_eq!(estimate_id(&cube).dimension, 1);
    }
}
