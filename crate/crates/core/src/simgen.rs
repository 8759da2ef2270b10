//! Synthetic scenes with endmember variability and full ground truth.
//!
//! Each pixel draws one variant per class from a spectral library, Dirichlet
//! abundances, and a single brightness factor from a truncated Gaussian
//! mixture. White Gaussian noise is added at a target SNR measured against
//! the realized noiseless signal.
//!
//! Random streams are keyed by `(seed, domain, pixel)` so every pixel can be
//! drawn independently and the scene is bitwise reproducible regardless of
//! thread count.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::hsi::{
    spectral_angle, AbundanceMatrix, EndmemberMatrix, LocalEndmemberStack, ScalingMatrix,
    SpectralCube,
};

/// Minimum angle between spectra of different classes.
pub const MIN_CLASS_SEPARATION_DEG: f64 = 10.0;
/// Maximum angle between a variant and its class base spectrum, so that any
/// two variants of one class are at most twice this apart.
pub const MAX_VARIANT_ANGLE_DEG: f64 = 4.0;
/// Largest relative multiplicative perturbation applied to a variant.
pub const MAX_PERTURBATION: f64 = 0.1;
/// Brightness multiplier of shadow pixels.
pub const SHADOW_SCALE: f64 = 0.01;
pub const MAX_LIBRARY_DRAWS: usize = 1000;

const DOMAIN_PIXELS: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_SHADOW: u64 = 3;
const DOMAIN_LIBRARY: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub mean: f64,
    pub std_dev: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub bands: usize,
    pub lines: usize,
    pub samples: usize,
    pub classes: usize,
    pub variants_per_class: usize,
    pub dirichlet_alpha: f64,
    pub gmm: [GmmComponent; 4],
    /// `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub shadow_fraction: f64,
    pub seed: u64,
}

pub const DEFAULT_GMM: [GmmComponent; 4] = [
    GmmComponent { mean: 0.6, std_dev: 0.05, weight: 0.2 },
    GmmComponent { mean: 0.9, std_dev: 0.05, weight: 0.3 },
    GmmComponent { mean: 1.1, std_dev: 0.05, weight: 0.3 },
    GmmComponent { mean: 1.5, std_dev: 0.1, weight: 0.2 },
];

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            bands: 200,
            lines: 100,
            samples: 100,
            classes: 3,
            variants_per_class: 10,
            dirichlet_alpha: 0.3,
            gmm: DEFAULT_GMM,
            snr_db: 30.0,
            shadow_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(UnmixError::Config(msg.into()));
        if self.bands == 0 || self.lines == 0 || self.samples == 0 {
            return bad("scene dimensions must be positive");
        }
        if self.classes == 0 || self.classes > self.bands {
            return bad("class count must be in 1..=bands");
        }
        if self.variants_per_class == 0 {
            return bad("variants_per_class must be at least 1");
        }
        if !(self.dirichlet_alpha > 0.0) || !self.dirichlet_alpha.is_finite() {
            return bad("dirichlet_alpha must be positive");
        }
        let total: f64 = self.gmm.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad("gmm weights must sum to 1");
        }
        if self.gmm.iter().any(|c| !(c.mean > 0.0) || !(c.std_dev >= 0.0) || !(c.weight >= 0.0)) {
            return bad("gmm components need positive means and nonnegative spreads and weights");
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be finite or +inf");
        }
        if !(0.0..=1.0).contains(&self.shadow_fraction) {
            return bad("shadow_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.lines * self.samples
    }
}

#[derive(Debug, Clone)]
pub struct ClassLibrary {
    /// One `L x K` matrix of unit-norm variants per class.
    pub variants: Vec<DMatrix<f64>>,
    /// Normalized mean direction of each class.
    pub references: EndmemberMatrix,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub abundances: AbundanceMatrix,
    /// Pixel brightness, repeated over the classes of each column.
    pub scalings: ScalingMatrix,
    /// Unscaled variant drawn for each pixel and class.
    pub locals: LocalEndmemberStack,
    pub library: ClassLibrary,
    /// `variant_index[n * P + p]` indexes `library.variants[p]`.
    pub variant_index: Vec<usize>,
    pub shadow_pixels: Vec<usize>,
    pub noise_variance: f64,
}

fn stream(seed: u64, domain: u64) -> ChaCha8Rng {
    let mut keyer = ChaCha8Rng::seed_from_u64(seed);
    keyer.set_stream(domain);
    ChaCha8Rng::from_seed(keyer.random())
}

fn pixel_stream(key: &ChaCha8Rng, n: usize) -> ChaCha8Rng {
    let mut rng = key.clone();
    rng.set_stream(n as u64);
    rng.set_word_pos(0);
    rng
}

fn angle_deg(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    spectral_angle(a.as_slice(), b.as_slice()).map_or(0.0, f64::to_degrees)
}

fn base_spectrum(l: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let bumps = rng.random_range(3..=6);
    let baseline = rng.random_range(0.05..0.2);
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| (rng.random_range(0.2..1.0), rng.random_range(0.0..1.0), rng.random_range(0.03..0.2)))
        .collect();
    let span = (l.max(2) - 1) as f64;
    DVector::from_fn(l, |i, _| {
        let t = i as f64 / span;
        baseline
            + params
                .iter()
                .map(|(h, mu, w)| h * (-(t - mu).powi(2) / (2.0 * w * w)).exp())
                .sum::<f64>()
    })
}

/// Smooth multiplicative perturbation with peak relative amplitude at most
/// `MAX_PERTURBATION`.
fn perturb(base: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let l = base.len();
    let span = (l.max(2) - 1) as f64;
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.sample::<f64, _>(StandardNormal),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let shape = DVector::from_fn(l, |i, _| {
        let t = i as f64 / span;
        waves.iter().map(|(c, f, ph)| c * (std::f64::consts::TAU * f * t + ph).sin()).sum::<f64>()
    });
    let peak = shape.amax();
    let amp = rng.random_range(0.2..1.0) * MAX_PERTURBATION;
    let scale = if peak > 0.0 { amp / peak } else { 0.0 };
    base.zip_map(&shape, |b, s| b * (1.0 + scale * s))
}

fn normalize(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

/// Builds `p` classes of `k` unit-norm variants. Classes are redrawn until
/// every variant is at least `MIN_CLASS_SEPARATION_DEG` away from every
/// variant of the classes already accepted.
pub fn make_class_library(l: usize, p: usize, k: usize, seed: u64) -> Result<ClassLibrary> {
    if l == 0 || p == 0 || k == 0 {
        return Err(UnmixError::Config("library needs positive bands, classes and variants".into()));
    }
    let mut rng = stream(seed, DOMAIN_LIBRARY);
    let mut classes: Vec<Vec<DVector<f64>>> = Vec::with_capacity(p);
    let mut draws = 0;
    while classes.len() < p {
        draws += 1;
        if draws > MAX_LIBRARY_DRAWS {
            return Err(UnmixError::Config(format!(
                "no separable library after {MAX_LIBRARY_DRAWS} draws"
            )));
        }
        let base = normalize(base_spectrum(l, &mut rng));
        let mut variants = vec![base.clone()];
        while variants.len() < k {
            let v = normalize(perturb(&base, &mut rng));
            if angle_deg(&v, &base) <= MAX_VARIANT_ANGLE_DEG {
                variants.push(v);
            }
        }
        let separated = classes.iter().flatten().all(|other| {
            variants.iter().all(|v| angle_deg(v, other) >= MIN_CLASS_SEPARATION_DEG)
        });
        if separated {
            classes.push(variants);
        }
    }
    let references = DMatrix::from_columns(
        &classes
            .iter()
            .map(|vs| {
                if vs.len() == 1 {
                    vs[0].clone()
                } else {
                    normalize(vs.iter().fold(DVector::zeros(l), |acc, v| acc + v))
                }
            })
            .collect::<Vec<_>>(),
    );
    let variants = classes.iter().map(|vs| DMatrix::from_columns(vs)).collect();
    Ok(ClassLibrary {
        variants,
        references: EndmemberMatrix::normalized(references)?,
    })
}

fn sample_dirichlet(alpha: f64, p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    if p == 1 {
        return DVector::from_element(1, 1.0);
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    loop {
        let draws = DVector::from_fn(p, |_, _| gamma.sample(rng));
        let total = draws.sum();
        if total > 0.0 && total.is_finite() {
            return draws / total;
        }
    }
}

fn sample_gmm(gmm: &[GmmComponent; 4], rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let mut u = rng.random::<f64>();
        let mut comp = &gmm[gmm.len() - 1];
        for c in gmm {
            if u < c.weight {
                comp = c;
                break;
            }
            u -= c.weight;
        }
        let v = comp.mean + comp.std_dev * rng.sample::<f64, _>(StandardNormal);
        if v > 0.0 {
            return v;
        }
    }
}

struct PixelDraw {
    abundances: DVector<f64>,
    variants: Vec<usize>,
    scale: f64,
}

/// Generates a scene and its ground truth.
pub fn generate_scene(spec: &SceneSpec) -> Result<(SpectralCube, GroundTruth)> {
    spec.validate()?;
    let (l, p, n) = (spec.bands, spec.classes, spec.pixels());
    let library = make_class_library(l, p, spec.variants_per_class, spec.seed)?;

    let pixel_key = stream(spec.seed, DOMAIN_PIXELS);
    let draws: Vec<PixelDraw> = (0..n)
        .into_par_iter()
        .map(|px| {
            let mut rng = pixel_stream(&pixel_key, px);
            let variants = (0..p).map(|_| rng.random_range(0..spec.variants_per_class)).collect();
            let abundances = sample_dirichlet(spec.dirichlet_alpha, p, &mut rng);
            let scale = sample_gmm(&spec.gmm, &mut rng);
            PixelDraw { abundances, variants, scale }
        })
        .collect();

    let shadow_count = (spec.shadow_fraction * n as f64).round() as usize;
    let mut shadow_pixels = index::sample(&mut stream(spec.seed, DOMAIN_SHADOW), n, shadow_count).into_vec();
    shadow_pixels.sort_unstable();
    let mut scales: Vec<f64> = draws.iter().map(|d| d.scale).collect();
    for &px in &shadow_pixels {
        scales[px] *= SHADOW_SCALE;
    }

    let mut abundances = DMatrix::zeros(p, n);
    let mut psi = DMatrix::zeros(p, n);
    let mut variant_index = Vec::with_capacity(n * p);
    let mut locals = vec![0.0; n * l * p];
    for (px, (draw, block)) in draws.iter().zip(locals.chunks_mut(l * p)).enumerate() {
        abundances.set_column(px, &draw.abundances);
        psi.column_mut(px).fill(scales[px]);
        for (class, &v) in draw.variants.iter().enumerate() {
            block[class * l..(class + 1) * l]
                .copy_from_slice(library.variants[class].column(v).as_slice());
        }
        variant_index.extend_from_slice(&draw.variants);
    }
    let locals = LocalEndmemberStack::from_vec(l, p, locals)?;

    let mut y = DMatrix::zeros(l, n);
    for px in 0..n {
        let col = locals.get(px) * abundances.column(px) * scales[px];
        y.set_column(px, &col);
    }

    let noise_variance = if spec.snr_db.is_finite() {
        y.norm_squared() / ((n * l) as f64 * 10f64.powf(spec.snr_db / 10.0))
    } else {
        0.0
    };
    if noise_variance > 0.0 {
        let normal = Normal::new(0.0, noise_variance.sqrt()).expect("finite variance");
        let noise_key = stream(spec.seed, DOMAIN_NOISE);
        y.as_mut_slice().par_chunks_mut(l).enumerate().for_each(|(px, col)| {
            let mut rng = pixel_stream(&noise_key, px);
            for v in col.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        });
    }

    let cube = SpectralCube::new(y, spec.lines, spec.samples)?;
    let truth = GroundTruth {
        abundances: AbundanceMatrix::new(abundances)?,
        scalings: ScalingMatrix::new(psi)?,
        locals,
        library,
        variant_index,
        shadow_pixels,
        noise_variance,
    };
    Ok((cube, truth))
}

/// The noiseless signal `psi_n S_n a_n` of a ground truth.
pub fn noiseless_signal(truth: &GroundTruth) -> DMatrix<f64> {
    let a = truth.abundances.data();
    let psi = truth.scalings.data();
    let (l, n) = (truth.locals.bands(), truth.locals.pixels());
    let mut y = DMatrix::zeros(l, n);
    for px in 0..n {
        let phi = a.column(px).component_mul(&psi.column(px));
        y.set_column(px, &(truth.locals.get(px) * phi));
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SceneSpec {
        SceneSpec { bands: 40, lines: 10, samples: 12, ..SceneSpec::default() }
    }

    #[test]
    fn single_variant_library_equals_references() {
        let lib = make_class_library(50, 4, 1, 9).unwrap();
        for (p, v) in lib.variants.iter().enumerate() {
            assert_eq!(v.column(0), lib.references.data().column(p));
        }
    }

    #[test]
    fn library_angles_and_norms() {
        let lib = make_class_library(200, 3, 10, 1).unwrap();
        for (i, vi) in lib.variants.iter().enumerate() {
            for a in vi.column_iter() {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                assert!(a.iter().all(|v| *v > 0.0));
                for b in vi.column_iter() {
                    assert!(angle_deg(&a.into_owned(), &b.into_owned()) <= 8.0);
                }
                for vj in lib.variants.iter().skip(i + 1) {
                    for b in vj.column_iter() {
                        assert!(angle_deg(&a.into_owned(), &b.into_owned()) >= 10.0);
                    }
                }
            }
        }
    }

    #[test]
    fn ground_truth_invariants() {
        let spec = SceneSpec { shadow_fraction: 0.05, ..small_spec() };
        let (cube, truth) = generate_scene(&spec).unwrap();
        assert_eq!(cube.pixels(), 120);
        assert_eq!(truth.shadow_pixels.len(), 6);
        assert!(truth.abundances.is_column_stochastic(1e-12));
        assert!(truth.scalings.data().iter().all(|v| *v > 0.0));
        for px in 0..cube.pixels() {
            for p in 0..spec.classes {
                let v = truth.variant_index[px * spec.classes + p];
                assert_eq!(truth.locals.get(px).column(p), truth.library.variants[p].column(v));
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let spec = small_spec();
        let (a, _) = generate_scene(&spec).unwrap();
        let (b, _) = generate_scene(&spec).unwrap();
        assert_eq!(a.data(), b.data());
        let (c, _) = generate_scene(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut gmm = DEFAULT_GMM;
        gmm[0].weight = 0.5;
        assert!(generate_scene(&SceneSpec { gmm, ..small_spec() }).is_err());
        assert!(generate_scene(&SceneSpec { dirichlet_alpha: 0.0, ..small_spec() }).is_err());
        assert!(generate_scene(&SceneSpec { shadow_fraction: 1.5, ..small_spec() }).is_err());
        assert!(generate_scene(&SceneSpec { variants_per_class: 0, ..small_spec() }).is_err());
    }
}
