//! Reference endmember extraction.
//!
//! [`vca`] picks vertex pixels after perspective projection onto the
//! hyperplane `mean' x = 1`. [`spherical_kmeans`] clusters pixel directions
//! and returns unit-norm cluster centroids.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::hsi::{perspective_project, spectral_angle, EndmemberMatrix, SpectralCube, PERSPECTIVE_FLOOR};

/// Minimum spectral angle between any two extracted columns.
pub const MIN_SEPARATION: f64 = 1e-6;
/// Maximum number of empty-cluster reseeds per k-means run.
pub const MAX_RESEEDS: usize = 10;
/// Candidates drawn per k-means++ seeding step.
pub const INIT_CANDIDATES: usize = 16;

#[derive(Debug, Clone)]
pub struct ExtractionResult {
    pub endmembers: EndmemberMatrix,
    /// Source pixel of each column (VCA).
    pub pixel_indices: Option<Vec<usize>>,
    /// Cluster of each pixel, `None` for zero-norm pixels (k-means).
    pub labels: Option<Vec<Option<usize>>>,
    /// Clustering objective after each iteration of the winning run
    /// (k-means; empty for VCA).
    pub objective_trace: Vec<f64>,
}

fn check_count(cube: &SpectralCube, p: usize) -> Result<()> {
    if p == 0 {
        return Err(UnmixError::Config("endmember count must be at least 1".into()));
    }
    if p > cube.pixels() {
        return Err(UnmixError::Dimension(format!(
            "{p} endmembers requested from {} pixels",
            cube.pixels()
        )));
    }
    Ok(())
}

fn check_separation(s: &DMatrix<f64>) -> Result<()> {
    for i in 0..s.ncols() {
        for j in i + 1..s.ncols() {
            let angle = spectral_angle(s.column(i).as_slice(), s.column(j).as_slice())?;
            if angle <= MIN_SEPARATION {
                return Err(UnmixError::Extraction(format!(
                    "endmembers {i} and {j} coincide (angle {angle:.2e} rad)"
                )));
            }
        }
    }
    Ok(())
}

/// Vertex component analysis on the perspective-projected cube.
///
/// Pixels too dark to project (`|x' u| <= PERSPECTIVE_FLOOR`) are left out
/// with a warning. Deterministic for a given `seed`.
pub fn vca(cube: &SpectralCube, p: usize, seed: u64) -> Result<ExtractionResult> {
    check_count(cube, p)?;
    let (l, n) = (cube.bands(), cube.pixels());
    if p > l {
        return Err(UnmixError::Dimension(format!("{p} endmembers requested from {l} bands")));
    }
    let mean: Vec<f64> = cube.data().column_mean().iter().copied().collect();

    let mut usable = Vec::with_capacity(n);
    let mut projected = Vec::with_capacity(n * l);
    for px in 0..n {
        if let Ok(y) = perspective_project(cube.pixel(px), &mean, PERSPECTIVE_FLOOR) {
            usable.push(px);
            projected.extend_from_slice(y.as_slice());
        }
    }
    if usable.len() < n {
        warn!("vca: {} pixels nearly orthogonal to the mean were excluded", n - usable.len());
    }
    if usable.len() < p {
        return Err(UnmixError::Extraction(format!(
            "only {} usable pixels for {p} endmembers",
            usable.len()
        )));
    }
    let y = DMatrix::from_vec(l, usable.len(), projected);

    // top-p left singular directions of the projected data
    let eig = (&y * y.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_columns(
        &order[..p].iter().map(|&k| eig.eigenvectors.column(k)).collect::<Vec<_>>(),
    );
    let z = basis.tr_mul(&y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut picked = Vec::with_capacity(p);
    for _ in 0..p {
        let mut f = DVector::zeros(p);
        for _attempt in 0..100 {
            let w = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            f = orthogonal_complement(&w, &ortho);
            if f.norm() > 1e-8 * w.norm() {
                break;
            }
        }
        let scores = f.tr_mul(&z);
        let best = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v.abs() > acc.1 { (k, v.abs()) } else { acc })
            .0;
        picked.push(usable[best]);
        let v = orthogonal_complement(&z.column(best).into_owned(), &ortho);
        let norm = v.norm();
        if norm > 0.0 {
            ortho.push(v / norm);
        }
    }

    let s = DMatrix::from_columns(
        &picked.iter().map(|&px| cube.data().column(px)).collect::<Vec<_>>(),
    );
    check_separation(&s)?;
    Ok(ExtractionResult {
        endmembers: EndmemberMatrix::new(s)?,
        pixel_indices: Some(picked),
        labels: None,
        objective_trace: Vec::new(),
    })
}

/// Two passes of Gram-Schmidt against an orthonormal set.
fn orthogonal_complement(v: &DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    let mut out = v.clone();
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(&out);
            out.axpy(-c, q, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Independent seeded runs; the highest final objective wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 300, restarts: 5 }
    }
}

/// Spherical k-means with default options.
pub fn spherical_kmeans(cube: &SpectralCube, p: usize, seed: u64) -> Result<ExtractionResult> {
    spherical_kmeans_with(cube, p, seed, &KMeansOptions::default())
}

struct Run {
    centroids: Vec<DVector<f64>>,
    labels: Vec<usize>,
    trace: Vec<f64>,
}

/// Spherical k-means on unit-normalized pixels. Zero-norm pixels are not
/// clustered. Output columns are sorted by descending cluster size, ties
/// broken by the first member's pixel index.
pub fn spherical_kmeans_with(
    cube: &SpectralCube,
    p: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ExtractionResult> {
    check_count(cube, p)?;
    if opts.restarts == 0 || opts.max_iter == 0 {
        return Err(UnmixError::Config("k-means needs at least one run and one iteration".into()));
    }
    let n = cube.pixels();
    let mut members = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    for px in 0..n {
        let x = DVector::from_column_slice(cube.pixel(px));
        let norm = x.norm();
        if norm > 0.0 && norm.is_finite() {
            members.push(px);
            units.push(x / norm);
        }
    }
    if members.len() < n {
        warn!("k-means: {} zero-norm pixels excluded", n - members.len());
    }
    if members.len() < p {
        return Err(UnmixError::Extraction(format!(
            "only {} nonzero pixels for {p} clusters",
            members.len()
        )));
    }

    let mut best: Option<Run> = None;
    for restart in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = kmeans_run(&units, p, opts.max_iter, &mut rng)?;
        let better = match &best {
            None => true,
            Some(b) => run.trace.last() > b.trace.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.expect("at least one run");

    // canonical order: size descending, then first member
    let mut sizes = vec![0usize; p];
    let mut first = vec![usize::MAX; p];
    for (k, &c) in run.labels.iter().enumerate() {
        sizes[c] += 1;
        first[c] = first[c].min(k);
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(first[a].cmp(&first[b])));
    let mut rank = vec![0; p];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut labels = vec![None; n];
    for (k, &c) in run.labels.iter().enumerate() {
        labels[members[k]] = Some(rank[c]);
    }
    let s = DMatrix::from_columns(&order.iter().map(|&c| run.centroids[c].clone()).collect::<Vec<_>>());
    check_separation(&s)?;
    Ok(ExtractionResult {
        endmembers: EndmemberMatrix::from_unit_columns(s)?,
        pixel_indices: None,
        labels: Some(labels),
        objective_trace: run.trace,
    })
}

fn assign(units: &[DVector<f64>], centroids: &[DVector<f64>]) -> Vec<(usize, f64)> {
    units
        .par_iter()
        .map(|u| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, m) in centroids.iter().enumerate() {
                let cos = u.dot(m);
                if cos > best.1 {
                    best = (c, cos);
                }
            }
            best
        })
        .collect()
}

/// Greedy angular k-means++. Each step draws `INIT_CANDIDATES` pixels with
/// probability proportional to `(1 - cos)^2` against the nearest chosen
/// seed (uniformly for the first seed) and keeps the candidate that most
/// increases the summed best cosine. A single draw per step is easily
/// captured by isolated noise-dominated pixels, which sit far from every
/// seed in angle but explain nothing else.
fn init_centroids(units: &[DVector<f64>], p: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let m = units.len();
    let mut centroids: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut nearest = vec![f64::NEG_INFINITY; m];
    while centroids.len() < p {
        let weights: Vec<f64> = if centroids.is_empty() {
            vec![1.0; m]
        } else {
            nearest.iter().map(|c| (1.0 - c).max(0.0).powi(2)).collect()
        };
        let total: f64 = weights.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..INIT_CANDIDATES {
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = m - 1;
                for (k, w) in weights.iter().enumerate() {
                    if target < *w {
                        chosen = k;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..m)
            };
            let c = &units[pick];
            let updated: Vec<f64> = units.par_iter().zip(&nearest).map(|(u, near)| near.max(u.dot(c))).collect();
            let score: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one candidate");
        nearest = updated;
        centroids.push(units[pick].clone());
    }
    centroids
}

fn kmeans_run(units: &[DVector<f64>], p: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Result<Run> {
    let dim = units[0].len();
    let mut centroids = init_centroids(units, p, rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut reseeds = 0;

    for _ in 0..max_iter {
        let assigned = assign(units, &centroids);
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();

        let mut sums = vec![DVector::zeros(dim); p];
        let mut counts = vec![0usize; p];
        for (u, &c) in units.iter().zip(&new_labels) {
            sums[c] += u;
            counts[c] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            reseeds += 1;
            if reseeds > MAX_RESEEDS {
                return Err(UnmixError::Extraction(format!(
                    "empty clusters persisted after {MAX_RESEEDS} reseeds"
                )));
            }
            // the pixel worst served by its current centroid
            let far = assigned
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, a)| if a.1 < acc.1 { (k, a.1) } else { acc })
                .0;
            centroids[empty] = units[far].clone();
            continue;
        }
        for (c, sum) in sums.into_iter().enumerate() {
            let norm = sum.norm();
            if norm > 0.0 {
                centroids[c] = sum / norm;
            }
        }
        let objective: f64 = units.iter().zip(&new_labels).map(|(u, &c)| u.dot(&centroids[c])).sum();
        trace.push(objective);
        let stable = new_labels == labels;
        labels = new_labels;
        if stable {
            break;
        }
    }
    if labels.is_empty() {
        return Err(UnmixError::Extraction("k-means never produced a full assignment".into()));
    }
    Ok(Run { centroids, labels, trace })
}
