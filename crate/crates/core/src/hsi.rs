//! Image and factor types shared by every stage, plus the scale-free
//! geometric primitives (spectral angle, perspective projection).
//!
//! All matrices are band-major: an image is an `L x N` matrix whose column
//! `n` is the spectrum of pixel `n`, with pixels enumerated row-major over
//! the `lines x samples` grid.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use crate::error::{Result, UnmixError};

/// Tolerance used to accept a column as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Default floor on `|x'u|` below which a pixel is rejected by the
/// perspective projection.
pub const PERSPECTIVE_FLOOR: f64 = 1e-10;

/// Observed image `X` (`L x N`) with its spatial geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: DMatrix<f64>,
    lines: usize,
    samples: usize,
}

impl SpectralCube {
    pub fn new(data: DMatrix<f64>, lines: usize, samples: usize) -> Result<Self> {
        if lines == 0 || samples == 0 || data.nrows() == 0 {
            return Err(UnmixError::Dimension("cube dimensions must be positive".into()));
        }
        if data.ncols() != lines * samples {
            return Err(UnmixError::Dimension(format!(
                "cube has {} pixels but lines x samples = {}",
                data.ncols(),
                lines * samples
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(UnmixError::InvalidValue(format!(
                "non-finite reflectance at flat index {i}"
            )));
        }
        Ok(Self { data, lines, samples })
    }

    /// A cube laid out as a single line of `N` samples.
    pub fn from_pixels(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, 1, n)
    }

    pub fn reshape(self, lines: usize, samples: usize) -> Result<Self> {
        Self::new(self.data, lines, samples)
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn pixel(&self, n: usize) -> &[f64] {
        let l = self.bands();
        &self.data.as_slice()[n * l..(n + 1) * l]
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

/// Endmember signatures as columns of an `L x P` matrix.
///
/// When `normalized` is set the matrix is a point of the oblique manifold
/// (every column has unit Euclidean norm).
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: DMatrix<f64>,
    normalized: bool,
}

impl EndmemberMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::check(&data)?;
        Ok(Self { data, normalized: false })
    }

    /// Rescale every column to unit norm.
    pub fn normalized(data: DMatrix<f64>) -> Result<Self> {
        Self::check(&data)?;
        let mut data = data;
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        Ok(Self { data, normalized: true })
    }

    /// Wrap a matrix that is already on the oblique manifold.
    pub fn from_unit_columns(data: DMatrix<f64>) -> Result<Self> {
        Self::check(&data)?;
        for (p, col) in data.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > UNIT_NORM_TOL {
                return Err(UnmixError::InvalidValue(format!(
                    "column {p} has norm {} (expected 1)",
                    col.norm()
                )));
            }
        }
        Ok(Self { data, normalized: true })
    }

    fn check(data: &DMatrix<f64>) -> Result<()> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(UnmixError::Dimension("empty endmember matrix".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::InvalidValue("non-finite endmember entry".into()));
        }
        for (p, col) in data.column_iter().enumerate() {
            if col.norm() <= 0.0 {
                return Err(UnmixError::InvalidValue(format!("endmember {p} has zero norm")));
            }
        }
        Ok(())
    }

    pub fn to_normalized(&self) -> Self {
        if self.normalized {
            return self.clone();
        }
        Self::normalized(self.data.clone()).expect("columns already validated")
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

/// Abundance fractions, `P x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix(DMatrix<f64>);

impl AbundanceMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < -1e-12) {
            return Err(UnmixError::InvalidValue(format!("abundance entry {v} is not >= 0")));
        }
        Ok(Self(data))
    }

    /// True when every column lies on the unit simplex within `tol`.
    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        self.0
            .column_iter()
            .all(|c| (c.sum() - 1.0).abs() <= tol && c.iter().all(|v| *v >= -1e-12))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Positive scaling factors `psi_pn`, `P x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMatrix(DMatrix<f64>);

impl ScalingMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(UnmixError::InvalidValue(format!("scaling factor {v} is not > 0")));
        }
        Ok(Self(data))
    }

    pub fn ones(p: usize, n: usize) -> Self {
        Self(DMatrix::from_element(p, n, 1.0))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Unconstrained nonnegative coefficients `Phi = A .* Psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DMatrix<f64>);

impl CoefficientMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < -1e-12) {
            return Err(UnmixError::InvalidValue(format!("coefficient {v} is negative")));
        }
        Ok(Self(data))
    }

    pub fn from_factors(a: &AbundanceMatrix, psi: &ScalingMatrix) -> Result<Self> {
        if a.data().shape() != psi.data().shape() {
            return Err(UnmixError::Dimension("abundance and scaling shapes differ".into()));
        }
        Self::new(a.data().component_mul(psi.data()))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// One `L x P` endmember matrix per pixel, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEndmemberStack {
    bands: usize,
    endmembers: usize,
    data: Vec<f64>,
}

impl LocalEndmemberStack {
    /// Build from raw column-major storage, pixel after pixel.
    pub fn from_vec(bands: usize, endmembers: usize, data: Vec<f64>) -> Result<Self> {
        let block = bands * endmembers;
        if block == 0 || data.len() % block != 0 {
            return Err(UnmixError::Dimension(format!(
                "stack storage of length {} is not a multiple of {bands}x{endmembers}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::InvalidValue("non-finite local endmember".into()));
        }
        Ok(Self { bands, endmembers, data })
    }

    /// Every pixel shares the same matrix.
    pub fn repeated(s: &DMatrix<f64>, pixels: usize) -> Self {
        let mut data = Vec::with_capacity(s.len() * pixels);
        for _ in 0..pixels {
            data.extend_from_slice(s.as_slice());
        }
        Self { bands: s.nrows(), endmembers: s.ncols(), data }
    }

    /// Pixel `n` holds `s * diag(psi[:, n])`.
    pub fn scaled(s: &DMatrix<f64>, psi: &DMatrix<f64>) -> Self {
        let (l, p) = s.shape();
        let mut data = Vec::with_capacity(l * p * psi.ncols());
        for n in 0..psi.ncols() {
            for k in 0..p {
                let scale = psi[(k, n)];
                data.extend(s.column(k).iter().map(|v| v * scale));
            }
        }
        Self { bands: l, endmembers: p, data }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn endmembers(&self) -> usize {
        self.endmembers
    }

    pub fn pixels(&self) -> usize {
        self.data.len() / (self.bands * self.endmembers)
    }

    pub fn block_len(&self) -> usize {
        self.bands * self.endmembers
    }

    pub fn get(&self, n: usize) -> DMatrixView<'_, f64> {
        let b = self.block_len();
        DMatrixView::from_slice(&self.data[n * b..(n + 1) * b], self.bands, self.endmembers)
    }

    pub fn get_mut(&mut self, n: usize) -> DMatrixViewMut<'_, f64> {
        let b = self.block_len();
        DMatrixViewMut::from_slice(&mut self.data[n * b..(n + 1) * b], self.bands, self.endmembers)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spectral angle (radians) between two spectra.
///
/// Evaluated as `2 atan2(|u1 - u2|, |u1 + u2|)` on the unit-normalized
/// inputs, which equals `acos` of the clamped normalized inner product but
/// keeps full precision for nearly collinear spectra.
pub fn spectral_angle(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(UnmixError::Dimension(format!(
            "spectra have lengths {} and {}",
            s1.len(),
            s2.len()
        )));
    }
    let n1 = dot(s1, s1).sqrt();
    let n2 = dot(s2, s2).sqrt();
    if n1 == 0.0 || n2 == 0.0 || !n1.is_finite() || !n2.is_finite() {
        return Err(UnmixError::ZeroNorm);
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in s1.iter().zip(s2) {
        let (ua, ub) = (a / n1, b / n2);
        diff += (ua - ub) * (ua - ub);
        sum += (ua + ub) * (ua + ub);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Perspective projection of `x` onto the hyperplane `u'y = 1`, i.e.
/// `x / (x'u)`. Pixels with `|x'u| <= floor` are rejected.
pub fn perspective_project(x: &[f64], u: &[f64], floor: f64) -> Result<DVector<f64>> {
    if x.len() != u.len() {
        return Err(UnmixError::Dimension(format!(
            "pixel has {} bands, projection vector {}",
            x.len(),
            u.len()
        )));
    }
    let xu = dot(x, u);
    if xu.abs() <= floor || !xu.is_finite() {
        return Err(UnmixError::NearOrthogonal(xu));
    }
    Ok(DVector::from_iterator(x.len(), x.iter().map(|v| v / xu)))
}

/// Noiseless image `x_n = S_n a_n`, returned as a single-line cube.
pub fn reconstruct(stack: &LocalEndmemberStack, a: &AbundanceMatrix) -> Result<SpectralCube> {
    let a = a.data();
    if a.nrows() != stack.endmembers() || a.ncols() != stack.pixels() {
        return Err(UnmixError::Dimension(format!(
            "stack is {} pixels x {} endmembers, abundances are {}x{}",
            stack.pixels(),
            stack.endmembers(),
            a.nrows(),
            a.ncols()
        )));
    }
    let mut out = DMatrix::zeros(stack.bands(), stack.pixels());
    for n in 0..stack.pixels() {
        out.set_column(n, &(stack.get(n) * a.column(n)));
    }
    SpectralCube::from_pixels(out)
}
