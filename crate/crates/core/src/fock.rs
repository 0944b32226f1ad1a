//! Dense linear algebra on a truncated oscillator number basis.
//!
//! Everything here works on `dim x dim` complex matrices indexed by photon
//! number `0..dim`. Gaussian unitaries are built by exponentiating their
//! anti-Hermitian generators through a Hermitian eigendecomposition, so the
//! truncated operators are exactly unitary on the truncated space; they only
//! agree with the infinite-dimensional operator on levels well below the
//! cutoff (see [`guard_levels`]).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const HERMITICITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator {
    entries: DMatrix<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    amplitudes: DVector<C64>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

impl FockOperator {
    pub fn from_matrix(entries: DMatrix<C64>) -> Result<Self> {
        check_dim(entries.nrows())?;
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidArgument(format!(
                "operator must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            entries: DMatrix::identity(dim, dim),
        })
    }

    /// Diagonal operator with the given entries.
    pub fn diagonal(diag: &[C64]) -> Result<Self> {
        check_dim(diag.len())?;
        Ok(Self {
            entries: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            entries: self.entries.adjoint(),
        }
    }

    pub fn compose(&self, rhs: &FockOperator) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(dim_mismatch(self.dim(), rhs.dim()));
        }
        Ok(Self {
            entries: &self.entries * &rhs.entries,
        })
    }

    /// `self |state>` without renormalization.
    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        if self.dim() != state.dim() {
            return Err(dim_mismatch(self.dim(), state.dim()));
        }
        Ok(FockState {
            amplitudes: &self.entries * &state.amplitudes,
        })
    }

    /// Largest entry of `|U^dagger U - I|` over the leading `keep x keep` block.
    pub fn unitarity_defect(&self, keep: usize) -> f64 {
        let keep = keep.min(self.dim());
        let prod = self.entries.adjoint() * &self.entries;
        let mut worst = 0.0f64;
        for i in 0..keep {
            for j in 0..keep {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).norm());
            }
        }
        worst
    }
}

fn dim_mismatch(a: usize, b: usize) -> Error {
    Error::InvalidArgument(format!("dimension mismatch: {a} vs {b}"))
}

impl FockState {
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        Ok(Self { amplitudes })
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes))
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::basis(dim, 0)
    }

    pub fn basis(dim: usize, level: usize) -> Result<Self> {
        check_dim(dim)?;
        if level >= dim {
            return Err(Error::InvalidArgument(format!(
                "level {level} outside truncation dimension {dim}"
            )));
        }
        let mut amplitudes = DVector::zeros(dim);
        amplitudes[level] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    /// Coherent state amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)` on levels `0..dim`.
    ///
    /// The amplitudes are exact; the truncated vector is not renormalized.
    pub fn coherent(alpha: C64, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !alpha.re.is_finite() || !alpha.im.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite amplitude {alpha}")));
        }
        let mut out = DVector::zeros(dim);
        accumulate_coherent(out.as_mut_slice(), alpha, 0.0, C64::new(1.0, 0.0));
        Ok(Self { amplitudes: out })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NumericalConsistency(format!(
                "cannot normalize state with norm {norm}"
            )));
        }
        Ok(Self {
            amplitudes: self.amplitudes.unscale(norm),
        })
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Copy into a larger (zero-padded) or smaller (truncated) space.
    pub fn resized(&self, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut out = DVector::zeros(dim);
        let n = dim.min(self.dim());
        out.rows_mut(0, n).copy_from(&self.amplitudes.rows(0, n));
        Ok(Self { amplitudes: out })
    }
}

/// Adds `weight * e^{-|a|^2/2} (a e^{-damping})^n / sqrt(n!)` into `out[n]`.
///
/// The recursion carries a separate log scale so that large `|a|` neither
/// overflows the mantissa nor underflows the `e^{-|a|^2/2}` prefactor.
pub(crate) fn accumulate_coherent(out: &mut [C64], alpha: C64, damping: f64, weight: C64) {
    let step = alpha * (-damping).exp();
    let mut mantissa = weight;
    let mut log_scale = -0.5 * alpha.norm_sqr();
    const RESCALE: f64 = 1e100;
    let ln_rescale = RESCALE.ln();
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            mantissa *= step / (n as f64).sqrt();
            let mag = mantissa.norm();
            if mag > RESCALE {
                mantissa /= RESCALE;
                log_scale += ln_rescale;
            } else if mag < 1.0 / RESCALE && mag > 0.0 {
                mantissa *= RESCALE;
                log_scale -= ln_rescale;
            }
        }
        if log_scale > -745.0 {
            *slot += mantissa * log_scale.exp();
        }
    }
}

/// Levels below the cutoff that must be discarded before trusting a
/// truncated Gaussian unitary with displacement `|alpha|` and squeezing `r`.
pub fn guard_levels(alpha_abs: f64, r: f64) -> usize {
    (4.0 * alpha_abs * alpha_abs + 4.0 * r.sinh().powi(2) + 10.0).ceil() as usize
}

/// Lowering operator, `<n-1|a|n> = sqrt(n)`.
pub fn annihilation(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(FockOperator { entries: m })
}

pub fn creation(dim: usize) -> Result<FockOperator> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let diag: Vec<C64> = (0..dim).map(|n| C64::new(n as f64, 0.0)).collect();
    FockOperator::diagonal(&diag)
}

/// `exp(G)` for anti-Hermitian `G`, via the eigendecomposition of `iG`.
fn exp_anti_hermitian(generator: &DMatrix<C64>) -> Result<FockOperator> {
    let hermitian = generator * C64::new(0.0, 1.0);
    let (values, vectors) = hermitian_eigen(&hermitian)?;
    // exp(G) = exp(-i H) = V diag(e^{-i lambda}) V^dagger
    let mut scaled = vectors.clone();
    for (j, lambda) in values.iter().enumerate() {
        let phase = C64::from_polar(1.0, -lambda);
        for v in scaled.column_mut(j).iter_mut() {
            *v *= phase;
        }
    }
    FockOperator::from_matrix(scaled * vectors.adjoint())
}

/// Displacement `D(alpha) = exp(alpha a^dagger - alpha^* a)`.
pub fn displacement(alpha: C64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "displacement amplitude must be finite, got {alpha}"
        )));
    }
    if alpha == C64::new(0.0, 0.0) {
        return FockOperator::identity(dim);
    }
    let a = annihilation(dim)?.into_matrix();
    let generator = a.adjoint() * alpha - a * alpha.conj();
    exp_anti_hermitian(&generator)
}

/// Squeezing `S(r) = exp(r/2 (a^2 - a^dagger^2))`.
pub fn squeeze(r: f64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    if !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "squeezing parameter must be finite, got {r}"
        )));
    }
    if r == 0.0 {
        return FockOperator::identity(dim);
    }
    let a = annihilation(dim)?.into_matrix();
    let a2 = &a * &a;
    let generator = (&a2 - a2.adjoint()) * C64::new(0.5 * r, 0.0);
    exp_anti_hermitian(&generator)
}

/// `exp(G) v` for a real banded generator given as `(offset, entries)` with
/// `G[n, n + offset] = entries[n]` (offset may be negative).
///
/// Scaling and Taylor summation; only matrix-vector products with the band.
fn exp_band_action(bands: &[(isize, Vec<f64>)], bound: f64, v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    let steps = (2.0 * bound).ceil().max(1.0) as usize;
    let scale = 1.0 / steps as f64;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (offset, entries) in bands {
            for (n, &g) in entries.iter().enumerate() {
                let col = n as isize + offset;
                if g != 0.0 && col >= 0 && (col as usize) < dim {
                    out[n] += g * x[col as usize];
                }
            }
        }
        out
    };
    let mut current = v.to_vec();
    for _ in 0..steps {
        let norm = current.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mut sum = current.clone();
        let mut term = current;
        for k in 1..200 {
            term = apply(&term);
            let factor = scale / k as f64;
            term.iter_mut().for_each(|t| *t *= factor);
            sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
            if term.iter().map(|x| x.abs()).fold(0.0, f64::max) <= 1e-18 * norm {
                break;
            }
        }
        current = sum;
    }
    current
}

/// `D(alpha) v` for real `alpha` and a real state, without forming the matrix.
///
/// Uses the same truncated generator as [`displacement`].
pub fn displace_real(alpha: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_dim(v.len())?;
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite displacement {alpha}")));
    }
    let dim = v.len();
    // alpha (a^dag - a): G[n+1, n] = alpha sqrt(n+1), G[n, n+1] = -alpha sqrt(n+1)
    let upper: Vec<f64> = (0..dim).map(|n| -alpha * ((n + 1) as f64).sqrt()).collect();
    let lower: Vec<f64> = (0..dim)
        .map(|n| if n == 0 { 0.0 } else { alpha * (n as f64).sqrt() })
        .collect();
    let bound = 2.0 * alpha.abs() * (dim as f64).sqrt();
    Ok(exp_band_action(&[(1, upper), (-1, lower)], bound, v))
}

/// `S(r) v` for a real state, using the same truncated generator as [`squeeze`].
pub fn squeeze_real(r: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_dim(v.len())?;
    if !r.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite squeezing {r}")));
    }
    let dim = v.len();
    // r/2 (a^2 - a^dag^2): G[n, n+2] = r/2 sqrt((n+1)(n+2)), G[n, n-2] = -r/2 sqrt(n(n-1))
    let upper: Vec<f64> = (0..dim)
        .map(|n| 0.5 * r * (((n + 1) * (n + 2)) as f64).sqrt())
        .collect();
    let lower: Vec<f64> = (0..dim)
        .map(|n| {
            if n < 2 {
                0.0
            } else {
                -0.5 * r * ((n * (n - 1)) as f64).sqrt()
            }
        })
        .collect();
    let bound = r.abs() * dim as f64;
    Ok(exp_band_action(&[(2, upper), (-2, lower)], bound, v))
}

/// Phase rotation `R(phi) = exp(i phi n)`.
pub fn rotation(phi: f64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    if !phi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rotation angle must be finite, got {phi}"
        )));
    }
    let diag: Vec<C64> = (0..dim).map(|n| C64::from_polar(1.0, phi * n as f64)).collect();
    FockOperator::diagonal(&diag)
}

/// Number translation `sum_n |n><n+l|`.
pub fn number_translation(shift: usize, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    if shift >= dim {
        return Err(Error::InvalidArgument(format!(
            "translation {shift} must be below the dimension {dim}"
        )));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for n in 0..dim - shift {
        m[(n, n + shift)] = C64::new(1.0, 0.0);
    }
    Ok(FockOperator { entries: m })
}

/// Largest `|M - M^dagger|` entry relative to the largest `|M|` entry.
pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
///
/// The input is symmetrized first; callers are expected to have checked
/// Hermiticity when it matters.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalConsistency(
            "non-finite eigenvalue in Hermitian eigendecomposition".into(),
        ));
    }
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

#[derive(Clone, Debug)]
pub struct HermitianSqrt {
    pub matrix: DMatrix<C64>,
    /// Total magnitude of the eigenvalues that were clamped to zero.
    pub clamped_mass: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Principal square root of a Hermitian PSD matrix.
///
/// Eigenvalues below `clamp * lambda_max` (including small negative ones
/// from rounding) are set to zero before taking the root.
pub fn hermitian_sqrt(m: &DMatrix<C64>, clamp: f64) -> Result<HermitianSqrt> {
    let defect = hermiticity_defect(m);
    if defect > HERMITICITY_TOL {
        return Err(Error::NumericalConsistency(format!(
            "matrix is not Hermitian (relative defect {defect:e})"
        )));
    }
    let (values, vectors) = hermitian_eigen(m)?;
    let max_eigenvalue = values.last().copied().unwrap_or(0.0);
    let min_eigenvalue = values.first().copied().unwrap_or(0.0);
    let cutoff = clamp * max_eigenvalue.max(0.0);
    let mut clamped_mass = 0.0;
    let mut scaled = vectors;
    for (j, &lambda) in values.iter().enumerate() {
        let keep = lambda > cutoff && lambda > 0.0;
        if !keep {
            clamped_mass += lambda.abs();
        }
        let factor = if keep { lambda.powf(0.25) } else { 0.0 };
        scaled.column_mut(j).scale_mut(factor);
    }
    let matrix = &scaled * scaled.adjoint();
    Ok(HermitianSqrt {
        matrix,
        clamped_mass,
        min_eigenvalue,
        max_eigenvalue,
    })
}
