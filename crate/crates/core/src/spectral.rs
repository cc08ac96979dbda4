//! Dense spectral kernel: eigenvalues, singular values, hermitized spectra
//! and empirical spectral statistics.
//!
//! The kernel is backed by `faer`. Its contract is backward stability: every
//! returned eigenvalue is an exact eigenvalue of `M + E` with
//! `‖E‖ ≤ c·ε·‖M‖`; callers must not assume more.

use faer::{Mat, MatRef, Par, Side};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::ensembles::LinearizedSystem;
use crate::{Error, Result};

/// Relative tolerance for numerically negative eigenvalues of `Y^*Y`.
pub const PSD_RELATIVE_TOL: f64 = 1e-10;

/// Runs the dense kernel single-threaded. Experiments call this so their
/// results do not depend on how many worker threads are available.
pub fn use_sequential_kernel() {
    faer::set_global_parallelism(Par::Seq);
}

fn ensure_square(m: MatRef<'_, C64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Precondition(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn ensure_finite(m: MatRef<'_, C64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Domain(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    /// All eigenvalues with algebraic multiplicity, in kernel order.
    pub eigenvalues: Vec<C64>,
    /// `max |λ|`.
    pub radius: f64,
}

pub fn eigenvalues(m: MatRef<'_, C64>) -> Result<SpectrumResult> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let eigenvalues = m.eigenvalues().map_err(|e| Error::Spectral {
        dim: m.nrows(),
        message: format!("{e:?}"),
    })?;
    let radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    Ok(SpectrumResult { eigenvalues, radius })
}

pub fn spectral_radius(m: MatRef<'_, C64>) -> Result<f64> {
    Ok(eigenvalues(m)?.radius)
}

/// Singular values in ascending order.
pub fn singular_values(m: MatRef<'_, C64>) -> Result<Vec<f64>> {
    ensure_finite(m)?;
    let mut s = m.singular_values().map_err(|e| Error::Spectral {
        dim: m.nrows().max(m.ncols()),
        message: format!("{e:?}"),
    })?;
    s.reverse();
    Ok(s)
}

/// `(s_min, s_max)`.
pub fn singular_extremes(m: MatRef<'_, C64>) -> Result<(f64, f64)> {
    let s = singular_values(m)?;
    match (s.first(), s.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo.max(0.0), hi.max(lo.max(0.0)))),
        _ => Err(Error::Precondition("empty matrix has no singular values".into())),
    }
}

/// Eigenvalues of a Hermitian matrix, ascending. Only the lower triangle is read.
pub fn hermitian_eigenvalues(h: MatRef<'_, C64>) -> Result<Vec<f64>> {
    ensure_square(h)?;
    ensure_finite(h)?;
    h.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Spectral {
            dim: h.nrows(),
            message: format!("{e:?}"),
        })
}

/// Eigenvalues of `Y^*Y` for `Y = X − z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermitizedSpectrum {
    pub z: C64,
    /// Ascending, length `nN`, all `≥ 0` after clipping.
    pub lambdas: Vec<f64>,
    /// How many eigenvalues were in `[−tol_psd, 0)` and clipped to 0.
    pub clipped: usize,
}

impl HermitizedSpectrum {
    /// Wraps an already computed spectrum (sorted on entry).
    pub fn from_eigenvalues(z: C64, mut lambdas: Vec<f64>) -> Self {
        lambdas.sort_by(f64::total_cmp);
        HermitizedSpectrum {
            z,
            lambdas,
            clipped: 0,
        }
    }

    pub fn min(&self) -> f64 {
        self.lambdas.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.lambdas.last().copied().unwrap_or(f64::NAN)
    }

    /// `s_min(X − z) = √λ_1`.
    pub fn smallest_singular_value(&self) -> f64 {
        self.min().sqrt()
    }
}

/// Spectrum of `(X − z)^*(X − z)` from a self-adjoint solve (not by squaring
/// singular values), clipping round-off negatives at `1e−10·‖Y‖²`.
pub fn hermitized_spectrum(sys: &LinearizedSystem) -> Result<HermitizedSpectrum> {
    let y = sys.y().as_ref();
    let h = y.adjoint() * y;
    let mut lambdas = hermitian_eigenvalues(h.as_ref())?;
    let norm_sq = lambdas.last().copied().unwrap_or(0.0).max(0.0);
    let tol = PSD_RELATIVE_TOL * norm_sq;
    let mut clipped = 0;
    for l in lambdas.iter_mut() {
        if *l < 0.0 {
            if *l < -tol {
                return Err(Error::InternalConsistency(format!(
                    "eigenvalue {l} of Y*Y is below -{tol}"
                )));
            }
            *l = 0.0;
            clipped += 1;
        }
    }
    Ok(HermitizedSpectrum {
        z: sys.z(),
        lambdas,
        clipped,
    })
}

/// `(1/nN) Σ 1/(λ_j − w)`.
pub fn empirical_stieltjes(spec: &HermitizedSpectrum, w: C64) -> Result<C64> {
    if !(w.im > 0.0) {
        return Err(Error::Domain(format!("Stieltjes transform needs Im w > 0, got {w}")));
    }
    if spec.lambdas.is_empty() {
        return Err(Error::Precondition("empty spectrum".into()));
    }
    let sum: C64 = spec.lambdas.iter().map(|&l| (C64::new(l, 0.0) - w).inv()).sum();
    Ok(sum / spec.lambdas.len() as f64)
}

/// Mass of the empirical measure in `bins` equal bins over `[lo, hi]`.
/// Returns `(bin_center, mass)`; the last bin is closed on the right.
pub fn esd_histogram(spec: &HermitizedSpectrum, bins: usize, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::Precondition(format!(
            "histogram needs bins >= 1 and lo < hi, got {bins} bins on [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &l in &spec.lambdas {
        if l < lo || l > hi {
            continue;
        }
        let idx = (((l - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let total = spec.lambdas.len() as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c as f64 / total))
        .collect())
}

/// Largest distance in a greedy nearest-neighbour matching of two multisets
/// of equal size: each element of `a`, largest modulus first, takes the
/// closest unused element of `b`. Exact whenever clusters of near-equal
/// values are separated by more than the reported distance.
pub fn matched_distance(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "multisets differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].norm().total_cmp(&a[i].norm()));
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for i in order {
        let (best, dist) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, v)| (k, (a[i] - v).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("sizes match");
        used[best] = true;
        worst = worst.max(dist);
    }
    Ok(worst)
}

/// Helper for building small complex matrices in row-major order.
pub fn mat_from_rows(rows: &[&[C64]]) -> Mat<C64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}
