//! Linearized stability system around `m_c`.
//!
//! With `γ₁ = 1/m_c²` and `γ₂ = |z|²/(1+m_c)²`, the `n×n` matrix `Γ₁` has
//! `−γ₁` one step left of the diagonal and `γ₂` two steps left, cyclically
//! (0-based: `Γ₁[r][r−1] = −γ₁`, `Γ₁[r][r−2] = γ₂`, indices mod `n`), and
//!
//! ```text
//! Γ = [[w·I, Γ₁], [Γ₁ᵀ, w·I]],   det Γ = det(w²I − Γ₁ᵀΓ₁).
//! ```
//!
//! `w²I − Γ₁ᵀΓ₁` is circulant with first-row coefficients
//! `(w² − γ₁² − γ₂², γ₁γ₂, 0, …, 0, γ₁γ₂)`. At `n = 2` the two `γ₁γ₂` slots
//! are the same entry and their contributions add; `Γ₁` itself has no
//! collision since its bands sit at distinct offsets `−1` and `−2 ≡ 0`.

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::selfconsistent::{solve_mc, SpectralWindow};
use crate::spectral::{eigenvalues, matched_distance, singular_extremes};
use crate::{Error, Result};

pub fn gamma_coeffs(m_c: C64, z: C64) -> Result<(C64, C64)> {
    if m_c.norm() <= 1e-10 || (1.0 + m_c).norm() <= 1e-10 {
        return Err(Error::Degenerate(format!("gamma coefficients undefined at m_c = {m_c}")));
    }
    Ok(((m_c * m_c).inv(), z.norm_sqr() / ((1.0 + m_c) * (1.0 + m_c))))
}

/// `l_j = Σ_k c_k e^{2πi jk/n}`, `j = 0..n−1`.
pub fn circulant_eigenvalues(coeffs: &[C64]) -> Vec<C64> {
    let n = coeffs.len();
    (0..n)
        .map(|j| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &ck)| {
                    // Reduce jk mod n first to keep the phase argument small.
                    let phase = std::f64::consts::TAU * ((j * k) % n) as f64 / n as f64;
                    ck * C64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

/// Circulant matrix with `C[r][c] = coeffs[(c − r) mod n]`.
pub fn circulant_matrix(coeffs: &[C64]) -> Mat<C64> {
    let n = coeffs.len();
    Mat::from_fn(n, n, |r, c| coeffs[(c + n - r) % n])
}

/// First-row coefficients of `w²I − Γ₁ᵀΓ₁`, coinciding slots summed.
pub fn reduced_circulant_coeffs(n: usize, w: C64, gamma1: C64, gamma2: C64) -> Vec<C64> {
    let mut c = vec![C64::new(0.0, 0.0); n];
    c[0] += w * w - gamma1 * gamma1 - gamma2 * gamma2;
    c[1 % n] += gamma1 * gamma2;
    c[(n - 1) % n] += gamma1 * gamma2;
    c
}

#[derive(Debug, Clone)]
pub struct GammaSystem {
    pub n: usize,
    pub w: C64,
    pub gamma1: C64,
    pub gamma2: C64,
    pub gamma1_mat: Mat<C64>,
    pub gamma_mat: Mat<C64>,
}

pub fn gamma_matrix(n: usize, w: C64, gamma1: C64, gamma2: C64) -> Result<GammaSystem> {
    if n < 2 {
        return Err(Error::Precondition(format!("Γ needs n >= 2, got {n}")));
    }
    let mut g1 = Mat::<C64>::zeros(n, n);
    for r in 0..n {
        g1[(r, (r + n - 1) % n)] += -gamma1;
        g1[(r, (r + n - 2) % n)] += gamma2;
    }
    let mut g = Mat::<C64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        g[(i, i)] = w;
        g[(n + i, n + i)] = w;
        for j in 0..n {
            g[(i, n + j)] = g1[(i, j)];
            g[(n + i, j)] = g1[(j, i)];
        }
    }
    Ok(GammaSystem {
        n,
        w,
        gamma1,
        gamma2,
        gamma1_mat: g1,
        gamma_mat: g,
    })
}

impl GammaSystem {
    /// Builds the system at `m_c(z, w)`.
    pub fn at(n: usize, z: C64, w: C64) -> Result<GammaSystem> {
        let m = solve_mc(z, w)?.m_c;
        let (g1, g2) = gamma_coeffs(m, z)?;
        gamma_matrix(n, w, g1, g2)
    }

    /// `w²I − Γ₁ᵀΓ₁` by dense multiplication (plain transpose).
    pub fn reduced_matrix(&self) -> Mat<C64> {
        let g1 = self.gamma1_mat.as_ref();
        let prod = g1.transpose() * g1;
        Mat::from_fn(self.n, self.n, |i, j| {
            let d = if i == j { self.w * self.w } else { C64::new(0.0, 0.0) };
            d - prod[(i, j)]
        })
    }

    pub fn reduced_coeffs(&self) -> Vec<C64> {
        reduced_circulant_coeffs(self.n, self.w, self.gamma1, self.gamma2)
    }

    /// Eigenvalues of `w²I − Γ₁ᵀΓ₁` from the circulant formula.
    pub fn reduced_eigenvalues(&self) -> Vec<C64> {
        circulant_eigenvalues(&self.reduced_coeffs())
    }

    /// `(det Γ, det(w²I − Γ₁ᵀΓ₁))`, both by dense LU.
    pub fn determinants(&self) -> (C64, C64) {
        (self.gamma_mat.determinant(), self.reduced_matrix().determinant())
    }

    /// `‖Γ⁻¹‖₂ = 1/s_min(Γ)`; infinite when `Γ` is numerically singular.
    pub fn inverse_norm(&self) -> Result<f64> {
        let (smin, _) = singular_extremes(self.gamma_mat.as_ref())?;
        Ok(if smin > 0.0 { 1.0 / smin } else { f64::INFINITY })
    }
}

/// `(Δ₁..Δₙ, Δ′₁..Δ′ₙ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationVector {
    pub delta: Vec<C64>,
}

impl DeviationVector {
    /// `Δ_a = m_G^a − m_c`, `Δ′_a = m_𝒢^a − m_c`.
    pub fn from_traces(m_g: &[C64], m_gc: &[C64], m_c: C64) -> Result<Self> {
        if m_g.len() != m_gc.len() {
            return Err(Error::Precondition("partial trace lists differ in length".into()));
        }
        Ok(DeviationVector {
            delta: m_g.iter().chain(m_gc).map(|m| m - m_c).collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.delta.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }
}

/// `‖ΓΔ‖_∞`.
pub fn linear_system_check(delta: &DeviationVector, gs: &GammaSystem) -> Result<f64> {
    let dim = 2 * gs.n;
    if delta.delta.len() != dim {
        return Err(Error::Precondition(format!(
            "deviation vector has length {}, Γ is {dim}x{dim}",
            delta.delta.len()
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..dim {
        let row: C64 = (0..dim).map(|j| gs.gamma_mat[(i, j)] * delta.delta[j]).sum();
        worst = worst.max(row.norm());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct GammaSweepConfig {
    pub n: usize,
    #[serde(with = "crate::complex::serde_list")]
    pub z_grid: Vec<C64>,
    /// Fixed window for every `z`; `None` uses `S₀(z)` with `eta_min`.
    pub window: Option<SpectralWindow>,
    pub eta_min: f64,
    pub e_points: usize,
    pub eta_points: usize,
    pub tau_candidates: Vec<f64>,
}

impl Default for GammaSweepConfig {
    fn default() -> Self {
        GammaSweepConfig {
            n: 2,
            z_grid: [1.2, 1.5, 3.0, 6.0].iter().map(|&r| C64::new(r, 0.0)).collect(),
            window: None,
            eta_min: 1e-4,
            e_points: 9,
            eta_points: 9,
            tau_candidates: vec![0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaPoint {
    pub z: C64,
    pub w: C64,
    pub inverse_norm: f64,
    /// `min_j |l_j(w²I − Γ₁ᵀΓ₁)|`.
    pub min_eig_modulus: f64,
    /// Circulant formula vs dense eigenvalues, relative to `max(1, max|l_j|)`.
    pub circulant_mismatch: f64,
    /// `|det Γ − det(w²I − Γ₁ᵀΓ₁)| / |det Γ|`.
    pub det_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauOutcome {
    pub tau: f64,
    pub points: usize,
    pub max_inverse_norm: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSweepReport {
    pub n: usize,
    /// Largest candidate with `max ‖Γ⁻¹‖ ≤ 1/τ` on `window ∩ {|w| ≤ τ}`.
    pub tau: Option<f64>,
    pub max_inverse_norm: f64,
    pub outcomes: Vec<TauOutcome>,
    pub points: Vec<GammaPoint>,
    pub max_circulant_mismatch: f64,
    pub max_det_rel_error: f64,
    /// Points where `Γ` was singular or the solve failed.
    pub counterexamples: Vec<(C64, C64, String)>,
}

impl GammaSweepReport {
    /// `(max ‖Γ⁻¹‖, min_j |l_j|)` over all evaluated points at `z`.
    pub fn summary_for(&self, z: C64) -> Option<(f64, f64)> {
        let pts: Vec<&GammaPoint> = self.points.iter().filter(|p| p.z == z).collect();
        if pts.is_empty() {
            return None;
        }
        Some((
            pts.iter().map(|p| p.inverse_norm).fold(0.0, f64::max),
            pts.iter().map(|p| p.min_eig_modulus).fold(f64::INFINITY, f64::min),
        ))
    }
}

fn evaluate_point(n: usize, z: C64, w: C64) -> Result<GammaPoint> {
    let gs = GammaSystem::at(n, z, w)?;
    let formula = gs.reduced_eigenvalues();
    let dense = eigenvalues(gs.reduced_matrix().as_ref())?.eigenvalues;
    let scale = formula.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let (d_full, d_red) = gs.determinants();
    Ok(GammaPoint {
        z,
        w,
        inverse_norm: gs.inverse_norm()?,
        min_eig_modulus: formula.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min),
        circulant_mismatch: matched_distance(&formula, &dense)? / scale,
        det_rel_error: if d_full.norm() > 1e-300 {
            (d_full - d_red).norm() / d_full.norm()
        } else {
            0.0
        },
    })
}

/// Sweeps `‖Γ⁻¹‖` over `z_grid × window` and reports the largest candidate
/// `τ` with `‖Γ⁻¹‖ ≤ 1/τ` whenever `|w| ≤ τ`. For each candidate the window
/// is clipped to `E, η ≤ τ` before gridding so no candidate is vacuous.
pub fn inverse_norm_sweep(cfg: &GammaSweepConfig) -> Result<GammaSweepReport> {
    if cfg.z_grid.is_empty() || cfg.tau_candidates.is_empty() {
        return Err(Error::Precondition("sweep needs a non-empty z grid and candidate list".into()));
    }
    if cfg.n < 2 {
        return Err(Error::Precondition(format!("Γ needs n >= 2, got {}", cfg.n)));
    }
    let mut taus = cfg.tau_candidates.clone();
    taus.sort_by(|a, b| b.total_cmp(a));
    let mut tasks: Vec<(usize, C64, C64)> = Vec::new();
    for (ti, &tau) in taus.iter().enumerate() {
        for &z in &cfg.z_grid {
            let base = cfg.window.unwrap_or_else(|| SpectralWindow::s0(z, cfg.eta_min));
            let clipped = SpectralWindow {
                e_max: base.e_max.min(tau),
                eta_min: base.eta_min,
                eta_max: base.eta_max.min(tau),
            };
            if clipped.eta_min > clipped.eta_max {
                continue;
            }
            for w in clipped.grid(cfg.e_points, cfg.eta_points) {
                if w.norm() <= tau {
                    tasks.push((ti, z, w));
                }
            }
        }
    }
    let evaluated: Vec<(usize, Result<GammaPoint>)> = tasks
        .par_iter()
        .map(|&(ti, z, w)| (ti, evaluate_point(cfg.n, z, w)))
        .collect();

    let mut outcomes: Vec<TauOutcome> = taus
        .iter()
        .map(|&tau| TauOutcome {
            tau,
            points: 0,
            max_inverse_norm: 0.0,
            holds: true,
        })
        .collect();
    let mut points = Vec::new();
    let mut counterexamples = Vec::new();
    for ((ti, z, w), (_, res)) in tasks.iter().zip(evaluated) {
        let out = &mut outcomes[*ti];
        out.points += 1;
        match res {
            Ok(p) if p.inverse_norm.is_finite() => {
                out.max_inverse_norm = out.max_inverse_norm.max(p.inverse_norm);
                points.push(p);
            }
            Ok(p) => {
                out.max_inverse_norm = f64::INFINITY;
                counterexamples.push((*z, *w, "Γ is singular".to_string()));
                points.push(p);
            }
            Err(e) => {
                out.max_inverse_norm = f64::INFINITY;
                counterexamples.push((*z, *w, e.to_string()));
            }
        }
    }
    for out in outcomes.iter_mut() {
        out.holds = out.points > 0 && out.max_inverse_norm <= 1.0 / out.tau;
    }
    let chosen = outcomes.iter().find(|o| o.holds);
    Ok(GammaSweepReport {
        n: cfg.n,
        tau: chosen.map(|o| o.tau),
        max_inverse_norm: chosen.map_or(f64::INFINITY, |o| o.max_inverse_norm),
        max_circulant_mismatch: points.iter().map(|p| p.circulant_mismatch).fold(0.0, f64::max),
        max_det_rel_error: points.iter().map(|p| p.det_rel_error).fold(0.0, f64::max),
        outcomes,
        points,
        counterexamples,
    })
}
