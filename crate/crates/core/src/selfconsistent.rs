//! The deterministic limit `m_c(z, w)`, its measure `ν_z` and the support
//! edges `λ±(z)`.
//!
//! `m_c` solves `1/m = −w(1 + m) + |z|²/(1 + m)`. Clearing denominators
//! gives the cubic
//!
//! ```text
//! w·m³ + 2w·m² + (w + 1 − |z|²)·m + 1 = 0
//! ```
//!
//! For `Im w > 0` two of its roots have `Im m > 0`, so that condition alone
//! does not pick the solution. `m_c` is the Stieltjes transform of a
//! probability measure on `[0, ∞)`, hence also `Im(w·m_c) = ∫ λη/|λ−w|² dν > 0`.
//! The pair of conditions singles out one root; see [`solve_mc`].

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::{Error, Result};

/// Guard for `|m|` and `|1 + m|` in [`solve_mc`].
pub const DEGENERATE_GUARD: f64 = 1e-10;
/// Default imaginary part used to approach the real axis.
pub const DEFAULT_ETA_PROBE: f64 = 1e-6;
/// Two roots closer than this cannot be told apart along a path.
pub const COLLISION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfConsistentSolution {
    pub z: C64,
    pub w: C64,
    pub m_c: C64,
    /// `|m⁻¹ + w(1+m) − |z|²/(1+m)|`.
    pub residual: f64,
    /// Position of `m_c` among the cubic's roots sorted by `(Re, Im)`.
    pub branch_id: usize,
    /// Number of roots with `Im m > 0` and `Im(w·m) > 0`. One in every case
    /// we have seen; recorded so callers can check.
    pub admissible_roots: usize,
}

/// `(w, 2w, w + 1 − |z|², 1)`, highest degree first.
pub fn cubic_coefficients(z: C64, w: C64) -> [C64; 4] {
    let one = C64::new(1.0, 0.0);
    [w, 2.0 * w, w + one - z.norm_sqr(), one]
}

fn horner(c: &[C64; 4], x: C64) -> (C64, C64) {
    let mut p = c[0];
    let mut dp = C64::new(0.0, 0.0);
    for &a in &c[1..] {
        dp = dp * x + p;
        p = p * x + a;
    }
    (p, dp)
}

/// All three roots of `c[0]x³ + c[1]x² + c[2]x + c[3]`, by Cardano's formula
/// followed by two Newton steps on the original polynomial.
pub fn cubic_roots(c: [C64; 4]) -> Result<[C64; 3]> {
    if c[0].norm() == 0.0 {
        return Err(Error::Domain("leading coefficient of the cubic vanishes".into()));
    }
    let b = c[1] / c[0];
    let cc = c[2] / c[0];
    let d = c[3] / c[0];
    let p = cc - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * cc / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let sq = disc.sqrt();
    // Pick the sign that avoids cancellation.
    let (s1, s2) = (-q / 2.0 + sq, -q / 2.0 - sq);
    let s = if s1.norm() >= s2.norm() { s1 } else { s2 };
    let u = s.cbrt();
    let omega = C64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut roots = [C64::new(0.0, 0.0); 3];
    let mut rot = C64::new(1.0, 0.0);
    for r in roots.iter_mut() {
        let uk = u * rot;
        let vk = if uk.norm() == 0.0 { C64::new(0.0, 0.0) } else { -p / (3.0 * uk) };
        *r = uk + vk - b / 3.0;
        rot *= omega;
    }
    for r in roots.iter_mut() {
        for _ in 0..2 {
            let (f, df) = horner(&c, *r);
            if df.norm() == 0.0 || f.norm() == 0.0 {
                break;
            }
            let step = f / df;
            if step.re.is_finite() && step.im.is_finite() {
                *r -= step;
            }
        }
    }
    Ok(roots)
}

fn check_upper(w: C64) -> Result<()> {
    if !(w.im > 0.0) || !w.re.is_finite() || !w.im.is_finite() {
        return Err(Error::Domain(format!("spectral parameter needs finite w with Im w > 0, got {w}")));
    }
    Ok(())
}

fn sorted_roots(z: C64, w: C64) -> Result<[C64; 3]> {
    let mut roots = cubic_roots(cubic_coefficients(z, w))?;
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(roots)
}

fn solution_from(z: C64, w: C64, roots: &[C64; 3], idx: usize, admissible: usize) -> Result<SelfConsistentSolution> {
    let m = roots[idx];
    if m.norm() < DEGENERATE_GUARD || (1.0 + m).norm() < DEGENERATE_GUARD {
        return Err(Error::Degenerate(format!("m_c = {m} sits on a pole of the equation at z={z}, w={w}")));
    }
    Ok(SelfConsistentSolution {
        z,
        w,
        m_c: m,
        residual: mc_residual(m, z, w)?,
        branch_id: idx,
        admissible_roots: admissible,
    })
}

/// Solves for `m_c(z, w)`.
///
/// The admissible root has `Im m > 0` and `Im(w·m) > 0`. Should rounding
/// ever leave several admissible roots, the one with the larger
/// `min(Im m, Im(w·m)/|w|)` wins and `admissible_roots` records the count.
pub fn solve_mc(z: C64, w: C64) -> Result<SelfConsistentSolution> {
    check_upper(w)?;
    let roots = sorted_roots(z, w)?;
    let score = |m: C64| m.im.min((w * m).im / w.norm());
    let admissible = roots.iter().filter(|m| m.im > 0.0 && (w * **m).im > 0.0).count();
    if admissible == 0 {
        return Err(Error::SolverTolerance {
            z,
            w,
            message: format!("no root with Im m > 0 and Im(w m) > 0 among {roots:?}"),
        });
    }
    let idx = (0..3)
        .max_by(|&i, &j| score(roots[i]).total_cmp(&score(roots[j])))
        .expect("three roots");
    solution_from(z, w, &roots, idx, admissible)
}

/// `|m⁻¹ + w(1 + m) − |z|²/(1 + m)|`.
pub fn mc_residual(m: C64, z: C64, w: C64) -> Result<f64> {
    if m.norm() <= 1e-12 || (1.0 + m).norm() <= 1e-12 {
        return Err(Error::Degenerate(format!("residual undefined at m = {m}")));
    }
    Ok((m.inv() + w * (1.0 + m) - z.norm_sqr() / (1.0 + m)).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportInterval {
    pub z_mod: f64,
    /// `√(1 + 8|z|²)`.
    pub a_frak: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl SupportInterval {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lambda_minus && x <= self.lambda_plus
    }

    /// Default gap threshold `λ−/2`.
    pub fn gap_threshold(&self) -> f64 {
        self.lambda_minus / 2.0
    }
}

/// `λ± = (𝔞 ± 3)³ / (8(𝔞 ± 1))`. For `|z| < 1` the formula for `λ−` turns
/// negative; the support then reaches 0 and `λ−` is reported as 0.
pub fn support_endpoints(z: C64) -> SupportInterval {
    let z_mod = z.norm();
    let a = (1.0 + 8.0 * z_mod * z_mod).sqrt();
    let lm = if z_mod <= 1.0 { 0.0 } else { (a - 3.0).powi(3) / (8.0 * (a - 1.0)) };
    SupportInterval {
        z_mod,
        a_frak: a,
        lambda_minus: lm.max(0.0),
        lambda_plus: (a + 3.0).powi(3) / (8.0 * (a + 1.0)),
    }
}

/// `(1/π)·Im m_c(z, E + i·eta_probe)`, an η-smoothed density of `ν_z`.
pub fn density(z: C64, e: f64, eta_probe: f64) -> Result<f64> {
    if !(1e-9..=1e-3).contains(&eta_probe) {
        return Err(Error::Precondition(format!("eta_probe must lie in [1e-9, 1e-3], got {eta_probe}")));
    }
    Ok(solve_mc(z, C64::new(e, eta_probe))?.m_c.im / std::f64::consts::PI)
}

/// Trapezoidal integral of [`density`] over `[lo, hi]` with `nodes` points.
pub fn density_mass(z: C64, lo: f64, hi: f64, nodes: usize, eta_probe: f64) -> Result<f64> {
    if nodes < 2 || !(lo < hi) {
        return Err(Error::Precondition(format!(
            "quadrature needs >= 2 nodes on a proper interval, got {nodes} on [{lo}, {hi}]"
        )));
    }
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut sum = 0.0;
    for k in 0..nodes {
        let weight = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        sum += weight * density(z, lo + k as f64 * h, eta_probe)?;
    }
    Ok(sum * h)
}

/// Rectangle `0 ≤ E ≤ e_max`, `eta_min ≤ η ≤ eta_max` of spectral parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SpectralWindow {
    pub e_max: f64,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl SpectralWindow {
    /// `{0 ≤ E ≤ λ−(z)/2, eta_min ≤ η ≤ 1}`.
    pub fn s0(z: C64, eta_min: f64) -> Self {
        SpectralWindow {
            e_max: support_endpoints(z).gap_threshold(),
            eta_min,
            eta_max: 1.0,
        }
    }

    pub fn contains(&self, w: C64) -> bool {
        (0.0..=self.e_max).contains(&w.re) && (self.eta_min..=self.eta_max).contains(&w.im)
    }

    /// `ne × neta` points: `E` uniform on `[0, e_max]`, `η` log-uniform.
    pub fn grid(&self, ne: usize, neta: usize) -> Vec<C64> {
        let es: Vec<f64> = if ne <= 1 {
            vec![0.0]
        } else {
            (0..ne).map(|k| self.e_max * k as f64 / (ne - 1) as f64).collect()
        };
        let etas: Vec<f64> = if neta <= 1 {
            vec![self.eta_max]
        } else {
            let (l0, l1) = (self.eta_min.ln(), self.eta_max.ln());
            (0..neta).map(|k| (l0 + (l1 - l0) * k as f64 / (neta - 1) as f64).exp()).collect()
        };
        es.iter()
            .flat_map(|&e| etas.iter().map(move |&eta| C64::new(e, eta)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeReport {
    pub z: C64,
    pub tau0: f64,
    /// Smallest `Re m_c` seen.
    pub min_re: f64,
    /// Range of `|Re m_c|`.
    pub abs_re_range: (f64, f64),
    /// Range of `Im m_c / η`.
    pub im_ratio_range: (f64, f64),
    /// Largest `max/min` of `Im m_c / η` across the η grid at a fixed `E`.
    pub worst_eta_spread: f64,
    /// Empirical constant `c` with `c ≤ |Re m_c|, Im m_c/η ≤ 1/c`.
    pub c: f64,
    pub re_nonnegative: bool,
}

/// Evaluates `m_c` below the lower edge and measures how closely it follows
/// `|Re m_c| ~ 1`, `Re m_c ≥ 0`, `Im m_c ~ η`. `tau0` defaults to `λ−/2`.
pub fn edge_asymptotics_check(z: C64, e_grid: &[f64], eta_grid: &[f64], tau0: Option<f64>) -> Result<EdgeReport> {
    if z.norm() < 1.1 {
        return Err(Error::Precondition(format!("edge check needs |z| >= 1.1, got {}", z.norm())));
    }
    if e_grid.is_empty() || eta_grid.is_empty() {
        return Err(Error::Precondition("edge check needs non-empty grids".into()));
    }
    let support = support_endpoints(z);
    let tau0 = tau0.unwrap_or(support.gap_threshold());
    let e_top = support.lambda_minus - tau0;
    if let Some(e) = e_grid.iter().find(|&&e| !(0.0..=e_top).contains(&e)) {
        return Err(Error::Precondition(format!("E = {e} lies outside [0, λ− − τ₀] = [0, {e_top}]")));
    }
    let mut min_re = f64::INFINITY;
    let mut abs_re = (f64::INFINITY, 0.0f64);
    let mut ratio = (f64::INFINITY, 0.0f64);
    let mut spread = 1.0f64;
    for &e in e_grid {
        let mut local = (f64::INFINITY, 0.0f64);
        for &eta in eta_grid {
            let m = solve_mc(z, C64::new(e, eta))?.m_c;
            min_re = min_re.min(m.re);
            abs_re = (abs_re.0.min(m.re.abs()), abs_re.1.max(m.re.abs()));
            let r = m.im / eta;
            local = (local.0.min(r), local.1.max(r));
        }
        ratio = (ratio.0.min(local.0), ratio.1.max(local.1));
        spread = spread.max(local.1 / local.0);
    }
    let c = abs_re.0.min(1.0 / abs_re.1).min(ratio.0).min(1.0 / ratio.1);
    Ok(EdgeReport {
        z,
        tau0,
        min_re,
        abs_re_range: abs_re,
        im_ratio_range: ratio,
        worst_eta_spread: spread,
        c,
        re_nonnegative: min_re >= -1e-10,
    })
}

/// Smallest `C ≥ 1` with `|m_c|, |1 + m_c| ∈ [1/C, C]` at every point.
pub fn stability_constant(z: C64, points: &[C64]) -> Result<f64> {
    let mut c = 1.0f64;
    for &w in points {
        let m = solve_mc(z, w)?.m_c;
        for v in [m.norm(), (1.0 + m).norm()] {
            c = c.max(v).max(1.0 / v);
        }
    }
    Ok(c)
}

/// Follows one root of the cubic along `w_path` by nearest-root matching.
/// The first point starts from [`solve_mc`].
pub fn branch_continuation(z: C64, w_path: &[C64]) -> Result<Vec<SelfConsistentSolution>> {
    for (k, w) in w_path.iter().enumerate() {
        check_upper(*w)?;
        if k > 0 && (*w - w_path[k - 1]).norm() >= 0.1 {
            return Err(Error::Precondition(format!("path step {k} has length >= 0.1")));
        }
    }
    let Some(&w0) = w_path.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(w_path.len());
    let first = solve_mc(z, w0)?;
    let mut prev = first.m_c;
    out.push(first);
    for (k, &w) in w_path.iter().enumerate().skip(1) {
        let roots = sorted_roots(z, w)?;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| (roots[i] - prev).norm().total_cmp(&(roots[j] - prev).norm()));
        if (roots[order[0]] - roots[order[1]]).norm() < COLLISION_TOL {
            return Err(Error::BranchAmbiguity {
                index: k,
                message: format!("roots {} and {} collide", roots[order[0]], roots[order[1]]),
            });
        }
        let admissible = roots.iter().filter(|m| m.im > 0.0 && (w * **m).im > 0.0).count();
        let sol = solution_from(z, w, &roots, order[0], admissible)?;
        prev = sol.m_c;
        out.push(sol);
    }
    Ok(out)
}
