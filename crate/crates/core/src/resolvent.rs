//! Resolvents of the hermitized linearization and their minors.
//!
//! For `Y = X − z` and index sets `T` (removed columns) and `U` (removed
//! rows), `Y^(T,U)` deletes those rows and columns and
//!
//! ```text
//! G^(T,U) = (Y^(T,U)* Y^(T,U) − w)⁻¹,   𝒢^(T,U) = (Y^(T,U) Y^(T,U)* − w)⁻¹.
//! ```
//!
//! Indices are kept: `G^(T,U)` is stored as an `nN×nN` matrix whose rows and
//! columns in `T` are exactly zero, and `𝒢^(T,U)` likewise on `U`. Every
//! minor is a fresh dense solve; the update formulas between minors are only
//! evaluated in [`identity_suite`] as checks.

use std::collections::BTreeSet;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::ensembles::LinearizedSystem;
use crate::selfconsistent::solve_mc;
use crate::{Error, Result};

/// Smallest denominator accepted in any Schur-type division.
pub const DENOMINATOR_GUARD: f64 = 1e-8;

/// Removed columns `t` and removed rows `u`, 0-based. The sets may overlap.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MinorIndexSet {
    pub t: BTreeSet<usize>,
    pub u: BTreeSet<usize>,
}

impl MinorIndexSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(t: impl IntoIterator<Item = usize>, u: impl IntoIterator<Item = usize>) -> Self {
        MinorIndexSet {
            t: t.into_iter().collect(),
            u: u.into_iter().collect(),
        }
    }

    /// `(T ∪ {k}, U)`.
    pub fn with_t(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.t.insert(k);
        out
    }

    /// `(T, U ∪ {k})`.
    pub fn with_u(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.u.insert(k);
        out
    }

    fn validate(&self, size: usize) -> Result<()> {
        match self.t.iter().chain(&self.u).find(|&&k| k >= size) {
            Some(k) => Err(Error::Precondition(format!("minor index {k} out of range 0..{size}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolventPair {
    pub w: C64,
    pub g: Mat<C64>,
    pub gc: Mat<C64>,
    pub minors: MinorIndexSet,
    n: usize,
    dim: usize,
}

impl ResolventPair {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn check_w(w: C64) -> Result<()> {
    if !(w.im > 0.0) || !w.re.is_finite() || !w.im.is_finite() {
        return Err(Error::Domain(format!("resolvent needs finite w with Im w > 0, got {w}")));
    }
    Ok(())
}

fn invert(a: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let inv = a.partial_piv_lu().inverse();
    for j in 0..inv.ncols() {
        for i in 0..inv.nrows() {
            let v = inv[(i, j)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::InternalConsistency("resolvent solve produced non-finite entries".into()));
            }
        }
    }
    Ok(inv)
}

fn embed(small: &Mat<C64>, idx: &[usize], size: usize) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(size, size);
    for (jj, &j) in idx.iter().enumerate() {
        for (ii, &i) in idx.iter().enumerate() {
            out[(i, j)] = small[(ii, jj)];
        }
    }
    out
}

fn retained(size: usize, removed: &BTreeSet<usize>) -> Vec<usize> {
    (0..size).filter(|k| !removed.contains(k)).collect()
}

fn reduced_y(y: &Mat<C64>, rows: &[usize], cols: &[usize]) -> Mat<C64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
}

fn shift(mut a: Mat<C64>, w: C64) -> Mat<C64> {
    for k in 0..a.nrows() {
        a[(k, k)] -= w;
    }
    a
}

/// `G^(T,U)` alone, zero-padded.
pub fn resolvent_g(sys: &LinearizedSystem, w: C64, minors: &MinorIndexSet) -> Result<Mat<C64>> {
    check_w(w)?;
    let size = sys.size();
    minors.validate(size)?;
    let rows = retained(size, &minors.u);
    let cols = retained(size, &minors.t);
    let yr = reduced_y(sys.y(), &rows, &cols);
    let a = shift(yr.adjoint() * yr.as_ref(), w);
    Ok(embed(&invert(a.as_ref())?, &cols, size))
}

/// `𝒢^(T,U)` alone, zero-padded.
pub fn resolvent_gc(sys: &LinearizedSystem, w: C64, minors: &MinorIndexSet) -> Result<Mat<C64>> {
    check_w(w)?;
    let size = sys.size();
    minors.validate(size)?;
    let rows = retained(size, &minors.u);
    let cols = retained(size, &minors.t);
    let yr = reduced_y(sys.y(), &rows, &cols);
    let a = shift(yr.as_ref() * yr.adjoint(), w);
    Ok(embed(&invert(a.as_ref())?, &rows, size))
}

pub fn resolvent_pair(sys: &LinearizedSystem, w: C64, minors: &MinorIndexSet) -> Result<ResolventPair> {
    Ok(ResolventPair {
        w,
        g: resolvent_g(sys, w, minors)?,
        gc: resolvent_gc(sys, w, minors)?,
        minors: minors.clone(),
        n: sys.n(),
        dim: sys.dim(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialTraces {
    /// `m_G^a`, one per block.
    pub m_g: Vec<C64>,
    /// `m_𝒢^a`.
    pub m_gc: Vec<C64>,
    /// `(1/n) Σ_a m_G^a`.
    pub m: C64,
}

/// `m^a = (1/N) Σ_{i} M_{i(a) i(a)}` for `M = G, 𝒢`.
pub fn partial_traces(rp: &ResolventPair) -> PartialTraces {
    let (n, dim) = (rp.n, rp.dim);
    let block = |m: &Mat<C64>, a: usize| -> C64 {
        (0..dim).map(|i| m[(a * dim + i, a * dim + i)]).sum::<C64>() / dim as f64
    };
    let m_g: Vec<C64> = (0..n).map(|a| block(&rp.g, a)).collect();
    let m_gc: Vec<C64> = (0..n).map(|a| block(&rp.gc, a)).collect();
    let m = m_g.iter().sum::<C64>() / n as f64;
    PartialTraces { m_g, m_gc, m }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationStats {
    /// `Λ = max_a max(|m_G^a − m_c|, |m_𝒢^a − m_c|)`.
    pub lambda: f64,
    /// `Ψ = 1/√N + √(Λ/(Nη)) + 1/(Nη)`.
    pub psi: f64,
    pub eta: f64,
    pub dim: usize,
}

pub fn deviation_stats(pt: &PartialTraces, m_c: C64, eta: f64, dim: usize) -> Result<DeviationStats> {
    if !(eta > 0.0) || dim == 0 {
        return Err(Error::Precondition(format!("need eta > 0 and N >= 1, got eta={eta}, N={dim}")));
    }
    let lambda = pt
        .m_g
        .iter()
        .chain(&pt.m_gc)
        .map(|m| (m - m_c).norm())
        .fold(0.0, f64::max);
    let nf = dim as f64;
    let psi = 1.0 / nf.sqrt() + (lambda / (nf * eta)).sqrt() + 1.0 / (nf * eta);
    Ok(DeviationStats { lambda, psi, eta, dim })
}

/// Per-block residuals of the self-consistent system for `m_G` and `m_𝒢`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceResiduals {
    /// `1/m_G^a + w(1 + m_𝒢^{a−1}) − |z|²/(1 + m_G^{a+1})`.
    pub g: Vec<C64>,
    /// `1/m_𝒢^a + w(1 + m_G^{a+1}) − |z|²/(1 + m_𝒢^{a−1})`.
    pub gc: Vec<C64>,
}

impl SceResiduals {
    pub fn max_abs(&self) -> f64 {
        self.g.iter().chain(&self.gc).map(|r| r.norm()).fold(0.0, f64::max)
    }
}

pub fn sce_residual(pt: &PartialTraces, z: C64, w: C64) -> Result<SceResiduals> {
    let n = pt.m_g.len();
    if n == 0 || pt.m_gc.len() != n {
        return Err(Error::Precondition("partial traces are empty or mismatched".into()));
    }
    for (label, v) in pt
        .m_g
        .iter()
        .chain(&pt.m_gc)
        .flat_map(|m| [("m", *m), ("1 + m", 1.0 + *m)])
    {
        if v.norm() <= DENOMINATOR_GUARD {
            return Err(Error::Degenerate(format!("|{label}| = {} below guard", v.norm())));
        }
    }
    let zz = z.norm_sqr();
    let prev = |a: usize| (a + n - 1) % n;
    let next = |a: usize| (a + 1) % n;
    let g = (0..n)
        .map(|a| pt.m_g[a].inv() + w * (1.0 + pt.m_gc[prev(a)]) - zz / (1.0 + pt.m_g[next(a)]))
        .collect();
    let gc = (0..n)
        .map(|a| pt.m_gc[a].inv() + w * (1.0 + pt.m_g[next(a)]) - zz / (1.0 + pt.m_gc[prev(a)]))
        .collect();
    Ok(SceResiduals { g, gc })
}

/// `y_r M y_s*` with `y_r` row `r` of `Y`.
fn row_form(y: &Mat<C64>, r: usize, m: &Mat<C64>, s: usize) -> C64 {
    let size = y.ncols();
    let mut acc = C64::new(0.0, 0.0);
    for l in 0..size {
        let ys = y[(s, l)].conj();
        if ys == C64::new(0.0, 0.0) {
            continue;
        }
        let mut inner = C64::new(0.0, 0.0);
        for k in 0..size {
            inner += y[(r, k)] * m[(k, l)];
        }
        acc += inner * ys;
    }
    acc
}

/// `𝐲_r* M 𝐲_s` with `𝐲_r` column `r` of `Y`.
fn col_form(y: &Mat<C64>, r: usize, m: &Mat<C64>, s: usize) -> C64 {
    let size = y.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for l in 0..size {
        let ys = y[(l, s)];
        if ys == C64::new(0.0, 0.0) {
            continue;
        }
        let mut inner = C64::new(0.0, 0.0);
        for k in 0..size {
            inner += y[(k, r)].conj() * m[(k, l)];
        }
        acc += inner * ys;
    }
    acc
}

fn guarded(v: C64, what: &str) -> Result<C64> {
    if v.norm() <= DENOMINATOR_GUARD {
        return Err(Error::Degenerate(format!("{what} = {v} below the denominator guard")));
    }
    Ok(v)
}

/// Which centred quadratic form [`fluctuation_z`] evaluates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FluctuationVariant {
    /// `y G^(i(a),i(a)) y*` for row `y = y_{i(a)}`, centred by `m_{G^(i(a),i(a))}^{a+1}`.
    Z,
    /// `𝐲* 𝒢^(i(a),∅) 𝐲` for column `𝐲 = 𝐲_{i(a)}`, centred by
    /// `(1/N) Σ_k 𝒢^{a−1}_kk + |z|² 𝒢_{i(a)i(a)}`. The `z`-cross terms stay in.
    CalZ,
    /// Row form over `G^(T ∪ {i(a)}, {i(a)})`.
    WithMinor { t: Vec<usize> },
}

/// The conditional-expectation-centred quadratic form of row or column
/// `i(a)`. The expectation is analytic: the minor resolvent does not depend
/// on the removed row/column, so the result is exactly centred.
pub fn fluctuation_z(sys: &LinearizedSystem, w: C64, a: usize, i: usize, variant: &FluctuationVariant) -> Result<C64> {
    let (n, dim) = (sys.n(), sys.dim());
    if a >= n || i >= dim {
        return Err(Error::Precondition(format!("block {a} / row {i} outside n={n}, N={dim}")));
    }
    let r = sys.global_index(a, i);
    let y = sys.y();
    let block_mean = |m: &Mat<C64>, b: usize| -> C64 {
        (0..dim).map(|k| m[(b * dim + k, b * dim + k)]).sum::<C64>() / dim as f64
    };
    match variant {
        FluctuationVariant::Z | FluctuationVariant::WithMinor { .. } => {
            let mut minors = MinorIndexSet::new([r], [r]);
            if let FluctuationVariant::WithMinor { t } = variant {
                minors.t.extend(t.iter().copied());
            }
            let g = resolvent_g(sys, w, &minors)?;
            Ok(row_form(y, r, &g, r) - block_mean(&g, (a + 1) % n))
        }
        FluctuationVariant::CalZ => {
            let gc = resolvent_gc(sys, w, &MinorIndexSet::new([r], []))?;
            let expect = block_mean(&gc, (a + n - 1) % n) + sys.z().norm_sqr() * gc[(r, r)];
            Ok(col_form(y, r, &gc, r) - expect)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntrywiseReport {
    pub m_c: C64,
    /// `max |G_ii − m_c|` and `max |𝒢_ii − m_c|` over sampled `i`.
    pub max_diag_deviation: f64,
    /// `max |G_kl|`, `max |𝒢_kl|` over sampled `k ≠ l`.
    pub max_offdiag: f64,
    pub samples: usize,
}

/// Deterministic sample of `count` diagonal positions and `count` off-diagonal pairs.
fn entry_sample(size: usize, count: usize) -> Vec<(usize, usize)> {
    let count = count.clamp(1, size);
    let mut out = Vec::with_capacity(2 * count);
    for t in 0..count {
        let k = t * size / count;
        out.push((k, k));
        if size > 1 {
            let l = (k + 1 + (7 * t) % (size - 1)) % size;
            out.push((k, if l == k { (k + 1) % size } else { l }));
        }
    }
    out
}

pub fn entrywise_law_check_pair(rp: &ResolventPair, m_c: C64, sample_size: usize) -> EntrywiseReport {
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    let pairs = entry_sample(rp.g.nrows(), sample_size);
    for &(k, l) in &pairs {
        for m in [&rp.g, &rp.gc] {
            if k == l {
                diag = diag.max((m[(k, k)] - m_c).norm());
            } else {
                off = off.max(m[(k, l)].norm());
            }
        }
    }
    EntrywiseReport {
        m_c,
        max_diag_deviation: diag,
        max_offdiag: off,
        samples: pairs.len(),
    }
}

pub fn entrywise_law_check(sys: &LinearizedSystem, w: C64, sample_size: usize) -> Result<EntrywiseReport> {
    let rp = resolvent_pair(sys, w, &MinorIndexSet::empty())?;
    let m_c = solve_mc(sys.z(), w)?.m_c;
    Ok(entrywise_law_check_pair(&rp, m_c, sample_size))
}

/// Indices at which [`identity_suite`] evaluates, around a base minor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentitySample {
    pub minors: MinorIndexSet,
    /// At least three distinct indices outside `T ∪ U`.
    pub indices: Vec<usize>,
}

/// Largest residual per identity. Exact identities should be at round-off
/// level; the two ratio fields must stay `≤ 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `[B₁₁]⁻¹ − (A₁₁ − A₁₂A₂₂⁻¹A₂₁)` for `A = Y*Y − w`, `B = G`.
    pub schur_complement: f64,
    /// `A(A*A − w)⁻¹A* − I − w(AA* − w)⁻¹` for `A = Y^(T,U)`.
    pub woodbury: f64,
    /// `Σ_k |G_ki|² − Im G_ii / η`, same for `𝒢`.
    pub im_identity: f64,
    /// `G^(T,U)_ij − G^(Tk,U)_ij − G_ik G_kj / G_kk`, and the row analogue for `𝒢`.
    pub minor_difference: f64,
    /// Rank-one updates when a row (for `G`) or a column (for `𝒢`) is removed.
    pub rank_one_update: f64,
    /// Expansion of `G` entries through `𝒢` minors.
    pub schur_expansion_g: f64,
    /// Expansion of `𝒢` entries through `G` minors.
    pub schur_expansion_gc: f64,
    /// `max |Σ_{k∈K} (M^(…i…)_kk − M_kk)| · η / 4`.
    pub trace_minor_ratio: f64,
    /// `(|∂_E G_ii| + |∂_η G_ii| + |∂_E 𝒢_ii| + |∂_η 𝒢_ii|) · η² / 10`.
    pub derivative_ratio: f64,
}

impl IdentityReport {
    /// Largest residual among the exact identities.
    pub fn max_exact_residual(&self) -> f64 {
        [
            self.schur_complement,
            self.woodbury,
            self.im_identity,
            self.minor_difference,
            self.rank_one_update,
            self.schur_expansion_g,
            self.schur_expansion_gc,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn merge(&self, other: &IdentityReport) -> IdentityReport {
        IdentityReport {
            schur_complement: self.schur_complement.max(other.schur_complement),
            woodbury: self.woodbury.max(other.woodbury),
            im_identity: self.im_identity.max(other.im_identity),
            minor_difference: self.minor_difference.max(other.minor_difference),
            rank_one_update: self.rank_one_update.max(other.rank_one_update),
            schur_expansion_g: self.schur_expansion_g.max(other.schur_expansion_g),
            schur_expansion_gc: self.schur_expansion_gc.max(other.schur_expansion_gc),
            trace_minor_ratio: self.trace_minor_ratio.max(other.trace_minor_ratio),
            derivative_ratio: self.derivative_ratio.max(other.derivative_ratio),
        }
    }
}

fn max_abs_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

fn schur_complement_residual(sys: &LinearizedSystem, w: C64, minors: &MinorIndexSet, g: &Mat<C64>, s: [usize; 2]) -> Result<f64> {
    let size = sys.size();
    let rows = retained(size, &minors.u);
    let cols = retained(size, &minors.t);
    let yr = reduced_y(sys.y(), &rows, &cols);
    let a = shift(yr.adjoint() * yr.as_ref(), w);
    let pos: Vec<usize> = s
        .iter()
        .map(|k| cols.iter().position(|c| c == k).expect("sample index retained"))
        .collect();
    let rest: Vec<usize> = (0..cols.len()).filter(|p| !pos.contains(p)).collect();
    let pick = |ri: &[usize], ci: &[usize]| Mat::from_fn(ri.len(), ci.len(), |i, j| a[(ri[i], ci[j])]);
    let a11 = pick(&pos, &pos);
    let a12 = pick(&pos, &rest);
    let a21 = pick(&rest, &pos);
    let a22 = pick(&rest, &rest);
    let x = a22.partial_piv_lu().solve(&a21);
    let schur = &a11 - &a12 * &x;
    let b11 = Mat::from_fn(2, 2, |i, j| g[(s[i], s[j])]);
    let b11_inv = invert(b11.as_ref())?;
    Ok(max_abs_diff(&b11_inv, &schur))
}

fn woodbury_residual(sys: &LinearizedSystem, w: C64, minors: &MinorIndexSet, rp: &ResolventPair) -> f64 {
    let size = sys.size();
    let rows = retained(size, &minors.u);
    let cols = retained(size, &minors.t);
    let a = reduced_y(sys.y(), &rows, &cols);
    let g = Mat::from_fn(cols.len(), cols.len(), |i, j| rp.g[(cols[i], cols[j])]);
    let gc = Mat::from_fn(rows.len(), rows.len(), |i, j| rp.gc[(rows[i], rows[j])]);
    let lhs = &a * &g * a.adjoint();
    let rhs = Mat::from_fn(rows.len(), rows.len(), |i, j| {
        let id = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        id + w * gc[(i, j)]
    });
    max_abs_diff(&lhs, &rhs)
}

fn im_identity_residual(m: &Mat<C64>, i: usize, eta: f64) -> f64 {
    let lhs: f64 = (0..m.nrows()).map(|k| m[(k, i)].norm_sqr()).sum();
    (lhs - m[(i, i)].im / eta).abs()
}

fn trace_diff_ratio(a: &Mat<C64>, b: &Mat<C64>, sets: &[Vec<usize>], eta: f64) -> f64 {
    sets.iter()
        .map(|k_set| {
            let s: C64 = k_set.iter().map(|&k| a[(k, k)] - b[(k, k)]).sum();
            s.norm() * eta / 4.0
        })
        .fold(0.0, f64::max)
}

/// Evaluates every exact identity between resolvent minors at the sampled
/// indices, plus the trace-minor inequality and the derivative bound.
pub fn identity_suite(sys: &LinearizedSystem, w: C64, sample: &IdentitySample) -> Result<IdentityReport> {
    check_w(w)?;
    let size = sys.size();
    let base = &sample.minors;
    base.validate(size)?;
    let idx = &sample.indices;
    let distinct: BTreeSet<usize> = idx.iter().copied().collect();
    if idx.len() < 3 || distinct.len() != idx.len() {
        return Err(Error::Precondition("identity suite needs at least 3 distinct sample indices".into()));
    }
    if let Some(k) = idx.iter().find(|k| **k >= size || base.t.contains(k) || base.u.contains(k)) {
        return Err(Error::Precondition(format!("sample index {k} is out of range or inside T ∪ U")));
    }
    let eta = w.im;
    let y = sys.y();
    let rp = resolvent_pair(sys, w, base)?;
    let (g, gc) = (&rp.g, &rp.gc);
    let mut rep = IdentityReport::default();

    rep.schur_complement = schur_complement_residual(sys, w, base, g, [idx[0], idx[1]])?
        .max(schur_complement_residual(sys, w, base, g, [idx[1], idx[2]])?);
    rep.woodbury = woodbury_residual(sys, w, base, &rp);
    for &i in idx {
        rep.im_identity = rep
            .im_identity
            .max(im_identity_residual(g, i, eta))
            .max(im_identity_residual(gc, i, eta));
    }

    let mut k_sets: Vec<Vec<usize>> = vec![(0..size).collect(), idx.clone()];
    for b in 0..sys.n() {
        k_sets.push((0..sys.dim()).map(|i| sys.global_index(b, i)).collect());
    }

    for &k in idx {
        let g_tk = resolvent_g(sys, w, &base.with_t(k))?;
        let g_uk = resolvent_g(sys, w, &base.with_u(k))?;
        let gc_tk = resolvent_gc(sys, w, &base.with_t(k))?;
        let gc_uk = resolvent_gc(sys, w, &base.with_u(k))?;

        // Column k removed from G, row k removed from 𝒢.
        let gkk = guarded(g[(k, k)], "G_kk")?;
        let gckk = guarded(gc[(k, k)], "𝒢_kk")?;
        for &i in idx.iter().filter(|&&i| i != k) {
            for &j in idx.iter().filter(|&&j| j != k) {
                let r1 = (g[(i, j)] - g_tk[(i, j)] - g[(i, k)] * g[(k, j)] / gkk).norm();
                let r2 = (gc[(i, j)] - gc_uk[(i, j)] - gc[(i, k)] * gc[(k, j)] / gckk).norm();
                rep.minor_difference = rep.minor_difference.max(r1).max(r2);
            }
        }

        // Row k removed: rank-one update of G.
        let u: Vec<C64> = (0..size)
            .map(|i| (0..size).map(|l| g_uk[(i, l)] * y[(k, l)].conj()).sum())
            .collect();
        let v: Vec<C64> = (0..size)
            .map(|j| (0..size).map(|l| y[(k, l)] * g_uk[(l, j)]).sum())
            .collect();
        let den = guarded(1.0 + (0..size).map(|l| y[(k, l)] * u[l]).sum::<C64>(), "1 + y G y*")?;
        // Column k removed: rank-one update of 𝒢.
        let uc: Vec<C64> = (0..size)
            .map(|i| (0..size).map(|l| gc_tk[(i, l)] * y[(l, k)]).sum())
            .collect();
        let vc: Vec<C64> = (0..size)
            .map(|j| (0..size).map(|l| y[(l, k)].conj() * gc_tk[(l, j)]).sum())
            .collect();
        let denc = guarded(1.0 + (0..size).map(|l| y[(l, k)].conj() * uc[l]).sum::<C64>(), "1 + 𝐲* 𝒢 𝐲")?;
        for j in 0..size {
            for i in 0..size {
                let r1 = (g[(i, j)] - g_uk[(i, j)] + u[i] * v[j] / den).norm();
                let r2 = (gc[(i, j)] - gc_tk[(i, j)] + uc[i] * vc[j] / denc).norm();
                rep.rank_one_update = rep.rank_one_update.max(r1).max(r2);
            }
        }

        rep.trace_minor_ratio = rep
            .trace_minor_ratio
            .max(trace_diff_ratio(&g_tk, g, &k_sets, eta))
            .max(trace_diff_ratio(&g_uk, g, &k_sets, eta))
            .max(trace_diff_ratio(&gc_tk, gc, &k_sets, eta))
            .max(trace_diff_ratio(&gc_uk, gc, &k_sets, eta));

        // Schur expansions with i = k.
        let i = k;
        let gii = guarded(g[(i, i)], "G_ii")?;
        let gcii = guarded(gc[(i, i)], "𝒢_ii")?;
        let lhs = gii.inv() + w * (1.0 + col_form(y, i, &gc_tk, i));
        rep.schur_expansion_g = rep.schur_expansion_g.max(lhs.norm());
        let lhs = gcii.inv() + w * (1.0 + row_form(y, i, &g_uk, i));
        rep.schur_expansion_gc = rep.schur_expansion_gc.max(lhs.norm());
        for &j in idx.iter().filter(|&&j| j != i) {
            // G_ij = +w G_ii G^(Ti)_jj 𝐲_i* 𝒢^(Tij) 𝐲_j, and likewise for 𝒢. The −w form does not hold.
            let gc_tij = resolvent_gc(sys, w, &base.with_t(i).with_t(j))?;
            let rhs = w * g[(i, i)] * g_tk[(j, j)] * col_form(y, i, &gc_tij, j);
            rep.schur_expansion_g = rep.schur_expansion_g.max((g[(i, j)] - rhs).norm());
            let g_uij = resolvent_g(sys, w, &base.with_u(i).with_u(j))?;
            let rhs = w * gc[(i, i)] * gc_uk[(j, j)] * row_form(y, i, &g_uij, j);
            rep.schur_expansion_gc = rep.schur_expansion_gc.max((gc[(i, j)] - rhs).norm());
        }
    }

    // Central differences of the diagonal in E and η.
    let h = 1e-4 * eta;
    let shifted = |dw: C64| resolvent_pair(sys, w + dw, base);
    let (e_p, e_m) = (shifted(C64::new(h, 0.0))?, shifted(C64::new(-h, 0.0))?);
    let (n_p, n_m) = (shifted(C64::new(0.0, h))?, shifted(C64::new(0.0, -h))?);
    for &i in idx {
        let d = |p: &Mat<C64>, m: &Mat<C64>| ((p[(i, i)] - m[(i, i)]) / (2.0 * h)).norm();
        let total = d(&e_p.g, &e_m.g) + d(&n_p.g, &n_m.g) + d(&e_p.gc, &e_m.gc) + d(&n_p.gc, &n_m.gc);
        rep.derivative_ratio = rep.derivative_ratio.max(total * eta * eta / 10.0);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{build_linearization, sample_chain, EnsembleSpec, EntryLaw, FactorChain};
    use crate::spectral::{empirical_stieltjes, hermitized_spectrum};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn zero_system(n: usize, dim: usize, z: C64) -> LinearizedSystem {
        let chain = FactorChain::from_factors(vec![Mat::<C64>::zeros(dim, dim); n]).unwrap();
        build_linearization(&chain, z)
    }

    fn random_system(n: usize, dim: usize, seed: u64, z: C64) -> LinearizedSystem {
        let spec = EnsembleSpec::new(n, dim, EntryLaw::ComplexGaussian, seed).unwrap();
        build_linearization(&sample_chain(&spec).unwrap(), z)
    }

    #[test]
    fn free_resolvent_is_scalar() {
        let sys = zero_system(2, 3, c(1.0, 0.0));
        let w = c(0.0, 1.0);
        let rp = resolvent_pair(&sys, w, &MinorIndexSet::empty()).unwrap();
        let expect = (c(1.0, 0.0) - w).inv();
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { expect } else { c(0.0, 0.0) };
                assert!((rp.g[(i, j)] - e).norm() < 1e-15);
                assert!((rp.gc[(i, j)] - e).norm() < 1e-15);
            }
        }
        let pt = partial_traces(&rp);
        assert!(pt.m_g.iter().chain(&pt.m_gc).all(|m| (m - expect).norm() < 1e-15));
    }

    #[test]
    fn padding_is_exact_zero() {
        let sys = random_system(2, 4, 1, c(0.5, 0.2));
        let rp = resolvent_pair(&sys, c(0.1, 0.3), &MinorIndexSet::new([0], [0])).unwrap();
        for k in 0..8 {
            assert_eq!(rp.g[(0, k)], c(0.0, 0.0));
            assert_eq!(rp.g[(k, 0)], c(0.0, 0.0));
            assert_eq!(rp.gc[(0, k)], c(0.0, 0.0));
            assert_eq!(rp.gc[(k, 0)], c(0.0, 0.0));
        }
        assert_ne!(rp.g[(1, 1)], c(0.0, 0.0));
    }

    #[test]
    fn resolvent_residual() {
        let sys = random_system(2, 8, 2, c(1.5, 0.0));
        let w = c(0.05, 0.2);
        let rp = resolvent_pair(&sys, w, &MinorIndexSet::empty()).unwrap();
        let y = sys.y();
        let a = shift(y.adjoint() * y.as_ref(), w);
        let prod = &a * &rp.g;
        let id = Mat::<C64>::identity(16, 16);
        assert!(max_abs_diff(&prod, &id) <= 1e-11);
        assert!(partial_traces(&rp).m.im > 0.0);
    }

    #[test]
    fn rejects_real_spectral_parameter() {
        let sys = zero_system(2, 2, c(1.0, 0.0));
        assert!(matches!(
            resolvent_pair(&sys, c(1.0, 0.0), &MinorIndexSet::empty()),
            Err(Error::Domain(_))
        ));
        assert!(resolvent_pair(&sys, c(0.0, 1.0), &MinorIndexSet::new([9], [])).is_err());
    }

    #[test]
    fn traces_agree_with_eigenvalues() {
        let sys = random_system(3, 5, 3, c(1.2, -0.4));
        let w = c(0.3, 0.25);
        let rp = resolvent_pair(&sys, w, &MinorIndexSet::empty()).unwrap();
        let pt = partial_traces(&rp);
        let tr: C64 = (0..15).map(|i| rp.g[(i, i)]).sum();
        assert!((pt.m * 15.0 - tr).norm() < 1e-12);
        let m_eig = empirical_stieltjes(&hermitized_spectrum(&sys).unwrap(), w).unwrap();
        assert!((pt.m - m_eig).norm() < 1e-10);
    }

    #[test]
    fn deviation_stats_formulas() {
        let m_c = c(0.4, 0.1);
        let pt = PartialTraces {
            m_g: vec![m_c; 3],
            m_gc: vec![m_c; 3],
            m: m_c,
        };
        let s = deviation_stats(&pt, m_c, 0.2, 256).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.psi, 1.0 / 16.0 + 1.0 / (256.0 * 0.2));

        let pt = PartialTraces {
            m_g: vec![m_c + 0.01, m_c, m_c - c(0.0, 0.03)],
            m_gc: vec![m_c, m_c + c(0.02, 0.0), m_c],
            m: m_c,
        };
        let s = deviation_stats(&pt, m_c, 0.2, 256).unwrap();
        assert!((s.lambda - 0.03).abs() < 1e-15);
        let psi = 1.0 / 256f64.sqrt() + (s.lambda / (256.0 * 0.2)).sqrt() + 1.0 / (256.0 * 0.2);
        assert!((s.psi - psi).abs() <= 1e-15);
        let mut rotated = pt.clone();
        rotated.m_g.rotate_left(1);
        rotated.m_gc.rotate_left(2);
        assert_eq!(deviation_stats(&rotated, m_c, 0.2, 256).unwrap().lambda, s.lambda);
        assert!(deviation_stats(&pt, m_c, 0.0, 256).is_err());
    }

    #[test]
    fn sce_at_fixed_point_matches_cubic_residual() {
        let (z, w) = (c(1.5, 0.0), c(0.05, 0.2));
        let sol = solve_mc(z, w).unwrap();
        let pt = PartialTraces {
            m_g: vec![sol.m_c; 3],
            m_gc: vec![sol.m_c; 3],
            m: sol.m_c,
        };
        let res = sce_residual(&pt, z, w).unwrap();
        assert!((res.max_abs() - sol.residual).abs() < 1e-12);
        assert!(res.max_abs() < 1e-10);
        let bad = PartialTraces {
            m_g: vec![c(0.0, 0.0); 2],
            m_gc: vec![sol.m_c; 2],
            m: c(0.0, 0.0),
        };
        assert!(matches!(sce_residual(&bad, z, w), Err(Error::Degenerate(_))));
    }

    #[test]
    fn im_identity_on_free_system() {
        let sys = zero_system(2, 3, c(1.0, 0.0));
        let rp = resolvent_pair(&sys, c(0.0, 1.0), &MinorIndexSet::empty()).unwrap();
        for i in 0..6 {
            let lhs: f64 = (0..6).map(|k| rp.g[(k, i)].norm_sqr()).sum();
            assert!((lhs - 0.5).abs() < 1e-14);
            assert!((rp.g[(i, i)].im - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn woodbury_on_random_square() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let a = crate::ensembles::sample_factor(12, EntryLaw::ComplexGaussian, &mut rng);
        let w = c(0.3, 0.4);
        let g = invert(shift(a.adjoint() * a.as_ref(), w).as_ref()).unwrap();
        let gc = invert(shift(a.as_ref() * a.adjoint(), w).as_ref()).unwrap();
        let lhs = &a * &g * a.adjoint();
        let rhs = Mat::from_fn(12, 12, |i, j| {
            let id = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
            id + w * gc[(i, j)]
        });
        assert!(max_abs_diff(&lhs, &rhs) <= 1e-11);
    }

    #[test]
    fn suite_on_random_instances() {
        for (seed, n, dim) in [(1u64, 2usize, 8usize), (2, 3, 5), (3, 2, 4)] {
            let sys = random_system(n, dim, seed, c(1.3, 0.4));
            for minors in [MinorIndexSet::empty(), MinorIndexSet::new([1], [2]), MinorIndexSet::new([0, 5], [5])] {
                let sample = IdentitySample {
                    minors,
                    indices: vec![3, 4, 6],
                };
                let rep = identity_suite(&sys, c(0.2, 0.3), &sample).unwrap();
                assert!(rep.max_exact_residual() <= 1e-10, "{rep:?}");
                assert!(rep.trace_minor_ratio <= 1.0);
                assert!(rep.derivative_ratio <= 1.0);
            }
        }
    }

    #[test]
    fn suite_rejects_forbidden_indices() {
        let sys = random_system(2, 4, 1, c(1.5, 0.0));
        let sample = IdentitySample {
            minors: MinorIndexSet::new([3], []),
            indices: vec![1, 2, 3],
        };
        assert!(matches!(identity_suite(&sys, c(0.1, 0.5), &sample), Err(Error::Precondition(_))));
        let sample = IdentitySample {
            minors: MinorIndexSet::empty(),
            indices: vec![1, 1, 2],
        };
        assert!(identity_suite(&sys, c(0.1, 0.5), &sample).is_err());
    }

    #[test]
    fn fluctuation_is_deterministic_for_fixed_chain() {
        let sys = random_system(2, 6, 4, c(1.5, 0.0));
        let w = c(0.05, 0.2);
        for v in [
            FluctuationVariant::Z,
            FluctuationVariant::CalZ,
            FluctuationVariant::WithMinor { t: vec![7] },
        ] {
            let a = fluctuation_z(&sys, w, 1, 2, &v).unwrap();
            let b = fluctuation_z(&sys, w, 1, 2, &v).unwrap();
            assert_eq!(a, b);
        }
        assert!(fluctuation_z(&sys, w, 2, 0, &FluctuationVariant::Z).is_err());
    }

    #[test]
    fn row_form_expands_to_single_block() {
        // With the (i(a), i(a)) minor, the z entry of the row drops out.
        let sys = random_system(3, 4, 5, c(2.0, 1.0));
        let w = c(0.1, 0.4);
        let (a, i) = (1usize, 2usize);
        let r = sys.global_index(a, i);
        let g = resolvent_g(&sys, w, &MinorIndexSet::new([r], [r])).unwrap();
        let x = sys.x();
        let b = (a + 1) % 3;
        let mut direct = c(0.0, 0.0);
        for k in 0..4 {
            for l in 0..4 {
                let (gk, gl) = (sys.global_index(b, k), sys.global_index(b, l));
                direct += x[(r, gk)] * g[(gk, gl)] * x[(r, gl)].conj();
            }
        }
        assert!((row_form(sys.y(), r, &g, r) - direct).norm() < 1e-13);
    }

    #[test]
    fn entrywise_on_free_system() {
        let sys = zero_system(2, 4, c(1.0, 0.0));
        let rep = entrywise_law_check(&sys, c(0.0, 1.0), 8).unwrap();
        assert_eq!(rep.max_offdiag, 0.0);
        assert!(rep.samples >= 8);
    }
}
