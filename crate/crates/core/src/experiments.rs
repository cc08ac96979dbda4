//! Reproducible Monte Carlo sweeps.
//!
//! Trial `t` of every sweep uses the chain seed `derive_seed(cfg.seed, t)`,
//! the same at every `N` of the ladder, so results at different sizes are
//! paired. Trials run on a rayon pool (size from `PRODSPEC_THREADS`, unset or
//! 0 meaning one worker per core) with the dense kernel single-threaded
//! inside each trial. Records are sorted canonically by
//! `(seed, z, w, N, metric)` before they are returned, so output does not
//! depend on scheduling.
//!
//! A trial that contradicts a claim being tested is reported in
//! [`SweepResult::violations`]; a trial that fails to compute is reported in
//! [`SweepResult::errors`]. Neither aborts the sweep.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{build_linearization, build_product, derive_seed, sample_chain, substream, EnsembleSpec, EntryLaw};
use crate::gamma::{inverse_norm_sweep, linear_system_check, DeviationVector, GammaSweepConfig, GammaSystem};
use crate::resolvent::{
    deviation_stats, entrywise_law_check_pair, fluctuation_z, identity_suite, partial_traces, resolvent_g,
    resolvent_pair, sce_residual, FluctuationVariant, IdentitySample, MinorIndexSet,
};
use crate::selfconsistent::{density_mass, solve_mc, support_endpoints};
use crate::spectral::{
    empirical_stieltjes, esd_histogram, hermitized_spectrum, singular_extremes, spectral_radius, use_sequential_kernel,
};
use crate::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PRODSPEC_THREADS";

/// Tolerance for the exact identities in [`identity_sweep`].
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of factors.
    pub n: usize,
    pub law: EntryLaw,
    /// Overrides the law's declared tail parameter.
    pub theta: Option<f64>,
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    pub trials: usize,
    #[serde(with = "crate::complex::serde_list")]
    pub z_values: Vec<C64>,
    #[serde(with = "crate::complex::serde_list")]
    pub w_values: Vec<C64>,
    #[serde(rename = "N_ladder")]
    pub n_ladder: Vec<usize>,
    /// Margin in `|z| ≥ 1 + δ`.
    pub delta: f64,
    pub bins: usize,
    pub eta_probe: f64,
    /// Allowed `|radius − 1|` at the largest `N`.
    pub radius_band: f64,
    /// Two laws with matching second moments, compared by [`ensemble_comparison`].
    pub compare_laws: [EntryLaw; 2],
    pub lde_xi: Vec<f64>,
    /// Diagonal and off-diagonal entries sampled per trial by [`sce_and_entrywise_scan`].
    pub entry_samples: usize,
    pub output_path: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 2,
            law: EntryLaw::ComplexGaussian,
            theta: None,
            seed: 1,
            trials: 20,
            z_values: vec![C64::new(1.5, 0.0)],
            w_values: vec![C64::new(0.02, 0.3)],
            n_ladder: vec![64, 128, 256, 512],
            delta: 0.1,
            bins: 40,
            eta_probe: 1e-6,
            radius_band: 0.15,
            compare_laws: [EntryLaw::Rademacher, EntryLaw::RealGaussian],
            lde_xi: vec![1.5, 2.0],
            entry_samples: 64,
            output_path: "results".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("n", format!("need at least 2 factors, got {}", self.n)));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.n_ladder.is_empty() || self.n_ladder.contains(&0) {
            return Err(Error::config("N_ladder", "must be a non-empty list of positive sizes"));
        }
        if let Some(t) = self.theta {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::config("theta", format!("must be positive, got {t}")));
            }
        }
        if let Some(w) = self.w_values.iter().find(|w| !(w.im > 0.0)) {
            return Err(Error::config("w_values", format!("every w needs Im w > 0, got {w}")));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::config("delta", format!("must be non-negative, got {}", self.delta)));
        }
        if self.bins == 0 {
            return Err(Error::config("bins", "must be at least 1"));
        }
        if !(1e-9..=1e-3).contains(&self.eta_probe) {
            return Err(Error::config("eta_probe", format!("must lie in [1e-9, 1e-3], got {}", self.eta_probe)));
        }
        if self.entry_samples == 0 {
            return Err(Error::config("entry_samples", "must be at least 1"));
        }
        Ok(())
    }

    pub fn spec_for(&self, dim: usize, seed: u64, law: EntryLaw) -> Result<EnsembleSpec> {
        let spec = EnsembleSpec::new(self.n, dim, law, seed)?;
        match self.theta {
            Some(t) => spec.with_theta(t),
            None => Ok(spec),
        }
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        derive_seed(self.seed, t as u64)
    }

    fn require_ascending_ladder(&self) -> Result<()> {
        if self.n_ladder.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::config("N_ladder", "must be strictly ascending"));
        }
        Ok(())
    }

    fn require_z(&self) -> Result<()> {
        if self.z_values.is_empty() {
            return Err(Error::config("z_values", "must not be empty"));
        }
        Ok(())
    }

    fn require_w(&self) -> Result<()> {
        if self.w_values.is_empty() {
            return Err(Error::config("w_values", "must not be empty"));
        }
        Ok(())
    }
}

/// One measured number. Complex quantities are split into `_re`/`_im` metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "N")]
    pub dim: usize,
    #[serde(with = "crate::complex::serde_opt")]
    pub z: Option<C64>,
    #[serde(with = "crate::complex::serde_opt")]
    pub w: Option<C64>,
    pub metric: String,
    pub value: f64,
}

impl TrialRecord {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        fn opt(a: Option<C64>, b: Option<C64>) -> Ordering {
            match (a, b) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(a), Some(b)) => a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)),
            }
        }
        self.seed
            .cmp(&other.seed)
            .then(opt(self.z, other.z))
            .then(opt(self.w, other.w))
            .then(self.dim.cmp(&other.dim))
            .then(self.metric.cmp(&other.metric))
            .then(self.value.total_cmp(&other.value))
    }
}

/// Least-squares fit of `log median(metric)` against `log N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub metric: String,
    #[serde(with = "crate::complex::serde_opt")]
    pub z: Option<C64>,
    #[serde(with = "crate::complex::serde_opt")]
    pub w: Option<C64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub seed: u64,
    #[serde(rename = "N")]
    pub dim: usize,
    #[serde(with = "crate::complex::serde_opt")]
    pub z: Option<C64>,
    #[serde(with = "crate::complex::serde_opt")]
    pub w: Option<C64>,
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepResult {
    pub experiment: String,
    pub records: Vec<TrialRecord>,
    pub fits: Vec<Fit>,
    /// Named scalar summaries, in insertion order.
    pub summaries: Vec<(String, f64)>,
    pub violations: Vec<Violation>,
    pub errors: Vec<String>,
}

impl SweepResult {
    fn new(experiment: &str) -> Self {
        SweepResult {
            experiment: experiment.into(),
            ..Default::default()
        }
    }

    pub fn summary(&self, name: &str) -> Option<f64> {
        self.summaries.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn fit(&self, metric: &str, z: Option<C64>, w: Option<C64>) -> Option<&Fit> {
        self.fits.iter().find(|f| f.metric == metric && f.z == z && f.w == w)
    }

    /// Values of `metric`, optionally restricted to one `N`.
    pub fn values(&self, metric: &str, dim: Option<usize>) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.metric == metric && dim.is_none_or(|d| r.dim == d))
            .map(|r| r.value)
            .collect()
    }

    fn push_summary(&mut self, name: impl Into<String>, value: f64) {
        self.summaries.push((name.into(), value));
    }

    fn finish(mut self) -> Self {
        self.records.sort_by(|a, b| a.canonical_cmp(b));
        self
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// `(slope, intercept, r²)` of `log y` against `log x`. `None` unless there
/// are at least two distinct `x` and every value is positive. A perfectly
/// flat input has `r² = 1`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

/// `1/√N + 1/(Nη) + 1/(√η N^{3/4})`.
pub fn concentration_envelope(dim: usize, eta: f64) -> f64 {
    let n = dim as f64;
    1.0 / n.sqrt() + 1.0 / (n * eta) + 1.0 / (eta.sqrt() * n.powf(0.75))
}

/// `½ Σ|p_k − q_k| + ½|p_out − q_out|`, where `*_out = 1 − Σ *_k` is the
/// mass outside the binned range.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let inside: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    let out = ((1.0 - p.iter().sum::<f64>()) - (1.0 - q.iter().sum::<f64>())).abs();
    0.5 * (inside + out)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(THREADS_ENV, format!("expected a thread count, got `{v}`")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))
}

#[derive(Debug, Clone, Copy)]
struct Task {
    dim: usize,
    seed: u64,
    group: usize,
}

type TaskOutput = Result<(Vec<TrialRecord>, Vec<Violation>)>;

fn run_tasks<F>(tasks: &[Task], f: F) -> Result<Vec<(Task, TaskOutput)>>
where
    F: Fn(Task) -> TaskOutput + Sync,
{
    use_sequential_kernel();
    let pool = worker_pool()?;
    Ok(pool.install(|| tasks.par_iter().map(|&t| (t, f(t))).collect()))
}

fn absorb(res: &mut SweepResult, outputs: Vec<(Task, TaskOutput)>) {
    for (task, out) in outputs {
        match out {
            Ok((records, violations)) => {
                res.records.extend(records);
                res.violations.extend(violations);
            }
            Err(e) => res.errors.push(format!("N={} seed={}: {e}", task.dim, task.seed)),
        }
    }
}

fn ladder_tasks(cfg: &ExperimentConfig) -> Vec<Task> {
    cfg.n_ladder
        .iter()
        .flat_map(|&dim| {
            (0..cfg.trials).map(move |t| Task {
                dim,
                seed: cfg.trial_seed(t),
                group: 0,
            })
        })
        .collect()
}

struct Recorder {
    seed: u64,
    n: usize,
    dim: usize,
    records: Vec<TrialRecord>,
    violations: Vec<Violation>,
}

impl Recorder {
    fn new(n: usize, task: Task) -> Self {
        Recorder {
            seed: task.seed,
            n,
            dim: task.dim,
            records: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn push(&mut self, z: Option<C64>, w: Option<C64>, metric: impl Into<String>, value: f64) {
        self.records.push(TrialRecord {
            seed: self.seed,
            n: self.n,
            dim: self.dim,
            z,
            w,
            metric: metric.into(),
            value,
        });
    }

    fn violate(&mut self, z: Option<C64>, w: Option<C64>, metric: &str, value: f64, threshold: f64) {
        self.violations.push(Violation {
            seed: self.seed,
            dim: self.dim,
            z,
            w,
            metric: metric.into(),
            value,
            threshold,
        });
    }

    fn done(self) -> TaskOutput {
        Ok((self.records, self.violations))
    }
}

/// Fits `log median` against `log N` for every `(metric, z, w)` group.
fn fit_all(res: &mut SweepResult, metrics: &[&str]) {
    type Key = (String, Option<(u64, u64)>, Option<(u64, u64)>);
    let bits = |z: Option<C64>| z.map(|z| (z.re.to_bits(), z.im.to_bits()));
    let mut groups: BTreeMap<Key, (Option<C64>, Option<C64>, BTreeMap<usize, Vec<f64>>)> = BTreeMap::new();
    for r in res.records.iter().filter(|r| metrics.contains(&r.metric.as_str())) {
        let entry = groups
            .entry((r.metric.clone(), bits(r.z), bits(r.w)))
            .or_insert_with(|| (r.z, r.w, BTreeMap::new()));
        entry.2.entry(r.dim).or_default().push(r.value);
    }
    for ((metric, _, _), (z, w, by_n)) in groups {
        let xs: Vec<f64> = by_n.keys().map(|&d| d as f64).collect();
        let ys: Vec<f64> = by_n.values().map(|v| median(v)).collect();
        if let Some((slope, intercept, r2)) = loglog_fit(&xs, &ys) {
            res.fits.push(Fit {
                metric,
                z,
                w,
                slope,
                intercept,
                r2,
                points: xs.len(),
            });
        }
    }
}

fn tag(z: C64, w: Option<C64>) -> String {
    match w {
        Some(w) => format!("z={z},w={w}"),
        None => format!("z={z}"),
    }
}

/// Spectral radius of the product at every `(N, trial)`.
pub fn radius_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_ascending_ladder()?;
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let mut rec = Recorder::new(cfg.n, task);
        rec.push(None, None, "radius", spectral_radius(build_product(&chain).as_ref())?);
        rec.done()
    })?;
    let mut res = SweepResult::new("radius");
    absorb(&mut res, out);
    let top = *cfg.n_ladder.last().expect("validated non-empty");
    let maxima: Vec<f64> = cfg
        .n_ladder
        .iter()
        .map(|&d| res.values("radius", Some(d)).into_iter().fold(f64::NAN, f64::max))
        .collect();
    for (&d, &m) in cfg.n_ladder.iter().zip(&maxima) {
        res.push_summary(format!("max_radius[N={d}]"), m);
    }
    let decreasing = maxima.windows(2).filter(|p| p[1] <= p[0]).count();
    res.push_summary("decreasing_pairs", decreasing as f64);
    res.push_summary("pairs", maxima.len().saturating_sub(1) as f64);
    let flagged: Vec<TrialRecord> = res
        .records
        .iter()
        .filter(|r| r.dim == top && (r.value - 1.0).abs() > cfg.radius_band)
        .cloned()
        .collect();
    for r in flagged {
        res.violations.push(Violation {
            seed: r.seed,
            dim: r.dim,
            z: None,
            w: None,
            metric: r.metric,
            value: r.value,
            threshold: cfg.radius_band,
        });
    }
    fit_all(&mut res, &["radius"]);
    Ok(res.finish())
}

/// Smallest eigenvalue of `(X − z)^*(X − z)` against the gap threshold `λ−(z)/2`.
pub fn outlier_scan(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    if let Some(z) = cfg.z_values.iter().find(|z| z.norm() < 1.0 + cfg.delta) {
        return Err(Error::Precondition(format!(
            "outlier scan needs |z| >= 1 + δ = {}, got |z| = {}",
            1.0 + cfg.delta,
            z.norm()
        )));
    }
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let mut rec = Recorder::new(cfg.n, task);
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        for &z in &cfg.z_values {
            let sys = x_sys.with_shift(z);
            let h = hermitized_spectrum(&sys)?;
            let threshold = support_endpoints(z).gap_threshold();
            let (lo, s_min) = (h.min(), h.smallest_singular_value());
            rec.push(Some(z), None, "min_eig", lo);
            rec.push(Some(z), None, "threshold", threshold);
            rec.push(Some(z), None, "s_min", s_min);
            if lo < threshold {
                rec.violate(Some(z), None, "min_eig", lo, threshold);
            }
            if z.norm() > 6.0 {
                let (_, s_max) = singular_extremes(x_sys.x().as_ref())?;
                rec.push(Some(z), None, "s_max_x", s_max);
                let floor = z.norm() - s_max;
                if s_max <= 3.0 && s_min < floor - 1e-10 {
                    rec.violate(Some(z), None, "s_min", s_min, floor);
                }
            }
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("outliers");
    absorb(&mut res, out);
    for &z in &cfg.z_values {
        for &d in &cfg.n_ladder {
            let lows: Vec<f64> = res
                .records
                .iter()
                .filter(|r| r.metric == "min_eig" && r.dim == d && r.z == Some(z))
                .map(|r| r.value)
                .collect();
            res.push_summary(format!("min_eig[{},N={d}]", tag(z, None)), lows.into_iter().fold(f64::NAN, f64::min));
        }
        res.push_summary(format!("threshold[{}]", tag(z, None)), support_endpoints(z).gap_threshold());
    }
    res.push_summary("violations", res.violations.len() as f64);
    Ok(res.finish())
}

/// `|m(z, w) − m_c(z, w)|` across the ladder, with slopes and envelope ratios.
pub fn concentration_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    cfg.require_w()?;
    for &z in &cfg.z_values {
        let e_max = support_endpoints(z).gap_threshold();
        for &w in &cfg.w_values {
            for &d in &cfg.n_ladder {
                let eta_min = 1.0 / (d as f64).sqrt();
                if w.re < 0.0 || w.re > e_max || w.im < eta_min || w.im > 1.0 {
                    return Err(Error::Precondition(format!(
                        "w = {w} outside the window 0 <= E <= {e_max}, {eta_min} <= η <= 1 at z = {z}, N = {d}"
                    )));
                }
            }
        }
    }
    let targets: Vec<(C64, C64, C64)> = cfg
        .z_values
        .iter()
        .flat_map(|&z| cfg.w_values.iter().map(move |&w| (z, w)))
        .map(|(z, w)| solve_mc(z, w).map(|s| (z, w, s.m_c)))
        .collect::<Result<_>>()?;
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        let mut rec = Recorder::new(cfg.n, task);
        for &z in &cfg.z_values {
            let h = hermitized_spectrum(&x_sys.with_shift(z))?;
            for &(tz, w, m_c) in targets.iter().filter(|t| t.0 == z) {
                let m = empirical_stieltjes(&h, w)?;
                rec.push(Some(tz), Some(w), "abs_dev", (m - m_c).norm());
            }
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("concentration");
    absorb(&mut res, out);
    fit_all(&mut res, &["abs_dev"]);
    let top = *cfg.n_ladder.iter().max().expect("validated non-empty");
    for &(z, w, _) in &targets {
        let devs: Vec<f64> = res
            .records
            .iter()
            .filter(|r| r.dim == top && r.z == Some(z) && r.w == Some(w))
            .map(|r| r.value)
            .collect();
        let env = concentration_envelope(top, w.im);
        res.push_summary(format!("envelope_ratio_max[{}]", tag(z, Some(w))), devs.iter().fold(f64::NAN, |a, &b| a.max(b)) / env);
        res.push_summary(format!("envelope_ratio_median[{}]", tag(z, Some(w))), median(&devs) / env);
    }
    Ok(res.finish())
}

/// Binned limiting masses `∫ρ_z` over `bins` equal bins of `[lo, hi]`.
pub fn limiting_bin_masses(z: C64, bins: usize, lo: f64, hi: f64, eta_probe: f64) -> Result<Vec<f64>> {
    let width = (hi - lo) / bins as f64;
    (0..bins)
        .map(|k| {
            let a = lo + k as f64 * width;
            density_mass(z, a, a + width, 64, eta_probe)
        })
        .collect()
}

/// Total variation between the empirical spectral measure of
/// `(X − z)^*(X − z)` and the limit, binned on `[0, λ+ + 0.5]`.
pub fn esd_compare(cfg: &ExperimentConfig, bins: usize) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    if bins == 0 {
        return Err(Error::config("bins", "must be at least 1"));
    }
    let limits: Vec<(C64, f64, Vec<f64>)> = cfg
        .z_values
        .iter()
        .map(|&z| {
            let hi = support_endpoints(z).lambda_plus + 0.5;
            limiting_bin_masses(z, bins, 0.0, hi, cfg.eta_probe).map(|q| (z, hi, q))
        })
        .collect::<Result<_>>()?;
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        let mut rec = Recorder::new(cfg.n, task);
        for (z, hi, q) in &limits {
            let h = hermitized_spectrum(&x_sys.with_shift(*z))?;
            let p: Vec<f64> = esd_histogram(&h, bins, 0.0, *hi)?.into_iter().map(|b| b.1).collect();
            rec.push(Some(*z), None, "tv", total_variation(&p, q));
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("esd");
    absorb(&mut res, out);
    fit_all(&mut res, &["tv"]);
    let lo_n = *cfg.n_ladder.iter().min().expect("non-empty");
    let hi_n = *cfg.n_ladder.iter().max().expect("non-empty");
    for (z, _, _) in &limits {
        for &d in &cfg.n_ladder {
            let v: Vec<f64> = res
                .records
                .iter()
                .filter(|r| r.dim == d && r.z == Some(*z))
                .map(|r| r.value)
                .collect();
            res.push_summary(format!("median_tv[{},N={d}]", tag(*z, None)), median(&v));
        }
        let by_seed = |d: usize| -> BTreeMap<u64, f64> {
            res.records
                .iter()
                .filter(|r| r.dim == d && r.z == Some(*z))
                .map(|r| (r.seed, r.value))
                .collect()
        };
        let (small, large) = (by_seed(lo_n), by_seed(hi_n));
        let improved = large.iter().filter(|(s, v)| small.get(s).is_some_and(|u| *v < u)).count();
        res.push_summary(format!("paired_improvements[{}]", tag(*z, None)), improved as f64);
        res.push_summary(format!("pairs[{}]", tag(*z, None)), large.len() as f64);
    }
    Ok(res.finish())
}

/// Per-block partial traces `m_G^a` for two laws with matching second
/// moments, averaged over trials at each `N`.
pub fn ensemble_comparison(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    cfg.require_w()?;
    let laws = cfg.compare_laws;
    if laws[0].is_complex() != laws[1].is_complex() {
        return Err(Error::config(
            "compare_laws",
            format!("{} and {} do not share second moments", laws[0], laws[1]),
        ));
    }
    let group_seed = |g: usize, t: usize| derive_seed(derive_seed(cfg.seed, u64::MAX - g as u64), t as u64);
    let tasks: Vec<Task> = cfg
        .n_ladder
        .iter()
        .flat_map(|&dim| {
            (0..2).flat_map(move |g| {
                (0..cfg.trials).map(move |t| Task {
                    dim,
                    seed: group_seed(g, t),
                    group: g,
                })
            })
        })
        .collect();
    let n = cfg.n;
    let out = run_tasks(&tasks, |task| {
        let law = laws[task.group];
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, law)?)?;
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        let mut rec = Recorder::new(n, task);
        for &z in &cfg.z_values {
            let sys = x_sys.with_shift(z);
            for &w in &cfg.w_values {
                let g = resolvent_g(&sys, w, &MinorIndexSet::empty())?;
                for a in 0..n {
                    let m: C64 = (0..task.dim).map(|i| g[(a * task.dim + i, a * task.dim + i)]).sum::<C64>()
                        / task.dim as f64;
                    rec.push(Some(z), Some(w), format!("g{}/m_g{a}_re", task.group), m.re);
                    rec.push(Some(z), Some(w), format!("g{}/m_g{a}_im", task.group), m.im);
                }
            }
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("compare");
    absorb(&mut res, out);
    res.push_summary(format!("law[g0={},g1={}]", laws[0], laws[1]), 0.0);
    let records = std::mem::take(&mut res.records);
    for &z in &cfg.z_values {
        for &w in &cfg.w_values {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &d in &cfg.n_ladder {
                let pick = |metric: String| -> Vec<f64> {
                    records
                        .iter()
                        .filter(|r| r.dim == d && r.z == Some(z) && r.w == Some(w) && r.metric == metric)
                        .map(|r| r.value)
                        .collect()
                };
                let mut worst_diff = 0.0f64;
                let mut worst_excess = f64::NEG_INFINITY;
                for a in 0..n {
                    let (r0, i0) = (pick(format!("g0/m_g{a}_re")), pick(format!("g0/m_g{a}_im")));
                    let (r1, i1) = (pick(format!("g1/m_g{a}_re")), pick(format!("g1/m_g{a}_im")));
                    if r0.is_empty() || r1.is_empty() {
                        continue;
                    }
                    let diff = C64::new(mean(&r0) - mean(&r1), mean(&i0) - mean(&i1)).norm();
                    let sem = ((variance(&r0) + variance(&i0)) / r0.len() as f64
                        + (variance(&r1) + variance(&i1)) / r1.len() as f64)
                        .sqrt();
                    let bound = 3.0 * sem + 5.0 / (d as f64).sqrt();
                    let key = format!("{},N={d},a={a}", tag(z, Some(w)));
                    res.push_summary(format!("mean_diff[{key}]"), diff);
                    res.push_summary(format!("pooled_sem[{key}]"), sem);
                    res.push_summary(format!("bound[{key}]"), bound);
                    if diff > bound {
                        res.violations.push(Violation {
                            seed: cfg.seed,
                            dim: d,
                            z: Some(z),
                            w: Some(w),
                            metric: format!("mean_diff_a{a}"),
                            value: diff,
                            threshold: bound,
                        });
                    }
                    worst_diff = worst_diff.max(diff);
                    worst_excess = worst_excess.max(diff - bound);
                }
                res.push_summary(format!("max_mean_diff[{},N={d}]", tag(z, Some(w))), worst_diff);
                res.push_summary(format!("max_excess[{},N={d}]", tag(z, Some(w))), worst_excess);
                xs.push(d as f64);
                ys.push(worst_diff);
            }
            if let Some((slope, intercept, r2)) = loglog_fit(&xs, &ys) {
                res.fits.push(Fit {
                    metric: "max_mean_diff".into(),
                    z: Some(z),
                    w: Some(w),
                    slope,
                    intercept,
                    r2,
                    points: xs.len(),
                });
            }
        }
    }
    res.records = records;
    Ok(res.finish())
}

/// Normalized large-deviation statistics of linear and quadratic forms in
/// independent unit-variance entries, with exceedance frequencies of
/// `(log N)^ξ` for each configured `ξ`.
///
/// Metrics: `lin_e1` (single coefficient), `lin_rand`, `diag_rand`,
/// `diag_equal` (`B = I`), `offdiag_rand`; each is `|form| / ‖coeffs‖₂`.
pub fn lde_check(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.trials < 1000 {
        return Err(Error::Precondition(format!("lde check needs at least 1000 trials, got {}", cfg.trials)));
    }
    let coeff_seed = derive_seed(cfg.seed, u64::MAX - 16);
    let coeffs: BTreeMap<usize, (Vec<C64>, Vec<C64>, Vec<C64>)> = cfg
        .n_ladder
        .iter()
        .map(|&d| {
            let mut rng = substream(coeff_seed, d as u64);
            let mut draw = |k: usize| -> Vec<C64> { (0..k).map(|_| EntryLaw::ComplexGaussian.sample_unit(&mut rng)).collect() };
            let a = draw(d);
            let b_diag = draw(d);
            let mut b_off = draw(d * d);
            for i in 0..d {
                b_off[i * d + i] = C64::new(0.0, 0.0);
            }
            (d, (a, b_diag, b_off))
        })
        .collect();
    let law = cfg.law;
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let d = task.dim;
        let (a_rand, b_diag, b_off) = &coeffs[&d];
        let mut rng = substream(task.seed, 0);
        let a: Vec<C64> = (0..d).map(|_| law.sample_unit(&mut rng)).collect();
        let l2 = |v: &[C64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let lin: C64 = a.iter().zip(a_rand).map(|(x, c)| x * c).sum();
        let diag: C64 = a.iter().zip(b_diag).map(|(x, b)| x.conj() * b * x).sum::<C64>() - b_diag.iter().sum::<C64>();
        let diag_eq: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>() - d as f64;
        let mut off = C64::new(0.0, 0.0);
        for i in 0..d {
            let row: C64 = (0..d).map(|j| b_off[i * d + j] * a[j]).sum();
            off += a[i].conj() * row;
        }
        let mut rec = Recorder::new(cfg.n, task);
        rec.push(None, None, "lin_e1", a[0].norm());
        rec.push(None, None, "lin_rand", lin.norm() / l2(a_rand));
        rec.push(None, None, "diag_rand", diag.norm() / l2(b_diag));
        rec.push(None, None, "diag_equal", diag_eq.abs() / (d as f64).sqrt());
        let off_norm = l2(b_off);
        rec.push(None, None, "offdiag_rand", if off_norm > 0.0 { off.norm() / off_norm } else { 0.0 });
        rec.done()
    })?;
    let mut res = SweepResult::new("lde");
    absorb(&mut res, out);
    for &d in &cfg.n_ladder {
        for metric in ["lin_e1", "lin_rand", "diag_rand", "diag_equal", "offdiag_rand"] {
            let v = res.values(metric, Some(d));
            for &xi in &cfg.lde_xi {
                let level = (d as f64).ln().powf(xi);
                let freq = v.iter().filter(|&&s| s >= level).count() as f64 / v.len().max(1) as f64;
                res.push_summary(format!("exceed[{metric},N={d},xi={xi}]"), freq);
            }
        }
    }
    Ok(res.finish())
}

/// Self-consistent residuals, entrywise deviations, fluctuation averages and
/// the linear stability relation `‖Δ‖ ≤ ‖Γ⁻¹‖·‖ΓΔ‖` per trial.
///
/// Accepts `0 ≤ E < λ−(z)` and `0 < η ≤ 1`.
pub fn sce_and_entrywise_scan(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    cfg.require_w()?;
    for &z in &cfg.z_values {
        let lm = support_endpoints(z).lambda_minus;
        if let Some(w) = cfg.w_values.iter().find(|w| w.re < 0.0 || w.re >= lm || w.im > 1.0) {
            return Err(Error::Precondition(format!("w = {w} outside 0 <= E < λ− = {lm}, η <= 1 at z = {z}")));
        }
    }
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        let mut rec = Recorder::new(cfg.n, task);
        for &z in &cfg.z_values {
            let sys = x_sys.with_shift(z);
            for &w in &cfg.w_values {
                let (sz, sw) = (Some(z), Some(w));
                let rp = resolvent_pair(&sys, w, &MinorIndexSet::empty())?;
                let pt = partial_traces(&rp);
                let m_c = solve_mc(z, w)?.m_c;
                rec.push(sz, sw, "sce_max", sce_residual(&pt, z, w)?.max_abs());
                let ent = entrywise_law_check_pair(&rp, m_c, cfg.entry_samples);
                rec.push(sz, sw, "diag_dev", ent.max_diag_deviation);
                rec.push(sz, sw, "offdiag_max", ent.max_offdiag);
                let stats = deviation_stats(&pt, m_c, w.im, task.dim)?;
                rec.push(sz, sw, "lambda", stats.lambda);
                rec.push(sz, sw, "psi", stats.psi);
                let delta = DeviationVector::from_traces(&pt.m_g, &pt.m_gc, m_c)?;
                let gs = GammaSystem::at(cfg.n, z, w)?;
                let g_delta = linear_system_check(&delta, &gs)?;
                let bound = gs.inverse_norm()? * g_delta + 1e-12;
                rec.push(sz, sw, "gamma_delta", g_delta);
                rec.push(sz, sw, "delta_sup", delta.sup_norm());
                if delta.sup_norm() > bound {
                    rec.violate(sz, sw, "delta_sup", delta.sup_norm(), bound);
                }
                let zr = fluctuation_z(&sys, w, 0, 0, &FluctuationVariant::Z)?;
                let zc = fluctuation_z(&sys, w, 0, 0, &FluctuationVariant::CalZ)?;
                rec.push(sz, sw, "z_row", zr.norm());
                rec.push(sz, sw, "z_col", zc.norm());
            }
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("sce");
    absorb(&mut res, out);
    fit_all(&mut res, &["sce_max", "diag_dev", "offdiag_max", "lambda", "z_row", "z_col"]);
    Ok(res.finish())
}

/// Random minors and sample indices for one identity-suite instance.
pub fn random_identity_sample<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<IdentitySample> {
    let mut minors = MinorIndexSet::empty();
    let t_count = rng.random_range(0..=2usize);
    let u_count = rng.random_range(0..=2usize);
    for _ in 0..t_count {
        minors.t.insert(rng.random_range(0..size));
    }
    for _ in 0..u_count {
        minors.u.insert(rng.random_range(0..size));
    }
    let free: Vec<usize> = (0..size)
        .filter(|k| !minors.t.contains(k) && !minors.u.contains(k))
        .collect();
    if free.len() < 3 {
        return Err(Error::Precondition(format!("dimension {size} leaves fewer than 3 free indices")));
    }
    let mut indices = Vec::with_capacity(3);
    while indices.len() < 3 {
        let k = free[rng.random_range(0..free.len())];
        if !indices.contains(&k) {
            indices.push(k);
        }
    }
    Ok(IdentitySample { minors, indices })
}

/// Runs the identity suite on random chains and random minors.
pub fn identity_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    cfg.require_w()?;
    if let Some(&d) = cfg.n_ladder.iter().find(|&&d| d * cfg.n > 256) {
        return Err(Error::config("N_ladder", format!("identity checks use dense minors; nN must stay <= 256, got N = {d}")));
    }
    let tasks = ladder_tasks(cfg);
    let out = run_tasks(&tasks, |task| {
        let chain = sample_chain(&cfg.spec_for(task.dim, task.seed, cfg.law)?)?;
        let x_sys = build_linearization(&chain, C64::new(0.0, 0.0));
        let mut rng = substream(task.seed, 1 << 32);
        let mut rec = Recorder::new(cfg.n, task);
        for &z in &cfg.z_values {
            let sys = x_sys.with_shift(z);
            for &w in &cfg.w_values {
                let sample = random_identity_sample(sys.size(), &mut rng)?;
                let rep = identity_suite(&sys, w, &sample)?;
                let (sz, sw) = (Some(z), Some(w));
                for (name, v) in [
                    ("schur_complement", rep.schur_complement),
                    ("woodbury", rep.woodbury),
                    ("im_identity", rep.im_identity),
                    ("minor_difference", rep.minor_difference),
                    ("rank_one_update", rep.rank_one_update),
                    ("schur_expansion_g", rep.schur_expansion_g),
                    ("schur_expansion_gc", rep.schur_expansion_gc),
                ] {
                    rec.push(sz, sw, name, v);
                    if !(v <= IDENTITY_TOL) {
                        rec.violate(sz, sw, name, v, IDENTITY_TOL);
                    }
                }
                for (name, v) in [("trace_minor_ratio", rep.trace_minor_ratio), ("derivative_ratio", rep.derivative_ratio)] {
                    rec.push(sz, sw, name, v);
                    if !(v <= 1.0) {
                        rec.violate(sz, sw, name, v, 1.0);
                    }
                }
            }
        }
        rec.done()
    })?;
    let mut res = SweepResult::new("identities");
    absorb(&mut res, out);
    let worst = |res: &SweepResult, names: &[&str]| {
        res.records
            .iter()
            .filter(|r| names.contains(&r.metric.as_str()))
            .map(|r| r.value)
            .fold(0.0, f64::max)
    };
    let exact = worst(
        &res,
        &[
            "schur_complement",
            "woodbury",
            "im_identity",
            "minor_difference",
            "rank_one_update",
            "schur_expansion_g",
            "schur_expansion_gc",
        ],
    );
    let ratio13 = worst(&res, &["trace_minor_ratio"]);
    let deriv = worst(&res, &["derivative_ratio"]);
    res.push_summary("max_exact_residual", exact);
    res.push_summary("max_trace_minor_ratio", ratio13);
    res.push_summary("max_derivative_ratio", deriv);
    Ok(res.finish())
}

/// [`inverse_norm_sweep`] over `cfg.z_values` with `n = cfg.n`, as records.
pub fn gamma_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    cfg.require_z()?;
    use_sequential_kernel();
    let gcfg = GammaSweepConfig {
        n: cfg.n,
        z_grid: cfg.z_values.clone(),
        ..GammaSweepConfig::default()
    };
    let rep = worker_pool()?.install(|| inverse_norm_sweep(&gcfg))?;
    let mut res = SweepResult::new("gamma");
    for p in &rep.points {
        for (metric, value) in [
            ("inverse_norm", p.inverse_norm),
            ("min_eig_modulus", p.min_eig_modulus),
            ("circulant_mismatch", p.circulant_mismatch),
            ("det_rel_error", p.det_rel_error),
        ] {
            res.records.push(TrialRecord {
                seed: cfg.seed,
                n: cfg.n,
                dim: 0,
                z: Some(p.z),
                w: Some(p.w),
                metric: metric.into(),
                value,
            });
        }
    }
    res.records.dedup();
    res.push_summary("tau", rep.tau.unwrap_or(0.0));
    res.push_summary("max_inverse_norm", rep.max_inverse_norm);
    res.push_summary("max_circulant_mismatch", rep.max_circulant_mismatch);
    res.push_summary("max_det_rel_error", rep.max_det_rel_error);
    res.push_summary("counterexamples", rep.counterexamples.len() as f64);
    for z in &cfg.z_values {
        if let Some((inv, low)) = rep.summary_for(*z) {
            res.push_summary(format!("max_inverse_norm[{}]", tag(*z, None)), inv);
            res.push_summary(format!("min_eig_modulus[{}]", tag(*z, None)), low);
        }
    }
    for (z, w, msg) in &rep.counterexamples {
        res.errors.push(format!("z={z} w={w}: {msg}"));
    }
    let mut flag = |metric: &str, value: f64, threshold: f64| {
        res.violations.push(Violation {
            seed: cfg.seed,
            dim: 0,
            z: None,
            w: None,
            metric: metric.into(),
            value,
            threshold,
        })
    };
    if rep.tau.is_none() {
        flag("tau", 0.0, 0.0);
    }
    if rep.max_circulant_mismatch > 1e-9 {
        flag("circulant_mismatch", rep.max_circulant_mismatch, 1e-9);
    }
    if rep.max_det_rel_error > 1e-10 {
        flag("det_rel_error", rep.max_det_rel_error, 1e-10);
    }
    Ok(res.finish())
}
