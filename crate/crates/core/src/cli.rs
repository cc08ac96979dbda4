//! Command-line front end.
//!
//! Configuration is resolved in layers: built-in defaults, then the JSON
//! document given by `--config`, then `--set key=value` pairs, then the
//! dedicated flags (`--seed`, `--trials`, `--N`, `--n`, `--z`, `--w`,
//! `--law`). Unknown keys are rejected at every layer.
//!
//! Complex numbers use `a+bi` / `a-bi` literals (`1.5`, `0.05+0.2i`, `-2i`).
//!
//! Exit codes: 0 success, 1 a trial contradicted a tested claim (or a
//! computation failed), 2 configuration error, 3 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use serde_json::{Map, Value};

use crate::complex::{format_complex, parse_complex};
use crate::ensembles::{build_linearization, build_product, sample_chain};
use crate::experiments::{self, median, ExperimentConfig, SweepResult, TrialRecord};
use crate::selfconsistent::{density, solve_mc, support_endpoints};
use crate::spectral::{singular_extremes, spectral_radius};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const CSV_HEADER: &str = "seed,n,N,z_re,z_im,w_re,w_im,metric,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample product chains and record radius and extreme singular values.
    Sample,
    /// Solve the self-consistent cubic for each (z, w).
    McSolve,
    /// Support edges λ± and the gap threshold for each z.
    Support,
    /// Limiting density on a grid of `bins` points over [0, λ+ + 0.5].
    Density,
    /// Spectral radius of the product across the N ladder.
    Radius,
    /// Smallest eigenvalue of (X − z)*(X − z) against λ−/2.
    Outliers,
    /// |m − m_c| across the N ladder.
    Concentration,
    /// Binned total variation against the limiting measure.
    Esd,
    /// Exact resolvent identities on random minors.
    Identities,
    /// Stability operator inverse-norm sweep.
    GammaSweep,
    /// Compare two entry laws with matching second moments.
    Compare,
    /// Large-deviation statistics of linear and quadratic forms.
    Lde,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::McSolve => "mc-solve",
            Command::Support => "support",
            Command::Density => "density",
            Command::Radius => "radius",
            Command::Outliers => "outliers",
            Command::Concentration => "concentration",
            Command::Esd => "esd",
            Command::Identities => "identities",
            Command::GammaSweep => "gamma-sweep",
            Command::Compare => "compare",
            Command::Lde => "lde",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Plotdata,
}

#[derive(Debug, Parser)]
#[command(name = "prodspec", version, about = "Spectral experiments on products of random matrices")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Lists are comma separated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t)]
    format: OutputFormat,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Matrix sizes, comma separated.
    #[arg(long = "N", global = true, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Number of factors.
    #[arg(long = "n", global = true)]
    factors: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    z: Vec<String>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    w: Vec<String>,
    #[arg(long, global = true)]
    law: Option<String>,
}

/// Parsed command line with a fully resolved configuration.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub command: Command,
    pub config_file: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
    pub experiment: ExperimentConfig,
}

fn default_document() -> Map<String, Value> {
    match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("ExperimentConfig serializes to an object"),
    }
}

/// Converts the text of `--set key=value` to JSON, guided by the type of the default.
fn override_value(key: &str, raw: &str, default: &Value) -> Result<Value> {
    let scalar = |text: &str, like: Option<&Value>| -> Result<Value> {
        let text = text.trim();
        match like {
            Some(Value::String(_)) => Ok(Value::String(text.to_string())),
            _ => serde_json::from_str(text)
                .map_err(|_| Error::config(key, format!("`{text}` is not a valid value"))),
        }
    };
    match default {
        Value::Array(items) => {
            if raw.trim_start().starts_with('[') {
                return serde_json::from_str(raw).map_err(|e| Error::config(key, e.to_string()));
            }
            let like = items.first().cloned().unwrap_or(Value::Null);
            let like = if like.is_null() && key.ends_with("_values") { Value::String(String::new()) } else { like };
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| scalar(s, Some(&like)))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array)
        }
        other => scalar(raw, Some(other)),
    }
}

fn merge(doc: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    match doc.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(Error::config(key, "unknown key")),
    }
}

/// Deserializes the merged document, naming the first key that fails.
fn resolve(doc: Map<String, Value>) -> Result<ExperimentConfig> {
    match serde_json::from_value::<ExperimentConfig>(Value::Object(doc.clone())) {
        Ok(cfg) => Ok(cfg),
        Err(err) => {
            let base = default_document();
            for (key, value) in &doc {
                let mut probe = base.clone();
                probe.insert(key.clone(), value.clone());
                if let Err(e) = serde_json::from_value::<ExperimentConfig>(Value::Object(probe)) {
                    return Err(Error::config(key.as_str(), e.to_string()));
                }
            }
            Err(Error::config("config", err.to_string()))
        }
    }
}

fn load_document(path: &Path) -> Result<Map<String, Value>> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {shown}: {e}")))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::config("config", format!("{shown} must hold a JSON object"))),
        Err(e) => Err(Error::config("config", format!("malformed JSON in {shown}: {e}"))),
    }
}

fn complex_list(key: &str, raw: &[String]) -> Result<Value> {
    let parsed = raw
        .iter()
        .map(|t| parse_complex(t).map(|z| Value::String(format_complex(z))).map_err(|m| Error::config(key, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Value::Array(parsed))
}

fn build_config(args: Args) -> Result<CliConfig> {
    let mut doc = default_document();
    if let Some(path) = &args.config {
        for (key, value) in load_document(path)? {
            merge(&mut doc, &key, value)?;
        }
    }
    let mut overrides = Vec::new();
    for item in &args.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "expected KEY=VALUE"))?;
        let key = key.trim();
        let default = doc.get(key).cloned().ok_or_else(|| Error::config(key, "unknown key"))?;
        let value = override_value(key, raw, &default)?;
        merge(&mut doc, key, value)?;
        overrides.push((key.to_string(), raw.to_string()));
    }
    if let Some(s) = args.seed {
        merge(&mut doc, "seed", s.into())?;
    }
    if let Some(t) = args.trials {
        merge(&mut doc, "trials", t.into())?;
    }
    if !args.dims.is_empty() {
        merge(&mut doc, "N_ladder", args.dims.clone().into())?;
    }
    if let Some(n) = args.factors {
        merge(&mut doc, "n", n.into())?;
    }
    if !args.z.is_empty() {
        merge(&mut doc, "z_values", complex_list("z", &args.z)?)?;
    }
    if !args.w.is_empty() {
        merge(&mut doc, "w_values", complex_list("w", &args.w)?)?;
    }
    if let Some(law) = &args.law {
        let parsed: crate::ensembles::EntryLaw = law.parse()?;
        merge(&mut doc, "law", serde_json::to_value(parsed).expect("law serializes"))?;
    }
    let experiment = resolve(doc)?;
    experiment.validate()?;
    let output_dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&experiment.output_path));
    Ok(CliConfig {
        command: args.command,
        config_file: args.config,
        overrides,
        output_dir,
        format: args.format,
        experiment,
    })
}

/// Parses `argv` (including the program name) into a resolved configuration.
pub fn parse_config<I, T>(argv: I) -> Result<CliConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| Error::config("arguments", e.to_string()))?;
    build_config(args)
}

fn record(cfg: &ExperimentConfig, seed: u64, dim: usize, z: Option<C64>, w: Option<C64>, metric: &str, value: f64) -> TrialRecord {
    TrialRecord {
        seed,
        n: cfg.n,
        dim,
        z,
        w,
        metric: metric.into(),
        value,
    }
}

fn sample(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut res = SweepResult {
        experiment: "sample".into(),
        ..Default::default()
    };
    for &dim in &cfg.n_ladder {
        for t in 0..cfg.trials {
            let seed = cfg.trial_seed(t);
            let chain = sample_chain(&cfg.spec_for(dim, seed, cfg.law)?)?;
            let p = build_product(&chain);
            let (s_min, s_max) = singular_extremes(p.as_ref())?;
            let (_, x_norm) = singular_extremes(build_linearization(&chain, C64::new(0.0, 0.0)).x().as_ref())?;
            res.records.push(record(cfg, seed, dim, None, None, "radius", spectral_radius(p.as_ref())?));
            res.records.push(record(cfg, seed, dim, None, None, "s_min", s_min));
            res.records.push(record(cfg, seed, dim, None, None, "s_max", s_max));
            res.records.push(record(cfg, seed, dim, None, None, "x_norm", x_norm));
        }
    }
    Ok(res)
}

fn mc_solve(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut res = SweepResult {
        experiment: "mc-solve".into(),
        ..Default::default()
    };
    for &z in &cfg.z_values {
        for &w in &cfg.w_values {
            let s = solve_mc(z, w)?;
            let (sz, sw) = (Some(z), Some(w));
            res.records.push(record(cfg, cfg.seed, 0, sz, sw, "m_c_re", s.m_c.re));
            res.records.push(record(cfg, cfg.seed, 0, sz, sw, "m_c_im", s.m_c.im));
            res.records.push(record(cfg, cfg.seed, 0, sz, sw, "residual", s.residual));
            res.records.push(record(cfg, cfg.seed, 0, sz, sw, "branch_id", s.branch_id as f64));
            res.records.push(record(cfg, cfg.seed, 0, sz, sw, "admissible_roots", s.admissible_roots as f64));
        }
    }
    Ok(res)
}

fn support(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut res = SweepResult {
        experiment: "support".into(),
        ..Default::default()
    };
    for &z in &cfg.z_values {
        let s = support_endpoints(z);
        res.records.push(record(cfg, cfg.seed, 0, Some(z), None, "lambda_minus", s.lambda_minus));
        res.records.push(record(cfg, cfg.seed, 0, Some(z), None, "lambda_plus", s.lambda_plus));
        res.records.push(record(cfg, cfg.seed, 0, Some(z), None, "gap_threshold", s.gap_threshold()));
    }
    Ok(res)
}

fn density_grid(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut res = SweepResult {
        experiment: "density".into(),
        ..Default::default()
    };
    for &z in &cfg.z_values {
        let hi = support_endpoints(z).lambda_plus + 0.5;
        let points = cfg.bins.max(2);
        for k in 0..points {
            let e = hi * k as f64 / (points - 1) as f64;
            let w = C64::new(e, cfg.eta_probe);
            res.records.push(record(cfg, cfg.seed, 0, Some(z), Some(w), "density", density(z, e, cfg.eta_probe)?));
        }
    }
    Ok(res)
}

/// Runs the selected experiment.
pub fn dispatch(command: Command, cfg: &ExperimentConfig) -> Result<SweepResult> {
    match command {
        Command::Sample => sample(cfg),
        Command::McSolve => mc_solve(cfg),
        Command::Support => support(cfg),
        Command::Density => density_grid(cfg),
        Command::Radius => experiments::radius_sweep(cfg),
        Command::Outliers => experiments::outlier_scan(cfg),
        Command::Concentration => experiments::concentration_sweep(cfg),
        Command::Esd => experiments::esd_compare(cfg, cfg.bins),
        Command::Identities => experiments::identity_sweep(cfg),
        Command::GammaSweep => experiments::gamma_sweep(cfg),
        Command::Compare => experiments::ensemble_comparison(cfg),
        Command::Lde => experiments::lde_check(cfg),
    }
}

fn split(z: Option<C64>) -> (String, String) {
    match z {
        Some(z) => (z.re.to_string(), z.im.to_string()),
        None => (String::new(), String::new()),
    }
}

/// CSV text with the fixed header and one row per record.
pub fn to_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for r in &result.records {
        let (zr, zi) = split(r.z);
        let (wr, wi) = split(r.w);
        w.write_record([
            r.seed.to_string(),
            r.n.to_string(),
            r.dim.to_string(),
            zr,
            zi,
            wr,
            wi,
            r.metric.clone(),
            r.value.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| io(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json(result: &SweepResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("results serialize");
    s.push('\n');
    s
}

fn file_stem(metric: &str) -> String {
    metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Two-column series per metric: `x median(y)`. `x` is `N`, or `E = Re w`
/// when every record of the metric shares one `N` and `E` varies. Several
/// `(z, w)` groups are separated by a blank line and a `#` comment; a
/// single group is written as bare data lines.
pub fn to_plotdata(result: &SweepResult) -> Vec<(String, String)> {
    let bits = |z: Option<C64>| z.map(|z| (z.re.to_bits(), z.im.to_bits()));
    let mut by_metric: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in &result.records {
        by_metric.entry(r.metric.as_str()).or_default().push(r);
    }
    let mut files = Vec::new();
    for (metric, recs) in by_metric {
        let dims: std::collections::BTreeSet<usize> = recs.iter().map(|r| r.dim).collect();
        let energies: std::collections::BTreeSet<u64> = recs.iter().filter_map(|r| r.w.map(|w| w.re.to_bits())).collect();
        let over_e = dims.len() == 1 && energies.len() > 1;
        type GroupKey = (Option<(u64, u64)>, Option<(u64, u64)>);
        let mut groups: BTreeMap<GroupKey, (Option<C64>, Option<C64>, Vec<(f64, f64)>)> = BTreeMap::new();
        for r in recs {
            let (key, x) = if over_e {
                let w = r.w.map(|w| C64::new(0.0, w.im));
                ((bits(r.z), bits(w)), r.w.map_or(0.0, |w| w.re))
            } else {
                ((bits(r.z), bits(r.w)), r.dim as f64)
            };
            let g = groups.entry(key).or_insert_with(|| (r.z, if over_e { None } else { r.w }, Vec::new()));
            g.2.push((x, r.value));
        }
        let several = groups.len() > 1;
        let mut text = String::new();
        for (i, (_, (z, w, pts))) in groups.into_iter().enumerate() {
            if several {
                if i > 0 {
                    text.push('\n');
                }
                let label = |v: Option<C64>| v.map_or("-".to_string(), format_complex);
                let _ = writeln!(text, "# z={} w={}", label(z), label(w));
            }
            let mut by_x: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
            for (x, y) in pts {
                // Non-negative x, so bit order is numeric order.
                by_x.entry(x.to_bits()).or_insert_with(|| (x, Vec::new())).1.push(y);
            }
            for (x, ys) in by_x.values() {
                let _ = writeln!(text, "{x} {}", median(ys));
            }
        }
        files.push((format!("{}_{}.dat", file_stem(&result.experiment), file_stem(metric)), text));
    }
    files
}

/// Writes `result` to `dir` in `format`; returns the written paths.
pub fn emit_results(result: &SweepResult, format: OutputFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let shown = path.display().to_string();
        move |source| Error::Io { path: shown, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let stem = file_stem(&result.experiment);
    let files = match format {
        OutputFormat::Csv => vec![(format!("{stem}.csv"), to_csv(result)?)],
        OutputFormat::Json => vec![(format!("{stem}.json"), to_json(result))],
        OutputFormat::Plotdata => to_plotdata(result),
    };
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Precondition(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_VIOLATION,
    }
}

fn report(result: &SweepResult, out: &mut String) {
    if result.records.len() <= 50 {
        for r in &result.records {
            let mut line = format!("{} N={}", r.metric, r.dim);
            if let Some(z) = r.z {
                let _ = write!(line, " z={}", format_complex(z));
            }
            if let Some(w) = r.w {
                let _ = write!(line, " w={}", format_complex(w));
            }
            let _ = writeln!(out, "{line} seed={}: {}", r.seed, r.value);
        }
    }
    for (name, value) in &result.summaries {
        let _ = writeln!(out, "{name} = {value}");
    }
    for f in &result.fits {
        let _ = writeln!(out, "fit {}: slope={} r2={} points={}", f.metric, f.slope, f.r2, f.points);
    }
    for e in &result.errors {
        let _ = writeln!(out, "error: {e}");
    }
    let _ = writeln!(out, "violations: {}", result.violations.len());
    for v in &result.violations {
        let _ = writeln!(out, "  {} N={} seed={}: {} vs {}", v.metric, v.dim, v.seed, v.value, v.threshold);
    }
}

/// Full CLI run: parse, dispatch, emit. Returns the process exit code and
/// writes human-readable output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut String, err: &mut String) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = write!(if code == EXIT_OK { &mut *out } else { &mut *err }, "{e}");
            return code;
        }
    };
    let cli = match build_config(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return exit_code(&e);
        }
    };
    let result = match dispatch(cli.command, &cli.experiment) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return exit_code(&e);
        }
    };
    if cli.command == Command::McSolve {
        for s in cli.experiment.z_values.iter().flat_map(|&z| cli.experiment.w_values.iter().map(move |&w| (z, w))) {
            if let Ok(sol) = solve_mc(s.0, s.1) {
                let _ = writeln!(
                    out,
                    "z={} w={}: m_c={} residual={:e}",
                    format_complex(s.0),
                    format_complex(s.1),
                    format_complex(sol.m_c),
                    sol.residual
                );
            }
        }
    } else {
        report(&result, out);
    }
    match emit_results(&result, cli.format, &cli.output_dir) {
        Ok(paths) => {
            for p in paths {
                let _ = writeln!(out, "wrote {}", p.display());
            }
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_IO;
        }
    }
    if result.violations.is_empty() && result.errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

/// [`run_with`] printing to the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (String::new(), String::new());
    let code = run_with(argv, &mut out, &mut err);
    print!("{out}");
    eprint!("{err}");
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<CliConfig> {
        parse_config(std::iter::once("prodspec").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_defaults() {
        let c = parse(&["radius", "--N", "1,2", "--n", "3", "--law", "rademacher", "--trials", "1", "--seed", "9"]).unwrap();
        assert_eq!(c.command, Command::Radius);
        assert_eq!(c.experiment.n_ladder, vec![1, 2]);
        assert_eq!(c.experiment.n, 3);
        assert_eq!(c.experiment.trials, 1);
        assert_eq!(c.experiment.seed, 9);
        assert_eq!(c.experiment.law, crate::ensembles::EntryLaw::Rademacher);
    }

    #[test]
    fn complex_flags() {
        let c = parse(&["mc-solve", "--z", "1.5+0i", "--w", "0.05+0.2i,-0.1+1i"]).unwrap();
        assert_eq!(c.experiment.z_values, vec![C64::new(1.5, 0.0)]);
        assert_eq!(c.experiment.w_values, vec![C64::new(0.05, 0.2), C64::new(-0.1, 1.0)]);
        let e = parse(&["mc-solve", "--w", "oops"]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "w"));
    }

    #[test]
    fn set_overrides_and_unknown_keys() {
        let c = parse(&["esd", "--set", "bins=12", "--set", "z_values=1.2,3", "--set", "theta=0.4"]).unwrap();
        assert_eq!(c.experiment.bins, 12);
        assert_eq!(c.experiment.z_values, vec![C64::new(1.2, 0.0), C64::new(3.0, 0.0)]);
        assert_eq!(c.experiment.theta, Some(0.4));
        let e = parse(&["esd", "--set", "nonsense=1"]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "nonsense"));
        let e = parse(&["esd", "--set", "bins=abc"]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "bins"));
        let e = parse(&["esd", "--set", "bins=0"]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "bins"));
    }

    #[test]
    fn config_file_layers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"trials": 7, "N_ladder": [8, 16]}"#).unwrap();
        let c = parse(&["radius", "--config", path.to_str().unwrap(), "--trials", "2"]).unwrap();
        assert_eq!(c.experiment.trials, 2);
        assert_eq!(c.experiment.n_ladder, vec![8, 16]);

        fs::write(&path, r#"{"trails": 7}"#).unwrap();
        let e = parse(&["radius", "--config", path.to_str().unwrap()]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "trails"));

        fs::write(&path, r#"{"trials": "#).unwrap();
        assert!(parse(&["radius", "--config", path.to_str().unwrap()]).is_err());

        fs::write(&path, r#"{"delta": "big"}"#).unwrap();
        let e = parse(&["radius", "--config", path.to_str().unwrap()]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "delta"));
    }

    #[test]
    fn missing_config_names_path() {
        let mut out = String::new();
        let mut err = String::new();
        let code = run_with(["prodspec", "support", "--config", "/no/such/file.json"], &mut out, &mut err);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("/no/such/file.json"), "{err}");
    }

    #[test]
    fn empty_and_single_csv() {
        let mut res = SweepResult::default();
        assert_eq!(to_csv(&res).unwrap(), format!("{CSV_HEADER}\n"));
        res.records.push(TrialRecord {
            seed: 3,
            n: 2,
            dim: 4,
            z: Some(C64::new(1.5, 0.0)),
            w: None,
            metric: "min_eig".into(),
            value: 0.25,
        });
        let text = to_csv(&res).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "3,2,4,1.5,0,,,min_eig,0.25");
        assert_eq!(lines[1].split(',').count(), 9);
    }

    #[test]
    fn plotdata_single_and_grouped() {
        let mut res = SweepResult {
            experiment: "radius".into(),
            ..Default::default()
        };
        for (dim, v) in [(64, 1.0), (64, 1.5), (128, 1.0)] {
            res.records.push(TrialRecord {
                seed: 0,
                n: 2,
                dim,
                z: None,
                w: None,
                metric: "radius".into(),
                value: v,
            });
        }
        let files = to_plotdata(&res);
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].0, "radius_radius.dat");
        assert_eq!(files[0].1, "64 1.25\n128 1\n");

        for z in [1.5, 3.0] {
            res.records.push(TrialRecord {
                seed: 0,
                n: 2,
                dim: 64,
                z: Some(C64::new(z, 0.0)),
                w: None,
                metric: "min_eig".into(),
                value: z,
            });
        }
        let files = to_plotdata(&res);
        let grouped = &files.iter().find(|f| f.0 == "radius_min_eig.dat").unwrap().1;
        assert_eq!(grouped.lines().filter(|l| l.starts_with('#')).count(), 2);
    }

    #[test]
    fn scalar_radius_prints_one() {
        let dir = tempfile::tempdir().unwrap();
        let (mut out, mut err) = (String::new(), String::new());
        let code = run_with(
            [
                "prodspec",
                "radius",
                "--N",
                "1",
                "--n",
                "2",
                "--law",
                "rademacher",
                "--trials",
                "1",
                "--output-dir",
                dir.path().to_str().unwrap(),
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(out.contains("radius N=1 seed="), "{out}");
        assert!(out.contains(": 1\n"), "{out}");
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let (mut out, mut err) = (String::new(), String::new());
        let code = run_with(
            ["prodspec", "support", "--output-dir", blocker.join("sub").to_str().unwrap()],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_IO, "{err}");
    }
}
