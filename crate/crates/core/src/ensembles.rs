//! Factor ensembles, the product `X_1 ⋯ X_n` and its cyclic linearization.
//!
//! Every random draw in the crate flows from a 64-bit master seed through
//! [`substream`]: the stream for child `index` of a parent seed is a ChaCha8
//! generator keyed by `SHA-256("prodspec/stream/v1" ‖ parent ‖ index)` (both
//! integers little-endian). Factor `a` of a chain uses child `a` of the
//! chain's master seed, so chains are reproducible regardless of the order or
//! thread on which factors are sampled.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const STREAM_DOMAIN: &[u8] = b"prodspec/stream/v1";

/// 32-byte key for child `index` of `parent`.
fn stream_key(parent: u64, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(STREAM_DOMAIN);
    hasher.update(parent.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Deterministic generator for child `index` of `parent`.
pub fn substream(parent: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_key(parent, index))
}

/// Child seed derived the same way as [`substream`], for seeding nested
/// structures (trials of a sweep, chains within a trial).
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let key = stream_key(parent, index);
    u64::from_le_bytes(key[..8].try_into().expect("8-byte prefix"))
}

/// Distribution of the unscaled entries `√N · x_ij`.
///
/// All laws are centered with unit variance (`E|√N x|² = 1`); the complex
/// law has independent real and imaginary parts of variance 1/2 each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryLaw {
    ComplexGaussian,
    RealGaussian,
    Rademacher,
    /// Laplace density `½e^{-|u|}` rescaled by `1/√2`.
    SymmetrizedExponential,
    /// All entries zero. Not a valid ensemble (variance 0); used to feed
    /// deterministic spectra through the experiment pipeline.
    Zero,
}

impl EntryLaw {
    pub const ALL: [EntryLaw; 5] = [
        EntryLaw::ComplexGaussian,
        EntryLaw::RealGaussian,
        EntryLaw::Rademacher,
        EntryLaw::SymmetrizedExponential,
        EntryLaw::Zero,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EntryLaw::ComplexGaussian => "complex-gaussian",
            EntryLaw::RealGaussian => "real-gaussian",
            EntryLaw::Rademacher => "rademacher",
            EntryLaw::SymmetrizedExponential => "symmetrized-exponential",
            EntryLaw::Zero => "zero",
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, EntryLaw::ComplexGaussian)
    }

    /// Tail exponent for which `P(|√N x| > t) ≤ θ⁻¹ e^{-t^θ}` holds for
    /// every `t ≥ 0`, not only on the grid used by [`tail_decay_check`].
    ///
    /// The binding region is small `t`, where the bound must stay above 1:
    /// * complex Gaussian, survival `e^{-t²}`: valid for θ ≤ 0.68, declared 0.5;
    /// * real Gaussian, survival `erfc(t/√2)`: valid for θ ≤ 0.95, declared 0.9;
    /// * Rademacher, survival `1{t < 1}`: needs `θ⁻¹e⁻¹ ≥ 1`, declared 1/3;
    /// * symmetrized exponential, survival `e^{-√2 t}`: declared 1.
    pub fn declared_theta(self) -> f64 {
        match self {
            EntryLaw::ComplexGaussian => 0.5,
            EntryLaw::RealGaussian => 0.9,
            EntryLaw::Rademacher => 1.0 / 3.0,
            EntryLaw::SymmetrizedExponential => 1.0,
            EntryLaw::Zero => 1.0,
        }
    }

    /// One draw of `√N · x`, i.e. the entry before the `1/√N` scaling.
    pub fn sample_unit<R: Rng + ?Sized>(self, rng: &mut R) -> C64 {
        match self {
            EntryLaw::ComplexGaussian => {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
            EntryLaw::RealGaussian => C64::new(StandardNormal.sample(rng), 0.0),
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(-1.0, 0.0)
                }
            }
            EntryLaw::SymmetrizedExponential => {
                let magnitude: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                C64::new(sign * magnitude * std::f64::consts::FRAC_1_SQRT_2, 0.0)
            }
            EntryLaw::Zero => C64::new(0.0, 0.0),
        }
    }
}

impl fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EntryLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntryLaw::ALL
            .into_iter()
            .find(|law| law.tag() == s)
            .ok_or_else(|| {
                let known: Vec<_> = EntryLaw::ALL.iter().map(|l| l.tag()).collect();
                Error::config("law", format!("unknown entry law `{s}` (known: {})", known.join(", ")))
            })
    }
}

/// Distributional recipe for a chain of `n` independent `N×N` factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// Number of factors, at least 2.
    pub n: usize,
    /// Factor dimension `N`, at least 1.
    pub dim: usize,
    pub law: EntryLaw,
    /// Tail parameter of the subexponential decay bound.
    pub theta: f64,
    pub master_seed: u64,
}

impl EnsembleSpec {
    /// Spec with the law's declared tail parameter.
    pub fn new(n: usize, dim: usize, law: EntryLaw, master_seed: u64) -> Result<Self> {
        let spec = EnsembleSpec {
            n,
            dim,
            law,
            theta: law.declared_theta(),
            master_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        self.theta = theta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dim(self, dim: usize) -> Result<Self> {
        EnsembleSpec { dim, ..self }.validate_owned()
    }

    pub fn with_seed(self, master_seed: u64) -> Self {
        EnsembleSpec { master_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("n", format!("need at least 2 factors, got {}", self.n)));
        }
        if self.dim < 1 {
            return Err(Error::config("N", "factor dimension must be at least 1"));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::config("theta", format!("must be positive, got {}", self.theta)));
        }
        Ok(())
    }

    fn validate_owned(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

/// Samples an `N×N` factor with entries `x_ij = (√N x_ij) / √N`, drawn in
/// row-major order from `stream`.
pub fn sample_factor<R: Rng + ?Sized>(dim: usize, law: EntryLaw, stream: &mut R) -> Mat<C64> {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut m = Mat::<C64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = law.sample_unit(stream) * scale;
        }
    }
    m
}

/// An ordered list of `n` independent factors.
#[derive(Debug, Clone)]
pub struct FactorChain {
    factors: Vec<Mat<C64>>,
    spec: Option<EnsembleSpec>,
}

impl FactorChain {
    /// Wraps fixed factors (no generating spec). All factors must be square
    /// and share one dimension; at least two are required.
    pub fn from_factors(factors: Vec<Mat<C64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::Precondition(format!(
                "a chain needs at least 2 factors, got {}",
                factors.len()
            )));
        }
        let dim = factors[0].nrows();
        if dim == 0 {
            return Err(Error::Precondition("factor dimension must be at least 1".into()));
        }
        if let Some(bad) = factors.iter().position(|f| f.nrows() != dim || f.ncols() != dim) {
            return Err(Error::Precondition(format!(
                "factor {bad} is {}x{}, expected {dim}x{dim}",
                factors[bad].nrows(),
                factors[bad].ncols()
            )));
        }
        Ok(FactorChain { factors, spec: None })
    }

    pub fn factors(&self) -> &[Mat<C64>] {
        &self.factors
    }

    pub fn spec(&self) -> Option<&EnsembleSpec> {
        self.spec.as_ref()
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.factors[0].nrows()
    }

    /// Copy of the chain with row `row` of factor `factor` redrawn from `stream`.
    pub fn with_row_resampled<R: Rng + ?Sized>(
        &self,
        factor: usize,
        row: usize,
        law: EntryLaw,
        stream: &mut R,
    ) -> FactorChain {
        let mut out = self.clone();
        let scale = 1.0 / (self.dim() as f64).sqrt();
        for j in 0..self.dim() {
            out.factors[factor][(row, j)] = law.sample_unit(stream) * scale;
        }
        out
    }

    /// Copy of the chain with column `col` of factor `factor` redrawn from `stream`.
    pub fn with_column_resampled<R: Rng + ?Sized>(
        &self,
        factor: usize,
        col: usize,
        law: EntryLaw,
        stream: &mut R,
    ) -> FactorChain {
        let mut out = self.clone();
        let scale = 1.0 / (self.dim() as f64).sqrt();
        for i in 0..self.dim() {
            out.factors[factor][(i, col)] = law.sample_unit(stream) * scale;
        }
        out
    }
}

/// Samples factor `a` from substream `a` of `spec.master_seed`.
pub fn sample_chain(spec: &EnsembleSpec) -> Result<FactorChain> {
    spec.validate()?;
    let factors = (0..spec.n)
        .map(|a| {
            let mut rng = substream(spec.master_seed, a as u64);
            sample_factor(spec.dim, spec.law, &mut rng)
        })
        .collect();
    Ok(FactorChain {
        factors,
        spec: Some(*spec),
    })
}

/// The `nN×nN` cyclic block matrix `X` and its shift `Y = X − z`.
///
/// With 0-based blocks, factor `a` sits in block `(a, a+1 mod n)`, so the last
/// factor occupies the bottom-left corner.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    x: Mat<C64>,
    y: Mat<C64>,
    z: C64,
    n: usize,
    dim: usize,
}

impl LinearizedSystem {
    pub fn x(&self) -> &Mat<C64> {
        &self.x
    }

    pub fn y(&self) -> &Mat<C64> {
        &self.y
    }

    pub fn z(&self) -> C64 {
        self.z
    }

    /// Number of factors.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Factor dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total dimension `nN`.
    pub fn size(&self) -> usize {
        self.n * self.dim
    }

    /// Same `X`, new shift.
    pub fn with_shift(&self, z: C64) -> LinearizedSystem {
        let y = shifted(&self.x, z);
        LinearizedSystem {
            x: self.x.clone(),
            y,
            z,
            n: self.n,
            dim: self.dim,
        }
    }

    /// Block index (0-based) holding global index `k`.
    pub fn block_of(&self, k: usize) -> usize {
        k / self.dim
    }

    /// Global index of local index `i` in block `a` (both 0-based).
    pub fn global_index(&self, block: usize, i: usize) -> usize {
        (block % self.n) * self.dim + i
    }
}

fn shifted(x: &Mat<C64>, z: C64) -> Mat<C64> {
    let mut y = x.clone();
    for k in 0..y.nrows() {
        y[(k, k)] -= z;
    }
    y
}

pub fn build_linearization(chain: &FactorChain, z: C64) -> LinearizedSystem {
    let n = chain.n();
    let dim = chain.dim();
    let mut x = Mat::<C64>::zeros(n * dim, n * dim);
    for (a, factor) in chain.factors().iter().enumerate() {
        let b = (a + 1) % n;
        x.as_mut()
            .submatrix_mut(a * dim, b * dim, dim, dim)
            .copy_from(factor.as_ref());
    }
    let y = shifted(&x, z);
    LinearizedSystem { x, y, z, n, dim }
}

/// `X_1 X_2 ⋯ X_n`, multiplied left to right.
pub fn build_product(chain: &FactorChain) -> Mat<C64> {
    let mut iter = chain.factors().iter();
    let first = iter.next().expect("chain has at least two factors").clone();
    iter.fold(first, |acc, f| &acc * f)
}

/// Empirical check of the subexponential tail bound at `t ∈ {1, 2, 3, 4}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    /// `(t, empirical P(|√N x| > t), θ⁻¹e^{-t^θ})` per grid point.
    pub grid: Vec<(f64, f64, f64)>,
    /// Largest empirical/bound ratio over the grid.
    pub worst_ratio: f64,
}

pub const TAIL_GRID: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

pub fn tail_decay_check(spec: &EnsembleSpec, samples: usize) -> Result<TailReport> {
    spec.validate()?;
    if samples < 10_000 {
        return Err(Error::Precondition(format!(
            "tail check needs at least 10^4 samples, got {samples}"
        )));
    }
    // Substream index u64::MAX is reserved for tail checks so it never
    // coincides with a factor stream.
    let mut rng = substream(spec.master_seed, u64::MAX);
    let mut exceed = [0usize; TAIL_GRID.len()];
    for _ in 0..samples {
        let magnitude = spec.law.sample_unit(&mut rng).norm();
        for (count, &t) in exceed.iter_mut().zip(TAIL_GRID.iter()) {
            if magnitude > t {
                *count += 1;
            }
        }
    }
    let theta = spec.theta;
    let grid: Vec<_> = TAIL_GRID
        .iter()
        .zip(exceed)
        .map(|(&t, count)| {
            let empirical = count as f64 / samples as f64;
            let bound = (-t.powf(theta)).exp() / theta;
            (t, empirical, bound)
        })
        .collect();
    let worst_ratio = grid
        .iter()
        .map(|&(_, emp, bound)| emp / bound)
        .fold(0.0, f64::max);
    Ok(TailReport { grid, worst_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rademacher_scalar_is_a_sign() {
        for seed in 0..20 {
            let m = sample_factor(1, EntryLaw::Rademacher, &mut substream(seed, 0));
            let v = m[(0, 0)];
            assert!(v == c(1.0, 0.0) || v == c(-1.0, 0.0), "{v}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_factor(64, EntryLaw::ComplexGaussian, &mut substream(11, 3));
        let b = sample_factor(64, EntryLaw::ComplexGaussian, &mut substream(11, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn real_gaussian_entry_variance() {
        // One 128x128 draw: 16384 entries, the sample variance has relative
        // standard error sqrt(2/16384) ≈ 0.011, so ±10% is a ~9σ band.
        let dim = 128;
        let m = sample_factor(dim, EntryLaw::RealGaussian, &mut substream(5, 0));
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                assert_eq!(m[(i, j)].im, 0.0);
                s += m[(i, j)].norm_sqr();
            }
        }
        let var = s / (dim * dim) as f64;
        let target = 1.0 / dim as f64;
        assert!(var >= 0.9 * target && var <= 1.1 * target, "{var} vs {target}");
    }

    #[test]
    fn unknown_law_tag_is_config_error() {
        let err = "cauchy".parse::<EntryLaw>().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "law"), "{err}");
        for law in EntryLaw::ALL {
            assert_eq!(law.tag().parse::<EntryLaw>().unwrap(), law);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(EnsembleSpec::new(1, 4, EntryLaw::RealGaussian, 0).is_err());
        assert!(EnsembleSpec::new(2, 0, EntryLaw::RealGaussian, 0).is_err());
        let spec = EnsembleSpec::new(2, 4, EntryLaw::RealGaussian, 0).unwrap();
        assert!(spec.with_theta(0.0).is_err());
        assert!(spec.with_theta(-1.0).is_err());
    }

    #[test]
    fn chain_shape_and_determinism() {
        let spec = EnsembleSpec::new(2, 4, EntryLaw::ComplexGaussian, 7).unwrap();
        let chain = sample_chain(&spec).unwrap();
        assert_eq!(chain.n(), 2);
        for f in chain.factors() {
            assert_eq!((f.nrows(), f.ncols()), (4, 4));
        }
        let again = sample_chain(&spec).unwrap();
        assert_eq!(chain.factors(), again.factors());
    }

    #[test]
    fn substreams_differ_between_factors() {
        let spec = EnsembleSpec::new(3, 4, EntryLaw::RealGaussian, 7).unwrap();
        let chain = sample_chain(&spec).unwrap();
        assert_ne!(chain.factors()[0], chain.factors()[1]);
        assert_ne!(chain.factors()[1], chain.factors()[2]);
    }

    #[test]
    fn linearization_block_pattern_n2() {
        let a = Mat::<C64>::from_fn(2, 2, |i, j| c((1 + i * 2 + j) as f64, 0.0));
        let b = Mat::<C64>::from_fn(2, 2, |i, j| c(0.0, (5 + i * 2 + j) as f64));
        let chain = FactorChain::from_factors(vec![a.clone(), b.clone()]).unwrap();
        let sys = build_linearization(&chain, c(0.0, 0.0));
        let x = sys.x();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(x[(i, j)], c(0.0, 0.0));
                assert_eq!(x[(i, 2 + j)], a[(i, j)]);
                assert_eq!(x[(2 + i, j)], b[(i, j)]);
                assert_eq!(x[(2 + i, 2 + j)], c(0.0, 0.0));
            }
        }
        let x2 = x * x;
        let ab = &a * &b;
        let ba = &b * &a;
        for i in 0..2 {
            for j in 0..2 {
                assert!((x2[(i, j)] - ab[(i, j)]).norm() < 1e-14);
                assert!((x2[(2 + i, 2 + j)] - ba[(i, j)]).norm() < 1e-14);
                assert_eq!(x2[(i, 2 + j)], c(0.0, 0.0));
                assert_eq!(x2[(2 + i, j)], c(0.0, 0.0));
            }
        }
    }

    #[test]
    fn linearization_shift_and_sparsity() {
        let spec = EnsembleSpec::new(3, 5, EntryLaw::ComplexGaussian, 1).unwrap();
        let chain = sample_chain(&spec).unwrap();
        let z = c(0.3, -1.2);
        let sys = build_linearization(&chain, z);
        let (x, y) = (sys.x(), sys.y());
        for r in 0..15 {
            for col in 0..15 {
                let (a, b) = (r / 5, col / 5);
                if b != (a + 1) % 3 {
                    assert_eq!(x[(r, col)], c(0.0, 0.0));
                }
                let expect = if r == col { x[(r, col)] - z } else { x[(r, col)] };
                assert_eq!(y[(r, col)], expect);
            }
        }
        let moved = sys.with_shift(c(2.0, 0.0));
        assert_eq!(moved.x(), sys.x());
        assert_eq!(moved.y()[(0, 0)], c(-2.0, 0.0));
    }

    #[test]
    fn product_of_identities_and_zero() {
        let id = Mat::<C64>::identity(3, 3);
        let zero = Mat::<C64>::zeros(3, 3);
        let chain = FactorChain::from_factors(vec![id.clone(), id.clone()]).unwrap();
        assert_eq!(build_product(&chain), id);
        let chain = FactorChain::from_factors(vec![zero.clone(), id]).unwrap();
        assert_eq!(build_product(&chain), zero);
    }

    #[test]
    fn product_is_associative() {
        let spec = EnsembleSpec::new(3, 4, EntryLaw::ComplexGaussian, 99).unwrap();
        let chain = sample_chain(&spec).unwrap();
        let f = chain.factors();
        let left = &(&f[0] * &f[1]) * &f[2];
        let right = &f[0] * &(&f[1] * &f[2]);
        let p = build_product(&chain);
        for i in 0..4 {
            for j in 0..4 {
                assert!((p[(i, j)] - left[(i, j)]).norm() < 1e-12);
                assert!((p[(i, j)] - right[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn from_factors_rejects_bad_shapes() {
        let a = Mat::<C64>::zeros(2, 2);
        let b = Mat::<C64>::zeros(3, 3);
        assert!(FactorChain::from_factors(vec![a.clone()]).is_err());
        assert!(FactorChain::from_factors(vec![a, b]).is_err());
    }

    #[test]
    fn tail_check_rademacher_has_no_mass_beyond_one() {
        let spec = EnsembleSpec::new(2, 16, EntryLaw::Rademacher, 3)
            .unwrap()
            .with_theta(1.0)
            .unwrap();
        let report = tail_decay_check(&spec, 10_000).unwrap();
        assert_eq!(report.grid[1].1, 0.0);
        assert_eq!(report.worst_ratio, 0.0);
    }

    #[test]
    fn tail_check_needs_enough_samples() {
        let spec = EnsembleSpec::new(2, 16, EntryLaw::Rademacher, 3).unwrap();
        assert!(matches!(tail_decay_check(&spec, 9_999), Err(Error::Precondition(_))));
    }
}
