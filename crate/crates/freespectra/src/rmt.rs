//! Wigner ensembles and deterministic matrix families.
//!
//! This module produces the finite-n side of every experiment: Hermitian Wigner
//! matrices with a configurable entry law, the truncation-plus-Gaussian-convolution
//! preprocessing that upgrades a general law to one with good concentration, a few
//! stock deterministic families, and empirical spectra of polynomial evaluations.
//!
//! Sampling is deterministic by contract: a `(law, n, seed)` triple always yields the
//! same matrix, bit for bit. Per-trial streams are derived with [`trial_seed`].

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, StudentsT};
use statrs::function::erf::erf;

use crate::matops::{hermitian_deviation, hermitian_eigvals, read_matrix_csv, HERMITIAN_RTOL};
use crate::ncalg::NCPolynomial;
use crate::{CMat, Error, Result};

/// Draw count for Monte Carlo third-moment estimates on laws without a closed form.
const MOMENT_ESTIMATE_DRAWS: usize = 1_000_000;

/// Fixed stream for those estimates, so the bound is reproducible across runs.
const MOMENT_ESTIMATE_SEED: u64 = 0x5EED_0001;

/// Safety factor applied to Monte Carlo moment estimates. The truncation level check
/// compares against an upper bound, so the estimate is inflated rather than trusted.
const MOMENT_ESTIMATE_SAFETY: f64 = 1.1;

/// Entry law of a Wigner matrix, normalized to mean 0 and variance 1 by construction.
///
/// The law describes one real draw. Diagonal entries take single draws; off-diagonal
/// entries combine two independent draws as `(re + i*im)/sqrt(2)`, so each part has
/// variance 1/2 and the complex entry has unit second moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryLaw {
    /// Standard real Gaussian. With this law the sampler produces a GUE matrix.
    Gaussian,
    /// Uniform on {-1, +1}.
    Rademacher,
    /// Uniform on [-sqrt(3), sqrt(3)].
    Uniform,
    /// Student t with `df` degrees of freedom, rescaled to unit variance (df > 2).
    StudentT { df: f64 },
    /// Two atoms placed at sqrt((1-p)/p) and -sqrt(p/(1-p)) with probabilities p and
    /// 1-p, the unique mean-0 variance-1 law supported on two points with P(X>0)=p.
    TwoPoint { p: f64 },
}

impl Default for EntryLaw {
    fn default() -> Self {
        EntryLaw::Gaussian
    }
}

impl EntryLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EntryLaw::Gaussian | EntryLaw::Rademacher | EntryLaw::Uniform => Ok(()),
            EntryLaw::StudentT { df } => {
                if !df.is_finite() || df <= 2.0 {
                    Err(Error::Parameter(format!(
                        "student_t law needs df > 2 to have a variance to normalize, got df = {}",
                        df
                    )))
                } else {
                    Ok(())
                }
            }
            EntryLaw::TwoPoint { p } => {
                if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                    Err(Error::Parameter(format!(
                        "two_point law needs 0 < p < 1, got p = {}",
                        p
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// One draw from the unit-variance law.
    pub fn sample_unit(&self, rng: &mut ChaCha12Rng) -> f64 {
        match *self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3.0f64.sqrt(),
            EntryLaw::StudentT { df } => {
                let t: f64 = rng.sample(StudentT::new(df).expect("validated df"));
                t * ((df - 2.0) / df).sqrt()
            }
            EntryLaw::TwoPoint { p } => {
                if rng.random::<f64>() < p {
                    ((1.0 - p) / p).sqrt()
                } else {
                    -(p / (1.0 - p)).sqrt()
                }
            }
        }
    }

    /// Mean and second moment of the law killed outside [-c, c]: m1 = E[X 1{|X|<=c}]
    /// and m2 = E[X^2 1{|X|<=c}]. Exceeding draws are zeroed, not clipped, which is
    /// what the preprocessing in [`truncate_convolve`] applies entrywise.
    pub fn truncated_moments(&self, c: f64) -> Result<(f64, f64)> {
        if !(c > 0.0) {
            return Err(Error::Parameter(format!(
                "truncation level must be positive, got {}",
                c
            )));
        }
        match *self {
            EntryLaw::Gaussian => {
                // int_{-c}^{c} x^2 phi(x) dx = erf(c/sqrt(2)) - c sqrt(2/pi) e^{-c^2/2}
                let m2 = erf(c / std::f64::consts::SQRT_2)
                    - c * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * c * c).exp();
                Ok((0.0, m2))
            }
            EntryLaw::Rademacher => Ok((0.0, if c >= 1.0 { 1.0 } else { 0.0 })),
            EntryLaw::Uniform => {
                let s = 3.0f64.sqrt();
                let m = c.min(s);
                Ok((0.0, m * m * m / (3.0 * s)))
            }
            EntryLaw::StudentT { df } => {
                self.validate()?;
                let scale = ((df - 2.0) / df).sqrt();
                let t = StudentsT::new(0.0, 1.0, df)
                    .map_err(|e| Error::Parameter(format!("student_t density: {}", e)))?;
                // Density of the standardized variable; the integrand decays like
                // x^{1-df}, so capping the range loses nothing at these tolerances.
                let f = |x: f64| x * x * t.pdf(x / scale) / scale;
                let m2 = 2.0 * adaptive_simpson(&f, 0.0, c.min(1e5), 1e-11, 40);
                Ok((0.0, m2))
            }
            EntryLaw::TwoPoint { p } => {
                self.validate()?;
                let a = ((1.0 - p) / p).sqrt();
                let b = -(p / (1.0 - p)).sqrt();
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                if a.abs() <= c {
                    m1 += p * a;
                    m2 += p * a * a;
                }
                if b.abs() <= c {
                    m1 += (1.0 - p) * b;
                    m2 += (1.0 - p) * b * b;
                }
                Ok((m1, m2))
            }
        }
    }

    /// Upper bound on the third absolute moment of a complex off-diagonal entry,
    /// E[((x1^2 + x2^2)/2)^{3/2}] with x1, x2 independent draws of the law.
    ///
    /// Closed forms are used where they exist; otherwise the bound is a Monte Carlo
    /// estimate from a fixed stream, inflated by [`MOMENT_ESTIMATE_SAFETY`].
    pub fn theta_star(&self) -> Result<f64> {
        self.validate()?;
        match *self {
            // |entry|^2 for two standard normal parts is exponential with mean 1,
            // so E|entry|^3 = Gamma(5/2) = (3/4) sqrt(pi).
            EntryLaw::Gaussian => Ok(0.75 * std::f64::consts::PI.sqrt()),
            EntryLaw::Rademacher => Ok(1.0),
            EntryLaw::TwoPoint { p } => {
                let atoms = [(((1.0 - p) / p).sqrt(), p), (-(p / (1.0 - p)).sqrt(), 1.0 - p)];
                let mut s = 0.0;
                for &(u, pu) in &atoms {
                    for &(v, pv) in &atoms {
                        s += pu * pv * (0.5 * (u * u + v * v)).powf(1.5);
                    }
                }
                Ok(s)
            }
            EntryLaw::Uniform | EntryLaw::StudentT { .. } => {
                if let EntryLaw::StudentT { df } = *self {
                    if df <= 3.0 {
                        return Err(Error::Parameter(format!(
                            "student_t third absolute moment is infinite for df <= 3, got df = {}",
                            df
                        )));
                    }
                }
                let mut rng = ChaCha12Rng::seed_from_u64(MOMENT_ESTIMATE_SEED);
                let mut acc = 0.0;
                for _ in 0..MOMENT_ESTIMATE_DRAWS {
                    let x = self.sample_unit(&mut rng);
                    let y = self.sample_unit(&mut rng);
                    acc += (0.5 * (x * x + y * y)).powf(1.5);
                }
                Ok(acc / MOMENT_ESTIMATE_DRAWS as f64 * MOMENT_ESTIMATE_SAFETY)
            }
        }
    }
}

impl std::fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            EntryLaw::Gaussian => write!(f, "gaussian"),
            EntryLaw::Rademacher => write!(f, "rademacher"),
            EntryLaw::Uniform => write!(f, "uniform"),
            EntryLaw::StudentT { df } => write!(f, "student_t(df={})", df),
            EntryLaw::TwoPoint { p } => write!(f, "two_point(p={})", p),
        }
    }
}

/// Plain recursive adaptive Simpson quadrature on [a, b].
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, depth)
}

/// Parameters of one application of [`truncate_convolve`], kept with the sample so
/// reports can state exactly how the matrix was produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub c: f64,
    pub delta: f64,
    pub gauss_seed: u64,
}

/// A sampled Wigner matrix together with everything needed to regenerate it.
///
/// `matrix` already carries the 1/sqrt(n) normalization, so it feeds directly into
/// polynomial evaluation and its spectrum lives on the scale of the limit laws.
#[derive(Clone, Debug)]
pub struct WignerSample {
    pub n: usize,
    pub matrix: CMat,
    pub seed: u64,
    pub law: EntryLaw,
    pub preprocessing: Option<TruncationRecord>,
}

/// Seed for one trial of a multi-trial experiment.
///
/// The splitting rule is a plain XOR of the base seed with the trial index. Distinct
/// trials get distinct seeds, trial 0 reproduces the base seed, and the rule is
/// stable across platforms and releases.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    base ^ trial
}

/// Unscaled entry matrix: unit-variance diagonal draws, off-diagonal entries
/// (re + i*im)/sqrt(2) from two draws. Draw order is row-major over the upper
/// triangle, diagonal first within each row; this order is part of the
/// determinism contract.
fn draw_unscaled(n: usize, law: EntryLaw, rng: &mut ChaCha12Rng) -> CMat {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMat::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = Complex64::new(law.sample_unit(rng), 0.0);
        for j in (i + 1)..n {
            let re = law.sample_unit(rng);
            let im = law.sample_unit(rng);
            let z = Complex64::new(re * inv_sqrt2, im * inv_sqrt2);
            m[[i, j]] = z;
            m[[j, i]] = z.conj();
        }
    }
    m
}

/// Sample an n x n Hermitian Wigner matrix, scaled by 1/sqrt(n).
///
/// Diagonal entries are real draws of `law`; off-diagonal entries have independent
/// real and imaginary parts of variance 1/2 each, so E|entry|^2 = 1 before scaling.
/// With [`EntryLaw::Gaussian`] this is the GUE.
pub fn sample_wigner(n: usize, law: EntryLaw, seed: u64) -> Result<WignerSample> {
    law.validate()?;
    if n == 0 {
        return Err(Error::Parameter("matrix size must be at least 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut matrix = draw_unscaled(n, law, &mut rng);
    let scale = 1.0 / (n as f64).sqrt();
    matrix.mapv_inplace(|z| z * scale);
    Ok(WignerSample {
        n,
        matrix,
        seed,
        law,
        preprocessing: None,
    })
}

/// Truncate, re-center, re-normalize, and Gaussian-convolve a Wigner sample.
///
/// Entrywise on the unscaled matrix: the real and imaginary parts are zeroed wherever
/// their magnitude exceeds `c`, the analytic mean of the surviving part is subtracted,
/// and the part is rescaled so its variance is exactly 1/2 again (variance 1 on the
/// diagonal). The result is then mixed with an independent Gaussian sample G drawn
/// from `gauss_seed` as (X + delta * G) / sqrt(1 + delta^2), which leaves all entry
/// variances unchanged. With `delta = 0` no Gaussian draws are consumed and a law
/// already supported inside [-c, c] passes through unchanged.
///
/// The level must satisfy c > 8 * theta_star(law); smaller levels distort the law too
/// much for the spectral approximations downstream and are rejected.
pub fn truncate_convolve(
    sample: &WignerSample,
    c: f64,
    delta: f64,
    gauss_seed: u64,
) -> Result<WignerSample> {
    if sample.preprocessing.is_some() {
        return Err(Error::Parameter(
            "sample is already preprocessed; truncation is applied to raw samples only".into(),
        ));
    }
    if !c.is_finite() || !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!(
            "need a finite truncation level and delta >= 0, got c = {}, delta = {}",
            c, delta
        )));
    }
    let theta = sample.law.theta_star()?;
    if c <= 8.0 * theta {
        return Err(Error::Parameter(format!(
            "truncation level {} is below the admissible range: the law {} has third \
             absolute moment bound {:.4}, so the level must exceed {:.4}",
            c,
            sample.law,
            theta,
            8.0 * theta
        )));
    }
    let n = sample.n;
    let root_n = (n as f64).sqrt();

    // Off-diagonal parts are unit draws over sqrt(2), so a part-level cutoff at c
    // corresponds to cutting the unit law at sqrt(2) c; the diagonal is cut at c.
    let (m1_off, m2_off) = sample.law.truncated_moments(std::f64::consts::SQRT_2 * c)?;
    let (m1_diag, m2_diag) = sample.law.truncated_moments(c)?;
    let var_off = m2_off - m1_off * m1_off;
    let var_diag = m2_diag - m1_diag * m1_diag;
    if var_off <= 0.0 || var_diag <= 0.0 {
        return Err(Error::Parameter(format!(
            "truncation at level {} leaves the law {} with no variance",
            c, sample.law
        )));
    }
    // Rescaling the centered unit draw by 1/sqrt(var) makes the part variance exactly
    // 1/2 off the diagonal and 1 on it.
    let factor_off = 1.0 / var_off.sqrt();
    let factor_diag = 1.0 / var_diag.sqrt();
    let mean_part = m1_off * std::f64::consts::FRAC_1_SQRT_2;

    let kill = |part: f64, level: f64| if part.abs() <= level { part } else { 0.0 };

    let mut out = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        let d = sample.matrix[[i, i]].re * root_n;
        out[[i, i]] = Complex64::new((kill(d, c) - m1_diag) * factor_diag, 0.0);
        for j in (i + 1)..n {
            let z = sample.matrix[[i, j]] * root_n;
            let re = (kill(z.re, c) - mean_part) * factor_off;
            let im = (kill(z.im, c) - mean_part) * factor_off;
            let w = Complex64::new(re, im);
            out[[i, j]] = w;
            out[[j, i]] = w.conj();
        }
    }

    if delta > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(gauss_seed);
        let g = draw_unscaled(n, EntryLaw::Gaussian, &mut rng);
        let norm = 1.0 / (1.0 + delta * delta).sqrt();
        out = (&out + &g.mapv(|z| z * delta)).mapv(|z| z * norm);
    }

    out.mapv_inplace(|z| z / root_n);
    Ok(WignerSample {
        n,
        matrix: out,
        seed: sample.seed,
        law: sample.law,
        preprocessing: Some(TruncationRecord {
            c,
            delta,
            gauss_seed,
        }),
    })
}

/// Recipe for a deterministic Hermitian matrix family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeterministicKind {
    /// Diagonal matrix repeating the given value pattern until length n.
    DiagSpec { values: Vec<f64> },
    /// Orthogonal projection of rank round(rank_fraction * n): that many leading
    /// diagonal ones, zeros elsewhere.
    Projection { rank_fraction: f64 },
    /// Real symmetric Toeplitz band: entry (i, j) is symbol_coeffs[|i - j|] where
    /// defined and 0 beyond, so the symbol is c0 + 2 sum_k ck cos(k theta).
    Toeplitz { symbol_coeffs: Vec<f64> },
    /// Load from the interleaved re,im CSV format; must be Hermitian and n x n.
    FromFile { path: String },
}

/// Build one matrix of a deterministic family at size n.
pub fn make_deterministic(kind: &DeterministicKind, n: usize) -> Result<CMat> {
    if n == 0 {
        return Err(Error::Parameter("matrix size must be at least 1".into()));
    }
    match kind {
        DeterministicKind::DiagSpec { values } => {
            if values.is_empty() {
                return Err(Error::Parameter("diag_spec needs at least one value".into()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("diag_spec values must be finite".into()));
            }
            let mut m = CMat::zeros((n, n));
            for i in 0..n {
                m[[i, i]] = Complex64::new(values[i % values.len()], 0.0);
            }
            Ok(m)
        }
        DeterministicKind::Projection { rank_fraction } => {
            if !rank_fraction.is_finite() || !(0.0..=1.0).contains(rank_fraction) {
                return Err(Error::Parameter(format!(
                    "rank fraction must lie in [0, 1], got {}",
                    rank_fraction
                )));
            }
            let rank = ((rank_fraction * n as f64).round() as usize).min(n);
            let mut m = CMat::zeros((n, n));
            for i in 0..rank {
                m[[i, i]] = Complex64::new(1.0, 0.0);
            }
            Ok(m)
        }
        DeterministicKind::Toeplitz { symbol_coeffs } => {
            if symbol_coeffs.is_empty() {
                return Err(Error::Parameter(
                    "toeplitz needs at least one symbol coefficient".into(),
                ));
            }
            if symbol_coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(
                    "toeplitz symbol coefficients must be finite".into(),
                ));
            }
            let mut m = CMat::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let k = i.abs_diff(j);
                    if k < symbol_coeffs.len() {
                        m[[i, j]] = Complex64::new(symbol_coeffs[k], 0.0);
                    }
                }
            }
            Ok(m)
        }
        DeterministicKind::FromFile { path } => {
            let file = std::fs::File::open(path)?;
            let m = read_matrix_csv(file)?;
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Size(format!(
                    "matrix in {} is {}x{}, expected {}x{}",
                    path,
                    m.nrows(),
                    m.ncols(),
                    n,
                    n
                )));
            }
            let dev = hermitian_deviation(&m);
            if dev > HERMITIAN_RTOL {
                return Err(Error::NotHermitian {
                    deviation: dev,
                    tolerance: HERMITIAN_RTOL,
                });
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Parameter(format!(
                    "matrix in {} has non-finite entries",
                    path
                )));
            }
            Ok(m)
        }
    }
}

/// Ascending eigenvalues of p evaluated at sampled and deterministic matrices.
///
/// Generators are bound in order: x_k to `wigners[k-1]`, a_k to `dets[k-1]`. The
/// polynomial must be formally self-adjoint; the evaluated matrix is checked to be
/// Hermitian up to relative roundoff before symmetrization and the eigensolve.
pub fn empirical_spectrum(
    p: &NCPolynomial,
    wigners: &[WignerSample],
    dets: &[CMat],
) -> Result<Vec<f64>> {
    if !p.is_selfadjoint() {
        return Err(Error::Contract(
            "empirical spectra are defined for self-adjoint polynomials only".into(),
        ));
    }
    if p.arity() != wigners.len() + dets.len() {
        return Err(Error::Size(format!(
            "polynomial has arity {} but {} sampled and {} deterministic matrices were given",
            p.arity(),
            wigners.len(),
            dets.len()
        )));
    }
    let n = wigners
        .first()
        .map(|w| w.n)
        .or_else(|| dets.first().map(|d| d.nrows()));
    let n = match n {
        Some(n) => n,
        None => {
            return Err(Error::Size(
                "need at least one matrix to evaluate a spectrum".into(),
            ))
        }
    };
    for w in wigners {
        if w.n != n {
            return Err(Error::Size(format!(
                "sampled matrices must share one size, got {} and {}",
                n, w.n
            )));
        }
    }
    for d in dets {
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::Size(format!(
                "deterministic matrix is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                n,
                n
            )));
        }
    }
    let mut args: Vec<CMat> = Vec::with_capacity(p.arity());
    args.extend(wigners.iter().map(|w| w.matrix.clone()));
    args.extend(dets.iter().cloned());
    let value = p.evaluate(&args)?;
    hermitian_eigvals(&value)
}
