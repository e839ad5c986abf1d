//! Run configuration: a TOML document describing one command invocation.
//!
//! Parsing is strict. Unknown keys, duplicate keys, missing required keys and type
//! mismatches are all rejected with the line and column the TOML parser reports.
//! Every optional key has its default filled in during parsing, so the config a
//! report echoes back is complete: re-parsing it reproduces the run exactly.
//!
//! The full key reference with examples lives in `CONFIG.md` next to this crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use freespectra::harness::TruncationSpec;
use freespectra::ncalg::parse_polynomial;
use freespectra::rmt::{DeterministicKind, EntryLaw};
use freespectra::subord::SolverOptions;

use crate::{CliError, Result};

/// Central table of defaults. Everything here is echoed back in reports, so a run
/// never depends on an implicit value that is not written down in its artifacts.
pub mod defaults {
    /// Trials per size for simulation and verification commands.
    pub const TRIALS: u64 = 20;
    /// Matrix sizes when `ns` is not given.
    pub const NS: &[usize] = &[512];
    /// Spectral smoothing height for densities and support scans.
    pub const EPS: f64 = 1e-3;
    /// Density level separating support from gap in support scans.
    pub const THRESHOLD: f64 = 1e-3;
    /// Fattening of the predicted support in verify-inclusion.
    pub const MARGIN: f64 = 0.3;
    /// Safety margin for verify-gap intervals.
    pub const DELTA: f64 = 0.1;
    /// Absolute tolerance for the predicted operator norm in verify-norm.
    pub const NORM_TOL: f64 = 1e-3;
    /// Accepted relative gap between simulated and predicted norms in verify-norm.
    pub const REL_TOL: f64 = 0.07;
    /// Kolmogorov-Smirnov tolerance in compare.
    pub const KS_TOL: f64 = 0.02;
    /// Relative tolerance on raw moments 1..4 in compare.
    pub const MOMENT_TOL: f64 = 0.02;
    /// Output directory when neither the config nor --out names one.
    pub const OUT_DIR: &str = "out";
    // grid_step defaults to eps / 2 and model_n to max(ns); both depend on other
    // keys, so they are materialized at the end of parse_config rather than here.
    // Solver defaults are SolverOptions::default(): tol 1e-11, max_iter 2000,
    // damping_min 0.05, continuation_start 1.0.
}

fn d_trials() -> u64 {
    defaults::TRIALS
}
fn d_ns() -> Vec<usize> {
    defaults::NS.to_vec()
}
fn d_eps() -> f64 {
    defaults::EPS
}
fn d_threshold() -> f64 {
    defaults::THRESHOLD
}
fn d_margin() -> f64 {
    defaults::MARGIN
}
fn d_delta() -> f64 {
    defaults::DELTA
}
fn d_norm_tol() -> f64 {
    defaults::NORM_TOL
}
fn d_rel_tol() -> f64 {
    defaults::REL_TOL
}
fn d_ks_tol() -> f64 {
    defaults::KS_TOL
}
fn d_moment_tol() -> f64 {
    defaults::MOMENT_TOL
}
fn d_out_dir() -> String {
    defaults::OUT_DIR.to_string()
}

/// What a run does. Kebab-case in configs and summaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write the self-adjoint linearization pencil of the polynomial.
    Linearize,
    /// Predicted spectral density of the polynomial on a grid.
    Density,
    /// Predicted support set of the polynomial's distribution.
    Support,
    /// Predicted operator norm of the polynomial.
    Norm,
    /// Draw Wigner samples and write the empirical spectra of the polynomial.
    Simulate,
    /// Check that simulated block-operator spectra stay in the fattened prediction.
    VerifyInclusion,
    /// Check that a spectral gap stays free of eigenvalues.
    VerifyGap,
    /// Check that simulated norms converge to the predicted norm.
    VerifyNorm,
    /// Compare pooled empirical spectra against the predicted density.
    Compare,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Command::Linearize => "linearize",
            Command::Density => "density",
            Command::Support => "support",
            Command::Norm => "norm",
            Command::Simulate => "simulate",
            Command::VerifyInclusion => "verify-inclusion",
            Command::VerifyGap => "verify-gap",
            Command::VerifyNorm => "verify-norm",
            Command::Compare => "compare",
        };
        f.write_str(name)
    }
}

/// One fully validated run: command, model, experiment sizes, seeds and tolerances.
///
/// `seed` has no default on purpose: a config that does not pin its randomness is
/// rejected, so two runs of the same file always see the same matrices. Scalar keys
/// sit before the nested tables so the struct serializes to valid TOML as-is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Polynomial in x1..x<r> (semicircular) and a1..a<t> (deterministic).
    pub polynomial: String,
    /// Number of semicircular generators the polynomial may reference.
    pub r: usize,
    /// Number of deterministic generators; `dets` must give one recipe each.
    pub t: usize,
    /// Base seed for every random stream of the run. Required.
    pub seed: u64,
    #[serde(default = "d_trials")]
    pub trials: u64,
    /// Simulated matrix sizes, in the order they run.
    #[serde(default = "d_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_margin")]
    pub margin: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Explicit gap interval for verify-gap. When absent the widest gap between
    /// consecutive predicted support components, shrunk by `delta`, is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<[f64; 2]>,
    #[serde(default = "d_norm_tol")]
    pub norm_tol: f64,
    #[serde(default = "d_rel_tol")]
    pub rel_tol: f64,
    /// verify-norm: also require the median simulated norm to be nonincreasing in n.
    #[serde(default)]
    pub require_monotone: bool,
    #[serde(default = "d_ks_tol")]
    pub ks_tol: f64,
    #[serde(default = "d_moment_tol")]
    pub moment_tol: f64,
    /// Grid spacing for density and compare. Defaults to eps / 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    /// Size at which deterministic matrices are built for predictions. Defaults to
    /// the largest entry of ns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_n: Option<usize>,
    /// Directory for reports and plot data; the --out flag overrides it.
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
    /// Entry law shared by all semicircular generators.
    #[serde(default)]
    pub law: EntryLaw,
    /// Optional truncation-convolution preprocessing applied to every sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Recipes for the deterministic generators, one per a-generator.
    #[serde(default)]
    pub dets: Vec<DeterministicKind>,
}

impl RunConfig {
    /// The config as a TOML document, defaults and all. Written to the output
    /// directory so every run carries its exact effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// `grid_step`, falling back to its documented default eps / 2. parse_config
    /// materializes this, so the fallback only fires on hand-built configs.
    pub fn effective_grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(self.eps / 2.0)
    }

    /// `model_n`, falling back to its documented default max(ns).
    pub fn effective_model_n(&self) -> usize {
        self.model_n
            .or_else(|| self.ns.iter().copied().max())
            .unwrap_or(defaults::NS[0])
    }
}

/// Find the 1-based line and the column where the value of a top-level `key = ...`
/// assignment starts (skipping an opening quote), so errors inside a value can point
/// into the config text. Returns None when the key is not written in that form.
fn locate_value(text: &str, key: &str) -> Option<(usize, usize)> {
    for (li, line) in text.lines().enumerate() {
        let stripped = line.trim_start();
        let Some(after_key) = stripped.strip_prefix(key) else {
            continue;
        };
        let after_ws = after_key.trim_start();
        let Some(after_eq) = after_ws.strip_prefix('=') else {
            continue;
        };
        let value = after_eq.trim_start();
        let mut col = line.len() - value.len();
        if value.starts_with('"') || value.starts_with('\'') {
            col += 1;
        }
        return Some((li + 1, col + 1));
    }
    None
}

fn config_err(msg: impl fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

/// Positive and finite, or a config error naming the key.
fn check_positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(format!("`{key}` must be positive and finite, got {v}")))
    }
}

/// Parse and validate a TOML run configuration.
///
/// On success every defaultable key is filled in, the polynomial is known to parse
/// against the declared generators, and numeric keys are sane. TOML-level problems
/// (unknown, duplicate, missing or mistyped keys) keep the parser's line/column
/// message; polynomial errors are mapped back to the config text where possible.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(config_err)?;

    check_positive("eps", cfg.eps)?;
    check_positive("threshold", cfg.threshold)?;
    check_positive("margin", cfg.margin)?;
    check_positive("norm_tol", cfg.norm_tol)?;
    check_positive("rel_tol", cfg.rel_tol)?;
    check_positive("ks_tol", cfg.ks_tol)?;
    check_positive("moment_tol", cfg.moment_tol)?;
    if !cfg.delta.is_finite() || cfg.delta < 0.0 {
        return Err(config_err(format!(
            "`delta` must be finite and >= 0, got {}",
            cfg.delta
        )));
    }
    if cfg.trials == 0 {
        return Err(config_err("`trials` must be at least 1"));
    }
    if cfg.ns.is_empty() || cfg.ns.contains(&0) {
        return Err(config_err("`ns` must list at least one positive size"));
    }
    if let Some(step) = cfg.grid_step {
        check_positive("grid_step", step)?;
    }
    if cfg.model_n == Some(0) {
        return Err(config_err("`model_n` must be positive"));
    }
    if cfg.out_dir.is_empty() {
        return Err(config_err("`out_dir` must not be empty"));
    }
    if let Some([lo, hi]) = cfg.gap {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(config_err(format!(
                "`gap` must be a finite interval [lo, hi] with lo < hi, got [{lo}, {hi}]"
            )));
        }
    }
    cfg.law.validate().map_err(config_err)?;
    if let Some(tr) = &cfg.truncation {
        if !tr.c.is_finite() || tr.c <= 0.0 || !tr.delta.is_finite() || tr.delta < 0.0 {
            return Err(config_err(format!(
                "`truncation` needs c > 0 and delta >= 0, got c = {}, delta = {}",
                tr.c, tr.delta
            )));
        }
    }
    if cfg.dets.len() != cfg.t {
        return Err(config_err(format!(
            "config declares t = {} deterministic generators but gives {} [[dets]] recipes",
            cfg.t,
            cfg.dets.len()
        )));
    }
    if cfg.command == Command::Compare && cfg.ns.len() != 1 {
        return Err(config_err(format!(
            "compare runs at a single size; `ns` lists {}",
            cfg.ns.len()
        )));
    }

    if let Err(e) = parse_polynomial(&cfg.polynomial, cfg.r, cfg.t) {
        let located = match (&e, locate_value(text, "polynomial")) {
            (freespectra::Error::Parse { position, .. }, Some((line, col))) => {
                Some((line, col + position))
            }
            (_, Some((line, col))) => Some((line, col)),
            (_, None) => None,
        };
        return Err(match located {
            Some((line, col)) => config_err(format!(
                "`polynomial` at line {line}, column {col}: {e}"
            )),
            None => config_err(format!("`polynomial`: {e}")),
        });
    }

    // Materialize the cross-key defaults so the echo-back is complete.
    if cfg.grid_step.is_none() {
        cfg.grid_step = Some(cfg.eps / 2.0);
    }
    if cfg.model_n.is_none() {
        cfg.model_n = Some(*cfg.ns.iter().max().expect("ns checked nonempty"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
command = "density"
polynomial = "x1"
r = 1
t = 0
seed = 1
"#;

    #[test]
    fn minimal_config_is_valid_with_defaults_filled() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.command, Command::Density);
        assert_eq!(cfg.polynomial, "x1");
        assert_eq!((cfg.r, cfg.t, cfg.seed), (1, 0, 1));
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.ns, vec![512]);
        assert_eq!(cfg.eps, 1e-3);
        assert_eq!(cfg.threshold, 1e-3);
        assert_eq!(cfg.margin, 0.3);
        assert_eq!(cfg.delta, 0.1);
        assert_eq!(cfg.gap, None);
        assert_eq!(cfg.grid_step, Some(5e-4));
        assert_eq!(cfg.model_n, Some(512));
        assert_eq!(cfg.law, EntryLaw::Gaussian);
        assert_eq!(cfg.truncation, None);
        assert_eq!(cfg.solver, SolverOptions::default());
        assert_eq!(cfg.out_dir, "out");
        assert!(cfg.dets.is_empty());
        assert!(!cfg.require_monotone);
    }

    #[test]
    fn echo_back_reparses_to_the_same_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        let echoed = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), cfg);

        // Same through JSON, which is how reports embed the config.
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn echo_back_covers_every_section() {
        let full = r#"
command = "verify-gap"
polynomial = "x1 + a1"
r = 1
t = 1
seed = 42
trials = 5
ns = [64, 128]
eps = 0.005
gap = [2.5, 3.0]
grid_step = 0.01
model_n = 128

[law]
kind = "student_t"
df = 5.0

[truncation]
c = 25.0
delta = 0.5

[solver]
tol = 1e-9

[[dets]]
kind = "diag_spec"
values = [1.0, -1.0]
"#;
        let cfg = parse_config(full).unwrap();
        assert_eq!(cfg.law, EntryLaw::StudentT { df: 5.0 });
        assert_eq!(
            cfg.truncation,
            Some(TruncationSpec { c: 25.0, delta: 0.5 })
        );
        assert_eq!(cfg.solver.tol, 1e-9);
        assert_eq!(cfg.solver.max_iter, SolverOptions::default().max_iter);
        assert_eq!(cfg.gap, Some([2.5, 3.0]));
        let echoed = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), cfg);
    }

    #[test]
    fn undeclared_generator_is_rejected_with_location() {
        let bad = MINIMAL.replace("\"x1\"", "\"x3\"").replace("r = 1", "r = 2");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("polynomial"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("x3") || err.contains("generator"), "{err}");
    }

    #[test]
    fn malformed_polynomial_is_rejected_with_location() {
        let bad = MINIMAL.replace("\"x1\"", "\"x1 + \"");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_key_is_named() {
        let dup = format!("{MINIMAL}seed = 2\n");
        let err = parse_config(&dup).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let bad = format!("{MINIMAL}grid_stepp = 0.1\n");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("grid_stepp"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_seed_is_rejected() {
        let bad = MINIMAL.replace("seed = 1\n", "");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn dets_must_match_t() {
        let bad = MINIMAL
            .replace("\"x1\"", "\"x1 + a1\"")
            .replace("t = 0", "t = 1");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("dets"), "{err}");
    }

    #[test]
    fn compare_requires_a_single_size() {
        let bad = format!(
            "{}ns = [64, 128]\n",
            MINIMAL.replace("\"density\"", "\"compare\"")
        );
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("single size"), "{err}");
    }

    #[test]
    fn bad_numbers_are_rejected() {
        for (key, line) in [
            ("eps", "eps = 0.0"),
            ("trials", "trials = 0"),
            ("ns", "ns = []"),
            ("grid_step", "grid_step = -1.0"),
            ("gap", "gap = [3.0, 2.5]"),
        ] {
            let bad = format!("{MINIMAL}{line}\n");
            let err = parse_config(&bad).unwrap_err().to_string();
            assert!(err.contains(key), "{key}: {err}");
        }
    }
}
