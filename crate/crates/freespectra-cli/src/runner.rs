//! Command dispatch: one validated [`RunConfig`] in, artifacts in the output
//! directory out.
//!
//! Every command writes `report.json` (command, effective config, results, verdict)
//! and `effective.toml` (the config echoed as TOML), plus its own plot data:
//! `density.csv`, `support.json`, `spectra.csv`, `trials.csv` or the pencil files.
//! Reports contain no clocks or machine state, so a rerun of the same config
//! produces byte-identical artifacts.

use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use freespectra::harness::{
    check_gap, check_spectrum_inclusion, check_strong_convergence, compare_density,
    write_trial_csv, CompareDensityExperiment, GapExperiment, Report,
    StrongConvergenceExperiment, WignerConfig,
};
use freespectra::linearize::{linearize, LinearizationJson};
use freespectra::matops::write_matrix_csv;
use freespectra::ncalg::{parse_polynomial, NCPolynomial};
use freespectra::rmt::{empirical_spectrum, make_deterministic, trial_seed};
use freespectra::spectra::{
    linearized_model, norm_of_polynomial, polynomial_distribution, polynomial_norm_bound,
    range_grid, support_of_polynomial, Interval, SupportSet,
};
use freespectra::CMat;

use crate::config::{Command, RunConfig};
use crate::{CliError, Result};

/// What the binary needs from a finished run: the verdict for the exit code and
/// the one-line summary for stdout.
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

/// Execute the config's command, writing all artifacts under `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let p = parse_polynomial(&cfg.polynomial, cfg.r, cfg.t)?;
    let (results, pass, detail) = match cfg.command {
        Command::Linearize => cmd_linearize(&p, out_dir)?,
        Command::Density => cmd_density(cfg, &p, out_dir)?,
        Command::Support => cmd_support(cfg, &p, out_dir)?,
        Command::Norm => cmd_norm(cfg, &p)?,
        Command::Simulate => cmd_simulate(cfg, &p, out_dir)?,
        Command::VerifyInclusion => cmd_verify_inclusion(cfg, &p, out_dir)?,
        Command::VerifyGap => cmd_verify_gap(cfg, &p, out_dir)?,
        Command::VerifyNorm => cmd_verify_norm(cfg, out_dir)?,
        Command::Compare => cmd_compare(cfg, out_dir)?,
    };
    write_report(out_dir, cfg, results, pass)?;
    let summary = format!(
        "{}: {} ({}) -> {}",
        cfg.command,
        if pass { "PASS" } else { "FAIL" },
        detail,
        out_dir.join("report.json").display()
    );
    Ok(Outcome { pass, summary })
}

type CommandResult = Result<(Value, bool, String)>;

/// The report envelope. Field order is the file's key order.
#[derive(Serialize)]
struct ReportDoc<'a> {
    command: String,
    config: &'a RunConfig,
    results: Value,
    pass: bool,
}

fn write_report(out_dir: &Path, cfg: &RunConfig, results: Value, pass: bool) -> Result<()> {
    let doc = ReportDoc {
        command: cfg.command.to_string(),
        config: cfg,
        results,
        pass,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(freespectra::Error::from)?;
    text.push('\n');
    write_text(&out_dir.join("report.json"), &text)?;
    write_text(&out_dir.join("effective.toml"), &cfg.to_toml()?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn build_dets(cfg: &RunConfig, n: usize) -> Result<Vec<CMat>> {
    Ok(cfg
        .dets
        .iter()
        .map(|k| make_deterministic(k, n))
        .collect::<freespectra::Result<_>>()?)
}

/// All semicircular generators share the configured law and draw from streams
/// derived from the run seed, exactly as the harness documents.
fn wigner_config(cfg: &RunConfig) -> WignerConfig {
    WignerConfig {
        laws: vec![cfg.law; cfg.r],
        base_seed: cfg.seed,
        truncation: cfg.truncation,
    }
}

/// Block of random streams for one entry of `ns`, so sizes that run as separate
/// experiments stay independent of each other. Stream indices within a block are
/// far below 2^40, so blocks cannot collide.
fn size_block_seed(seed: u64, size_index: usize) -> u64 {
    trial_seed(seed, (size_index as u64) << 40)
}

fn cmd_linearize(p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let lin = linearize(p)?;
    let doc = LinearizationJson::from(&lin);
    let mut text = serde_json::to_string_pretty(&doc).map_err(freespectra::Error::from)?;
    text.push('\n');
    write_text(&out_dir.join("pencil.json"), &text)?;

    let mut files = vec!["pencil.json".to_string(), "pencil_gamma.csv".to_string()];
    write_matrix_csv(&lin.gamma, create(&out_dir.join("pencil_gamma.csv"))?)?;
    for (j, zeta) in lin.zetas.iter().enumerate() {
        let name = format!("pencil_zeta_{:02}.csv", j + 1);
        write_matrix_csv(zeta, create(&out_dir.join(&name))?)?;
        files.push(name);
    }
    let results = json!({
        "m": lin.m,
        "source_degree": lin.source_degree,
        "coefficient_count": lin.zetas.len(),
        "files": files,
    });
    let detail = format!("pencil size {}, {} coefficients", lin.m, lin.zetas.len());
    Ok((results, true, detail))
}

fn cmd_density(cfg: &RunConfig, p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let dets = build_dets(cfg, cfg.effective_model_n())?;
    let bound = polynomial_norm_bound(p, &dets)?;
    let step = cfg.effective_grid_step();
    let grid = range_grid(-(bound + 1.0), bound + 1.0, step)?;
    let density = polynomial_distribution(p, &dets, &grid, cfg.eps, &cfg.solver)?;
    density.write_csv(create(&out_dir.join("density.csv"))?)?;
    let pass = density.failed_points() == 0;
    let results = json!({
        "points": density.len(),
        "mass": density.mass,
        "failed_points": density.failed_points(),
        "eps": density.eps,
        "grid_step": step,
        "csv": "density.csv",
    });
    let detail = format!(
        "{} points, mass {:.4}, {} unconverged",
        density.len(),
        density.mass,
        density.failed_points()
    );
    Ok((results, pass, detail))
}

fn cmd_support(cfg: &RunConfig, p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let dets = build_dets(cfg, cfg.effective_model_n())?;
    let support = support_of_polynomial(p, &dets, cfg.eps, cfg.threshold, &cfg.solver)?;
    write_text(&out_dir.join("support.json"), &(support.to_json()? + "\n"))?;
    let results = json!({
        "support": support,
        "radius": support.max_abs(),
        "json": "support.json",
    });
    let detail = format!(
        "{} intervals, {} atoms, radius {}",
        support.intervals.len(),
        support.atoms.len(),
        support
            .max_abs()
            .map_or("none".to_string(), |r| format!("{r:.4}")),
    );
    Ok((results, true, detail))
}

fn cmd_norm(cfg: &RunConfig, p: &NCPolynomial) -> CommandResult {
    let dets = build_dets(cfg, cfg.effective_model_n())?;
    let norm = norm_of_polynomial(p, &dets, cfg.norm_tol, &cfg.solver)?;
    let results = json!({
        "norm": norm,
        "norm_tol": cfg.norm_tol,
        "model_n": cfg.effective_model_n(),
    });
    Ok((results, true, format!("norm {norm:.6}")))
}

fn cmd_simulate(cfg: &RunConfig, p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let wigner = wigner_config(cfg);
    let csv_path = out_dir.join("spectra.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    w.write_record(["n", "trial", "eigenvalue"])
        .map_err(freespectra::Error::from)?;
    let mut rows = Vec::new();
    for (ni, &n) in cfg.ns.iter().enumerate() {
        let dets = build_dets(cfg, n)?;
        for trial in 0..cfg.trials {
            // Global trial index, numbered across sizes exactly as in the harness.
            let k = ni as u64 * cfg.trials + trial;
            let samples = wigner.sample_trial(n, k)?;
            let eigs = empirical_spectrum(p, &samples, &dets)?;
            for x in &eigs {
                w.write_record([n.to_string(), trial.to_string(), format!("{x:.12e}")])
                    .map_err(freespectra::Error::from)?;
            }
            rows.push(json!({
                "n": n,
                "trial": trial,
                "count": eigs.len(),
                "min": eigs.first(),
                "max": eigs.last(),
            }));
        }
    }
    w.flush().map_err(|source| CliError::Io {
        path: csv_path.clone(),
        source,
    })?;
    let results = json!({ "spectra": rows, "csv": "spectra.csv" });
    let detail = format!("{} spectra", rows.len());
    Ok((results, true, detail))
}

fn cmd_verify_inclusion(cfg: &RunConfig, p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let mut reports: Vec<Report> = Vec::new();
    for (ni, &n) in cfg.ns.iter().enumerate() {
        let dets = build_dets(cfg, n)?;
        let model = linearized_model(p, &dets)?;
        let wigner = WignerConfig {
            base_seed: size_block_seed(cfg.seed, ni),
            ..wigner_config(cfg)
        };
        reports.push(check_spectrum_inclusion(
            &model,
            &wigner,
            n,
            cfg.margin,
            cfg.trials,
            &cfg.solver,
        )?);
    }
    let pooled: Vec<_> = reports
        .iter()
        .flat_map(|r| r.trials.iter().cloned())
        .collect();
    write_trial_csv(create(&out_dir.join("trials.csv"))?, &pooled)?;
    let pass = reports.iter().all(|r| r.pass);
    let violations: usize = pooled.iter().filter_map(|t| t.violations).sum();
    let results = json!({ "margin": cfg.margin, "reports": reports, "csv": "trials.csv" });
    let detail = format!(
        "{} violations over {} sizes x {} trials, margin {}",
        violations,
        cfg.ns.len(),
        cfg.trials,
        cfg.margin
    );
    Ok((results, pass, detail))
}

/// Widest gap between consecutive predicted support components, shrunk by `delta`
/// on each side.
fn derive_gap(predicted: &SupportSet, delta: f64) -> Result<Interval> {
    let raw = predicted
        .intervals
        .windows(2)
        .map(|w| Interval {
            lo: w[0].hi,
            hi: w[1].lo,
        })
        .max_by(|a, b| a.width().total_cmp(&b.width()));
    let Some(raw) = raw else {
        return Err(CliError::Config(
            "predicted support has a single component, so there is no gap to test; set `gap` explicitly".into(),
        ));
    };
    let gap = Interval {
        lo: raw.lo + delta,
        hi: raw.hi - delta,
    };
    if !(gap.width() > 0.0) {
        return Err(CliError::Config(format!(
            "widest predicted gap [{:.6}, {:.6}] is narrower than 2 * delta = {}; set `gap` explicitly or reduce `delta`",
            raw.lo,
            raw.hi,
            2.0 * delta
        )));
    }
    Ok(gap)
}

fn cmd_verify_gap(cfg: &RunConfig, p: &NCPolynomial, out_dir: &Path) -> CommandResult {
    let model_dets = build_dets(cfg, cfg.effective_model_n())?;
    let predicted = support_of_polynomial(p, &model_dets, cfg.eps, cfg.threshold, &cfg.solver)?;
    let gap = match cfg.gap {
        Some([lo, hi]) => Interval { lo, hi },
        None => derive_gap(&predicted, cfg.delta)?,
    };
    let exp = GapExperiment {
        polynomial: cfg.polynomial.clone(),
        r: cfg.r,
        t: cfg.t,
        dets: cfg.dets.clone(),
        wigner: wigner_config(cfg),
        ns: cfg.ns.clone(),
        trials: cfg.trials,
        delta: cfg.delta,
        gap,
        predicted,
    };
    let report = check_gap(&exp, &cfg.solver)?;
    report.write_csv(create(&out_dir.join("trials.csv"))?)?;
    let pass = report.pass;
    let violations: usize = report.trials.iter().filter_map(|t| t.violations).sum();
    let detail = format!(
        "{} eigenvalues in [{:.4}, {:.4}] over {} trials",
        violations,
        gap.lo,
        gap.hi,
        report.trials.len()
    );
    let results = serde_json::to_value(&report).map_err(freespectra::Error::from)?;
    Ok((results, pass, detail))
}

fn cmd_verify_norm(cfg: &RunConfig, out_dir: &Path) -> CommandResult {
    let exp = StrongConvergenceExperiment {
        polynomial: cfg.polynomial.clone(),
        r: cfg.r,
        t: cfg.t,
        dets: cfg.dets.clone(),
        wigner: wigner_config(cfg),
        ns: cfg.ns.clone(),
        trials: cfg.trials,
        model_n: cfg.effective_model_n(),
        norm_tol: cfg.norm_tol,
        rel_tol: cfg.rel_tol,
        require_monotone: cfg.require_monotone,
    };
    let report = check_strong_convergence(&exp, &cfg.solver)?;
    report.write_csv(create(&out_dir.join("trials.csv"))?)?;
    let pass = report.pass;
    let reference = report.summary["reference_norm"].as_f64().unwrap_or(f64::NAN);
    let final_rel = report.summary["per_size"]
        .as_array()
        .and_then(|a| a.last())
        .and_then(|v| v["rel_err"].as_f64());
    let detail = format!(
        "reference norm {:.4}, final rel err {}",
        reference,
        final_rel.map_or("n/a".to_string(), |r| format!("{r:.4}")),
    );
    let results = serde_json::to_value(&report).map_err(freespectra::Error::from)?;
    Ok((results, pass, detail))
}

fn cmd_compare(cfg: &RunConfig, out_dir: &Path) -> CommandResult {
    let exp = CompareDensityExperiment {
        polynomial: cfg.polynomial.clone(),
        r: cfg.r,
        t: cfg.t,
        dets: cfg.dets.clone(),
        wigner: wigner_config(cfg),
        n: cfg.ns[0],
        trials: cfg.trials,
        eps: cfg.eps,
        grid_step: cfg.effective_grid_step(),
        ks_tol: cfg.ks_tol,
        moment_tol: cfg.moment_tol,
    };
    let report = compare_density(&exp, &cfg.solver)?;
    report.write_csv(create(&out_dir.join("trials.csv"))?)?;
    let pass = report.pass;
    let ks = report.summary["ks_distance"].as_f64().unwrap_or(f64::NAN);
    let detail = format!("KS distance {:.4} (tol {})", ks, cfg.ks_tol);
    let results = serde_json::to_value(&report).map_err(freespectra::Error::from)?;
    Ok((results, pass, detail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn run_in_tempdir(toml_text: &str) -> (tempfile::TempDir, Outcome) {
        let cfg = parse_config(toml_text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run(&cfg, dir.path()).unwrap();
        (dir, outcome)
    }

    #[test]
    fn linearize_writes_pencil_files() {
        let (dir, outcome) = run_in_tempdir(
            r#"
command = "linearize"
polynomial = "x1*a1 + a1*x1 + x1*x1"
r = 1
t = 1
seed = 1

[[dets]]
kind = "diag_spec"
values = [1.0, -1.0]
"#,
        );
        assert!(outcome.pass);
        let report: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["command"], "linearize");
        assert_eq!(report["pass"], true);
        let m = report["results"]["m"].as_u64().unwrap();
        assert!(m >= 3);
        for file in report["results"]["files"].as_array().unwrap() {
            assert!(dir.path().join(file.as_str().unwrap()).exists());
        }
        // The echoed config re-parses to the exact effective RunConfig.
        let echoed: RunConfig = serde_json::from_value(report["config"].clone()).unwrap();
        let from_toml =
            parse_config(&fs::read_to_string(dir.path().join("effective.toml")).unwrap()).unwrap();
        assert_eq!(echoed, from_toml);
    }

    #[test]
    fn density_report_and_csv_are_deterministic() {
        let config = r#"
command = "density"
polynomial = "x1"
r = 1
t = 0
seed = 9
eps = 0.05
grid_step = 0.05
"#;
        let (dir_a, outcome_a) = run_in_tempdir(config);
        let (dir_b, _) = run_in_tempdir(config);
        assert!(outcome_a.pass);
        for file in ["report.json", "density.csv", "effective.toml"] {
            let a = fs::read(dir_a.path().join(file)).unwrap();
            let b = fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn norm_of_deterministic_polynomial_is_exact() {
        let (dir, outcome) = run_in_tempdir(
            r#"
command = "norm"
polynomial = "a1 + a1"
r = 0
t = 1
seed = 3
ns = [8]

[[dets]]
kind = "diag_spec"
values = [1.0, -0.25]
"#,
        );
        assert!(outcome.pass);
        let report: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        let norm = report["results"]["norm"].as_f64().unwrap();
        assert!((norm - 2.0).abs() <= 1e-3, "norm {norm}");
    }

    #[test]
    fn simulate_writes_one_row_per_eigenvalue() {
        let (dir, outcome) = run_in_tempdir(
            r#"
command = "simulate"
polynomial = "x1"
r = 1
t = 0
seed = 5
ns = [8, 16]
trials = 2
"#,
        );
        assert!(outcome.pass);
        let text = fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
        // Header plus (8 + 8 + 16 + 16) eigenvalue rows.
        assert_eq!(text.lines().count(), 1 + 48);
        assert!(text.starts_with("n,trial,eigenvalue"));
    }

    #[test]
    fn derive_gap_picks_the_widest_gap() {
        let predicted = SupportSet {
            intervals: vec![
                Interval { lo: -3.0, hi: -1.0 },
                Interval { lo: 0.0, hi: 0.5 },
                Interval { lo: 2.5, hi: 4.0 },
            ],
            atoms: vec![],
            threshold: 1e-3,
            eps: 1e-3,
        };
        let gap = derive_gap(&predicted, 0.1).unwrap();
        assert_eq!((gap.lo, gap.hi), (0.6, 2.4));

        let single = SupportSet {
            intervals: vec![Interval { lo: -2.0, hi: 2.0 }],
            ..predicted.clone()
        };
        let err = derive_gap(&single, 0.1).unwrap_err().to_string();
        assert!(err.contains("single component"), "{err}");

        let err = derive_gap(&predicted, 1.0).unwrap_err().to_string();
        assert!(err.contains("narrower"), "{err}");
    }
}
