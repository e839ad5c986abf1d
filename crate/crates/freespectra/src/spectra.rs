//! Scalar spectral output: densities by Stieltjes inversion of the matrix-valued
//! transform, support detection with bisection-refined endpoints, distributions of
//! self-adjoint polynomials through the linearization corner, and operator norms.
//!
//! Density values are ρ(x) = −(1/π)·Im g(x + iε), where g is the normalized trace of
//! G̃ when the target is a model's own spectral distribution, and the (1,1) entry of G̃
//! on the linearized model when the target is the distribution of a polynomial. The
//! inversion height ε controls the bias: order ε in the bulk, order √ε at band edges
//! and around point masses.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linearize::linearize;
use crate::matops::{operator_norm, scalar_matrix, HalfPlanePoint};
use crate::ncalg::NCPolynomial;
use crate::subord::{
    solve_subordination, solve_subordination_warm, ModelSpec, SolverOptions, SubordinationState,
};
use crate::{CMat, Error, Result};

/// Default inversion height ε.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Default support threshold, in density units.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Density values in [−NEG_CLIP, 0) are rounded up to zero; anything below aborts,
/// since a visibly negative density means the solver output cannot be trusted.
const NEG_CLIP: f64 = 1e-9;

/// Fixed sweep chunk length. Chunks are independent (each starts from a cold solve
/// and warm-starts internally), so results are identical for any worker-thread count.
const SWEEP_CHUNK: usize = 256;

/// Pointwise Stieltjes inversion of a scalar transform over a real grid.
///
/// `converged[i]` is false where the solver failed even after a cold restart; such
/// points carry value 0 and the grid is still returned as a partial result. `mass` is
/// the trapezoid integral of `values` over `points`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityGrid {
    pub points: Vec<f64>,
    pub eps: f64,
    pub values: Vec<f64>,
    pub converged: Vec<bool>,
    pub mass: f64,
}

impl DensityGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of grid points where the solver failed.
    pub fn failed_points(&self) -> usize {
        self.converged.iter().filter(|ok| !**ok).count()
    }

    /// CSV with header `x,density,converged`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density", "converged"])?;
        for i in 0..self.points.len() {
            w.write_record([
                self.points[i].to_string(),
                self.values[i].to_string(),
                u8::from(self.converged[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed interval [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Detected spectral support: maximal intervals where the density exceeds the
/// threshold, plus the locations where the density concentrates like a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Sorted, disjoint.
    pub intervals: Vec<Interval>,
    /// Peak locations classified as point masses, at grid resolution.
    pub atoms: Vec<f64>,
    pub threshold: f64,
    pub eps: f64,
}

impl SupportSet {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(x))
    }

    /// Largest |endpoint|, i.e. the radius of the detected spectrum.
    pub fn max_abs(&self) -> Option<f64> {
        self.intervals
            .iter()
            .flat_map(|iv| [iv.lo.abs(), iv.hi.abs()])
            .max_by(f64::total_cmp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Each interval expanded by `eps`, overlaps merged.
pub fn fatten_support(s: &SupportSet, eps: f64) -> Result<SupportSet> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!(
            "fattening width must be finite and nonnegative, got {eps}"
        )));
    }
    let fat = s
        .intervals
        .iter()
        .map(|iv| Interval {
            lo: iv.lo - eps,
            hi: iv.hi + eps,
        })
        .collect();
    Ok(SupportSet {
        intervals: merge_intervals(fat),
        atoms: s.atoms.clone(),
        threshold: s.threshold,
        eps: s.eps,
    })
}

fn merge_intervals(mut iv: Vec<Interval>) -> Vec<Interval> {
    iv.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<Interval> = Vec::with_capacity(iv.len());
    for cur in iv {
        if let Some(last) = out.last_mut() {
            if cur.lo <= last.hi {
                last.hi = last.hi.max(cur.hi);
                continue;
            }
        }
        out.push(cur);
    }
    out
}

/// Uniform grid from `lo` to `hi` (inclusive) with the given step.
pub fn range_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() || !(step > 0.0) || !step.is_finite() {
        return Err(Error::Parameter(format!(
            "invalid grid request: lo = {lo}, hi = {hi}, step = {step}"
        )));
    }
    if hi <= lo {
        return Err(Error::Parameter(format!(
            "grid upper end {hi} must exceed lower end {lo}"
        )));
    }
    let count = ((hi - lo) / step).round().max(1.0) as usize;
    Ok((0..=count).map(|i| lo + step * i as f64).collect())
}

/// Default density grid for a model: [−R−1, R+1] at step ε/2, where R is the a
/// priori spectral radius.
pub fn default_grid(model: &ModelSpec, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let r = model.norm_radius();
    range_grid(-(r + 1.0), r + 1.0, eps / 2.0)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!(
            "inversion height must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("grid contains non-finite points".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(
            "grid points must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Which scalar function of G̃ is inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarMode {
    /// Normalized trace: the distribution of the model operator itself.
    Trace,
    /// (1,1) entry: the distribution of the polynomial a linearized model encodes.
    Corner,
}

fn lambda_at(mode: ScalarMode, x: f64, eps: f64, m: usize) -> Result<HalfPlanePoint> {
    match mode {
        ScalarMode::Trace => HalfPlanePoint::from_scalar(Complex64::new(x, eps), m),
        ScalarMode::Corner => {
            // x only enters the (1,1) direction; every diagonal direction is lifted
            // by iε so the point stays inside the matrix half-plane.
            let mut mat = scalar_matrix(Complex64::new(0.0, eps), m);
            mat[[0, 0]] += Complex64::new(x, 0.0);
            HalfPlanePoint::new(mat)
        }
    }
}

fn scalar_value(mode: ScalarMode, state: &SubordinationState) -> f64 {
    let m = state.gtilde.nrows();
    let g = match mode {
        ScalarMode::Trace => {
            (0..m).map(|i| state.gtilde[[i, i]]).sum::<Complex64>() / m as f64
        }
        ScalarMode::Corner => state.gtilde[[0, 0]],
    };
    -g.im / PI
}

fn clip_density(v: f64, x: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEG_CLIP {
        Ok(0.0)
    } else {
        Err(Error::NegativeDensity { value: v, x })
    }
}

/// Errors that mean "the solver gave up at this point", as opposed to a misuse of
/// the interface; these are masked per point instead of aborting a sweep.
fn is_point_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonConvergence { .. }
            | Error::IllConditioned { .. }
            | Error::SpectralPoint(_)
            | Error::NotHalfPlane { .. }
    )
}

fn solve_point(
    model: &ModelSpec,
    mode: ScalarMode,
    x: f64,
    eps: f64,
    opts: &SolverOptions,
    warm: Option<&CMat>,
) -> Result<SubordinationState> {
    let lambda = lambda_at(mode, x, eps, model.m())?;
    match warm {
        Some(omega) => solve_subordination_warm(model, &lambda, opts, omega).or_else(|e| {
            if is_point_failure(&e) {
                solve_subordination(model, &lambda, opts)
            } else {
                Err(e)
            }
        }),
        None => solve_subordination(model, &lambda, opts),
    }
}

fn sweep_chunk(
    model: &ModelSpec,
    xs: &[f64],
    eps: f64,
    opts: &SolverOptions,
    mode: ScalarMode,
) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::with_capacity(xs.len());
    let mut warm: Option<CMat> = None;
    for &x in xs {
        match solve_point(model, mode, x, eps, opts, warm.as_ref()) {
            Ok(state) => {
                let v = clip_density(scalar_value(mode, &state), x)?;
                warm = Some(state.omega);
                out.push((v, true));
            }
            Err(e) if is_point_failure(&e) => {
                warm = None;
                out.push((0.0, false));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn sweep_grid(
    model: &ModelSpec,
    grid: &[f64],
    eps: f64,
    opts: &SolverOptions,
    mode: ScalarMode,
) -> Result<(Vec<f64>, Vec<bool>)> {
    check_eps(eps)?;
    check_grid(grid)?;
    let chunks: Result<Vec<Vec<(f64, bool)>>> = grid
        .par_chunks(SWEEP_CHUNK)
        .map(|xs| sweep_chunk(model, xs, eps, opts, mode))
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut converged = Vec::with_capacity(grid.len());
    for chunk in chunks? {
        for (v, ok) in chunk {
            values.push(v);
            converged.push(ok);
        }
    }
    Ok((values, converged))
}

fn trapezoid(points: &[f64], values: &[f64]) -> f64 {
    points
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}

fn finish_grid(grid: &[f64], eps: f64, values: Vec<f64>, converged: Vec<bool>) -> DensityGrid {
    let mass = trapezoid(grid, &values);
    DensityGrid {
        points: grid.to_vec(),
        eps,
        values,
        converged,
        mass,
    }
}

/// Density of the model operator's spectral distribution on the given grid:
/// ρ(x) = −(1/π)·Im tr_m G̃(x + iε) with warm starts along the grid.
///
/// Solver failures at individual points are recorded in the `converged` mask (value
/// 0 there) rather than aborting, so a hard region yields a partial result.
pub fn density_of_model(
    model: &ModelSpec,
    grid: &[f64],
    eps: f64,
    opts: &SolverOptions,
) -> Result<DensityGrid> {
    let (values, converged) = sweep_grid(model, grid, eps, opts, ScalarMode::Trace)?;
    Ok(finish_grid(grid, eps, values, converged))
}

/// The linearized model of a self-adjoint polynomial: coefficients for the first
/// `arity − dets.len()` generators become semicircular couplings, the rest couple to
/// the given deterministic matrices.
pub fn linearized_model(p: &NCPolynomial, dets: &[CMat]) -> Result<ModelSpec> {
    if !p.is_selfadjoint() {
        return Err(Error::Contract(
            "distributions are computed for self-adjoint polynomials only".into(),
        ));
    }
    if dets.len() > p.arity() {
        return Err(Error::Size(format!(
            "{} deterministic matrices supplied for a polynomial in {} generators",
            dets.len(),
            p.arity()
        )));
    }
    let r = p.arity() - dets.len();
    let lin = linearize(p)?;
    let alphas = lin.zetas[..r].to_vec();
    let betas = lin.zetas[r..].to_vec();
    ModelSpec::new(lin.gamma, alphas, betas, dets.to_vec())
}

/// Σ over monomials of |coefficient|·Π(generator norm bound), with each semicircular
/// generator bounded by 2. Crude but safe radius for the spectrum of p.
pub fn polynomial_norm_bound(p: &NCPolynomial, dets: &[CMat]) -> Result<f64> {
    if dets.len() > p.arity() {
        return Err(Error::Size(format!(
            "{} deterministic matrices supplied for a polynomial in {} generators",
            dets.len(),
            p.arity()
        )));
    }
    let r = p.arity() - dets.len();
    let det_norms: Vec<f64> = dets.iter().map(operator_norm).collect();
    let mut bound = 0.0;
    for mono in p.monomials() {
        let mut term = mono.coefficient.norm();
        for g in &mono.word {
            // Generator indices are 1-based; the first r are semicircular.
            term *= if g.index <= r {
                2.0
            } else {
                det_norms[g.index - r - 1]
            };
        }
        bound += term;
    }
    Ok(bound)
}

/// Density of the spectral distribution of p(x₁…x_r, a₁…a_t): the corner inversion
/// on the linearized model, ρ_P(x) = −(1/π)·Im G̃(xÊ₁₁ + iεI)₁₁.
pub fn polynomial_distribution(
    p: &NCPolynomial,
    dets: &[CMat],
    grid: &[f64],
    eps: f64,
    opts: &SolverOptions,
) -> Result<DensityGrid> {
    let model = linearized_model(p, dets)?;
    let (values, converged) = sweep_grid(&model, grid, eps, opts, ScalarMode::Corner)?;
    Ok(finish_grid(grid, eps, values, converged))
}

/// Bisect a threshold crossing between a grid point inside the support run and its
/// outside neighbor, down to the requested resolution. If the solver fails at a probe
/// the current bracket midpoint is kept.
fn refine_crossing<F>(eval: &F, inside: f64, outside: f64, threshold: f64, resolution: f64) -> f64
where
    F: Fn(f64) -> Result<f64>,
{
    let mut a = outside;
    let mut b = inside;
    while (b - a).abs() > resolution {
        let mid = 0.5 * (a + b);
        match eval(mid) {
            Ok(v) if v > threshold => b = mid,
            Ok(_) => a = mid,
            Err(_) => break,
        }
    }
    0.5 * (a + b)
}

/// Scan a sweep for maximal runs above the threshold and refine the run boundaries.
fn detect_intervals<F>(
    points: &[f64],
    values: &[f64],
    threshold: f64,
    resolution: f64,
    eval: &F,
) -> Vec<Interval>
where
    F: Fn(f64) -> Result<f64>,
{
    let n = points.len();
    let mut raw = Vec::new();
    let mut i = 0;
    while i < n {
        if values[i] > threshold {
            let start = i;
            while i + 1 < n && values[i + 1] > threshold {
                i += 1;
            }
            let lo = if start == 0 {
                points[0]
            } else {
                refine_crossing(eval, points[start], points[start - 1], threshold, resolution)
            };
            let hi = if i == n - 1 {
                points[n - 1]
            } else {
                refine_crossing(eval, points[i], points[i + 1], threshold, resolution)
            };
            raw.push(Interval { lo, hi });
        }
        i += 1;
    }
    merge_intervals(raw)
}

/// Flag peaks that concentrate like a point mass. A point mass of weight w smeared at
/// height ε peaks at w/(πε), so ŵ = πε·(peak) estimates the weight; the peak is
/// flagged when the mass within ±2ε accounts for at least half of ŵ and ŵ is well
/// above the ε-scale values an absolutely continuous density produces.
fn detect_atoms(points: &[f64], values: &[f64], intervals: &[Interval], eps: f64) -> Vec<f64> {
    let mut atoms = Vec::new();
    for iv in intervals {
        let idx: Vec<usize> = (0..points.len())
            .filter(|&k| iv.contains(points[k]))
            .collect();
        let Some(&peak_idx) = idx.iter().max_by(|&&a, &&b| values[a].total_cmp(&values[b]))
        else {
            continue;
        };
        let x_star = points[peak_idx];
        let w_hat = PI * eps * values[peak_idx];
        if w_hat < 10.0 * eps {
            continue;
        }
        let win: Vec<usize> = (0..points.len())
            .filter(|&k| (points[k] - x_star).abs() <= 2.0 * eps)
            .collect();
        if win.len() < 2 {
            continue;
        }
        let wx: Vec<f64> = win.iter().map(|&k| points[k]).collect();
        let wv: Vec<f64> = win.iter().map(|&k| values[k]).collect();
        if trapezoid(&wx, &wv) >= 0.5 * w_hat {
            atoms.push(x_star);
        }
    }
    atoms
}

fn build_support<F>(
    points: &[f64],
    values: &[f64],
    eps: f64,
    threshold: f64,
    eval: &F,
) -> SupportSet
where
    F: Fn(f64) -> Result<f64>,
{
    let step = if points.len() >= 2 {
        points[1] - points[0]
    } else {
        eps / 2.0
    };
    let intervals = detect_intervals(points, values, threshold, step / 100.0, eval);
    let atoms = detect_atoms(points, values, &intervals, eps);
    SupportSet {
        intervals,
        atoms,
        threshold,
        eps,
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::Parameter(format!(
            "support threshold must be positive and finite, got {threshold}"
        )));
    }
    Ok(())
}

/// Support of the model operator's distribution: maximal intervals of the default
/// grid where the density at height ε exceeds the threshold, endpoints refined by
/// bisection to a hundredth of the grid step. A degenerate sweep yields an
/// explicitly empty set.
pub fn support_of_model(
    model: &ModelSpec,
    eps: f64,
    threshold: f64,
    opts: &SolverOptions,
) -> Result<SupportSet> {
    check_threshold(threshold)?;
    let grid = default_grid(model, eps)?;
    let (values, _) = sweep_grid(model, &grid, eps, opts, ScalarMode::Trace)?;
    let eval = |x: f64| -> Result<f64> {
        let state = solve_point(model, ScalarMode::Trace, x, eps, opts, None)?;
        clip_density(scalar_value(ScalarMode::Trace, &state), x)
    };
    Ok(build_support(&grid, &values, eps, threshold, &eval))
}

/// Support of the distribution of p(x, a), through the corner of the linearized
/// model. The sweep covers [−B−1, B+1] for the a priori bound B on ‖p‖.
pub fn support_of_polynomial(
    p: &NCPolynomial,
    dets: &[CMat],
    eps: f64,
    threshold: f64,
    opts: &SolverOptions,
) -> Result<SupportSet> {
    check_threshold(threshold)?;
    check_eps(eps)?;
    let model = linearized_model(p, dets)?;
    let bound = polynomial_norm_bound(p, dets)?;
    let grid = range_grid(-(bound + 1.0), bound + 1.0, eps / 2.0)?;
    support_on_grid(&model, &grid, eps, threshold, opts)
}

fn support_on_grid(
    model: &ModelSpec,
    grid: &[f64],
    eps: f64,
    threshold: f64,
    opts: &SolverOptions,
) -> Result<SupportSet> {
    let (values, _) = sweep_grid(model, grid, eps, opts, ScalarMode::Corner)?;
    let eval = |x: f64| -> Result<f64> {
        let state = solve_point(model, ScalarMode::Corner, x, eps, opts, None)?;
        clip_density(scalar_value(ScalarMode::Corner, &state), x)
    };
    Ok(build_support(grid, &values, eps, threshold, &eval))
}

/// Operator norm of p(x₁…x_r, a₁…a_t): the radius of the support of its
/// distribution.
///
/// The support endpoint detected at height ε sits outside the true edge by a margin
/// that scales like √ε around a point mass and faster at a band edge, so the edge is
/// located at two heights ε and ε/4 and extrapolated under the √ε model, which
/// cancels the leading term. `tol` is the requested absolute accuracy; it selects ε
/// and is achieved with margin on band-edge and atomic test measures.
pub fn norm_of_polynomial(
    p: &NCPolynomial,
    dets: &[CMat],
    tol: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::Parameter(format!(
            "norm tolerance must be positive and finite, got {tol}"
        )));
    }
    let model = linearized_model(p, dets)?;
    let bound = polynomial_norm_bound(p, dets)?;
    if bound == 0.0 {
        return Ok(0.0);
    }
    let eps1 = (tol / 80.0).clamp(5e-5, 2.5e-4);
    let eps2 = eps1 / 4.0;
    let threshold = DEFAULT_THRESHOLD;

    let grid = range_grid(-(bound + 1.0), bound + 1.0, eps1 / 2.0)?;
    let s1 = support_on_grid(&model, &grid, eps1, threshold, opts)?;
    let (Some(first), Some(last)) = (s1.intervals.first(), s1.intervals.last()) else {
        // Nothing above the threshold anywhere: a unit-mass distribution inside
        // [−B, B] cannot hide below it on this grid, so treat as numerically zero.
        return Ok(0.0);
    };

    // Second pass at ε/4, swept only near the two outermost endpoints. The endpoint
    // can move inward by at most ~√(ε/(π·threshold)) ≈ 0.3, so a 0.45 margin covers.
    let refine_edge = |edge: f64, right_side: bool| -> Result<f64> {
        let (wlo, whi) = if right_side {
            (edge - 0.45, edge + 0.02)
        } else {
            (edge - 0.02, edge + 0.45)
        };
        let win = range_grid(wlo, whi, eps2 / 2.0)?;
        let s2 = support_on_grid(&model, &win, eps2, threshold, opts)?;
        let refined = if right_side {
            s2.intervals.last().map(|iv| iv.hi)
        } else {
            s2.intervals.first().map(|iv| iv.lo)
        };
        // Extrapolate E(ε) = E₀ + C√ε from the pair (ε, ε/4); fall back to the
        // unextrapolated (outward-biased, hence safe) edge if the window lost it.
        Ok(match refined {
            Some(e2) => 2.0 * e2 - edge,
            None => edge,
        })
    };

    let left = refine_edge(first.lo, false)?;
    let right = refine_edge(last.hi, true)?;
    Ok(left.abs().max(right.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncalg::parse_polynomial;
    use crate::subord::ModelSpec;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one_by_one(x: f64) -> CMat {
        CMat::from_elem((1, 1), c(x, 0.0))
    }

    fn scalar_semicircle() -> ModelSpec {
        ModelSpec::new(one_by_one(0.0), vec![one_by_one(1.0)], vec![], vec![]).unwrap()
    }

    fn diag(values: &[f64]) -> CMat {
        let n = values.len();
        let mut d = CMat::zeros((n, n));
        for (k, &v) in values.iter().enumerate() {
            d[[k, k]] = c(v, 0.0);
        }
        d
    }

    /// m=1 model x + a with a ~ ½(δ₋₁ + δ₁).
    fn semicircle_plus_signs(n: usize) -> ModelSpec {
        let vals: Vec<f64> = (0..n).map(|k| if k < n / 2 { 1.0 } else { -1.0 }).collect();
        ModelSpec::new(
            one_by_one(0.0),
            vec![one_by_one(1.0)],
            vec![one_by_one(1.0)],
            vec![diag(&vals)],
        )
        .unwrap()
    }

    fn semicircle_density(x: f64) -> f64 {
        if x.abs() >= 2.0 {
            0.0
        } else {
            (4.0 - x * x).sqrt() / (2.0 * PI)
        }
    }

    /// Distribution of the square of a standard semicircular element on [0, 4].
    fn squared_semicircle_density(y: f64) -> f64 {
        if y <= 0.0 || y >= 4.0 {
            0.0
        } else {
            (4.0 - y).sqrt() / (2.0 * PI * y.sqrt())
        }
    }

    #[test]
    fn semicircle_density_pointwise() {
        let model = scalar_semicircle();
        let opts = SolverOptions::default();
        let grid = range_grid(-1.95, 1.95, 0.05).unwrap();
        let d = density_of_model(&model, &grid, 1e-4, &opts).unwrap();
        assert_eq!(d.failed_points(), 0);
        for (x, v) in d.points.iter().zip(d.values.iter()) {
            let want = semicircle_density(*x);
            assert!(
                (v - want).abs() <= 2e-3,
                "density mismatch at x = {x}: got {v}, want {want}"
            );
        }
    }

    #[test]
    fn semicircle_center_and_exterior_values() {
        let model = scalar_semicircle();
        let opts = SolverOptions::default();
        let d = density_of_model(&model, &[0.0, 3.0], 1e-4, &opts).unwrap();
        assert!((d.values[0] - 1.0 / PI).abs() <= 5e-4, "rho(0) = {}", d.values[0]);
        assert!(d.values[1] <= 2e-4, "rho(3) = {}", d.values[1]);
    }

    #[test]
    fn symmetric_model_density_is_symmetric() {
        let model = semicircle_plus_signs(16);
        let opts = SolverOptions::default();
        let grid = range_grid(-3.0, 3.0, 0.01).unwrap();
        let d = density_of_model(&model, &grid, 1e-3, &opts).unwrap();
        let n = d.points.len();
        for i in 0..n {
            let v = d.values[i];
            let mirrored = d.values[n - 1 - i];
            assert!(
                (v - mirrored).abs() <= 1e-6,
                "asymmetry at x = {}: {v} vs {mirrored}",
                d.points[i]
            );
        }
    }

    #[test]
    fn mass_within_two_percent_on_atomless_models() {
        let opts = SolverOptions::default();
        for model in [scalar_semicircle(), semicircle_plus_signs(16)] {
            let grid = default_grid(&model, 1e-3).unwrap();
            let d = density_of_model(&model, &grid, 1e-3, &opts).unwrap();
            assert!(
                (d.mass - 1.0).abs() <= 0.02,
                "mass {} out of tolerance",
                d.mass
            );
        }
    }

    #[test]
    fn semicircle_support_detected() {
        let model = scalar_semicircle();
        let s = support_of_model(&model, 1e-3, 1e-3, &SolverOptions::default()).unwrap();
        assert_eq!(s.intervals.len(), 1, "support: {:?}", s.intervals);
        let iv = s.intervals[0];
        assert!(iv.lo <= -2.0 + 1e-3 && iv.lo >= -2.02, "lo = {}", iv.lo);
        assert!(iv.hi >= 2.0 - 1e-3 && iv.hi <= 2.02, "hi = {}", iv.hi);
        assert!(s.atoms.is_empty(), "unexpected atoms: {:?}", s.atoms);
    }

    #[test]
    fn pure_atoms_detected_with_gap() {
        // r = 0: the distribution is exactly ½(δ₋₁ + δ₁) smeared by the height.
        let vals: Vec<f64> = (0..8).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let model = ModelSpec::new(
            one_by_one(0.0),
            vec![],
            vec![one_by_one(1.0)],
            vec![diag(&vals)],
        )
        .unwrap();
        let s = support_of_model(&model, 1e-3, 1e-3, &SolverOptions::default()).unwrap();
        assert_eq!(s.intervals.len(), 2, "support: {:?}", s.intervals);
        assert!(s.intervals[0].contains(-1.0));
        assert!(s.intervals[1].contains(1.0));
        assert!(!s.contains(0.0), "gap around 0 not preserved: {:?}", s.intervals);
        assert_eq!(s.atoms.len(), 2, "atoms: {:?}", s.atoms);
        assert!((s.atoms[0] + 1.0).abs() <= 1e-3, "atom at {}", s.atoms[0]);
        assert!((s.atoms[1] - 1.0).abs() <= 1e-3, "atom at {}", s.atoms[1]);
    }

    #[test]
    fn polynomial_distribution_of_plain_semicircular_generator() {
        let p = parse_polynomial("x1", 1, 0).unwrap();
        let grid = range_grid(-1.95, 1.95, 0.05).unwrap();
        let d = polynomial_distribution(&p, &[], &grid, 1e-4, &SolverOptions::default()).unwrap();
        for (x, v) in d.points.iter().zip(d.values.iter()) {
            let want = semicircle_density(*x);
            assert!(
                (v - want).abs() <= 2e-3,
                "density mismatch at x = {x}: got {v}, want {want}"
            );
        }
    }

    #[test]
    fn polynomial_distribution_reproduces_deterministic_atoms() {
        let eigs = [-1.5, 0.3, 2.0];
        let p = parse_polynomial("a1", 0, 1).unwrap();
        let s = support_of_polynomial(
            &p,
            &[diag(&eigs)],
            1e-3,
            1e-3,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(s.intervals.len(), 3, "support: {:?}", s.intervals);
        assert_eq!(s.atoms.len(), 3, "atoms: {:?}", s.atoms);
        for (atom, eig) in s.atoms.iter().zip(eigs.iter()) {
            assert!(
                (atom - eig).abs() <= 1e-3,
                "atom {atom} away from eigenvalue {eig}"
            );
        }
    }

    #[test]
    fn squared_generator_matches_closed_form() {
        let p = parse_polynomial("x1*x1", 1, 0).unwrap();
        let opts = SolverOptions::default();
        let grid = range_grid(0.3, 3.7, 0.05).unwrap();
        let d = polynomial_distribution(&p, &[], &grid, 1e-4, &opts).unwrap();
        assert_eq!(d.failed_points(), 0);
        for (y, v) in d.points.iter().zip(d.values.iter()) {
            let want = squared_semicircle_density(*y);
            assert!(
                (v - want).abs() <= 3e-3,
                "density mismatch at y = {y}: got {v}, want {want}"
            );
        }

        let wide = range_grid(-1.0, 5.0, 5e-4).unwrap();
        let dm = polynomial_distribution(&p, &[], &wide, 1e-3, &opts).unwrap();
        assert!((dm.mass - 1.0).abs() <= 0.02, "mass {}", dm.mass);
    }

    #[test]
    fn squared_generator_support_endpoints() {
        let p = parse_polynomial("x1*x1", 1, 0).unwrap();
        let s =
            support_of_polynomial(&p, &[], 1e-4, 1e-3, &SolverOptions::default()).unwrap();
        assert_eq!(s.intervals.len(), 1, "support: {:?}", s.intervals);
        let iv = s.intervals[0];
        assert!((iv.hi - 4.0).abs() <= 0.05, "upper endpoint {}", iv.hi);
        // The density blows up like t^{-1/2} at the hard edge, so the smoothed
        // density stays above the threshold a little to the left of zero; the
        // crossing sits near -(eps / (2 pi threshold))^(2/3).
        assert!(iv.lo >= -0.08 && iv.lo <= 0.01, "lower endpoint {}", iv.lo);
    }

    #[test]
    fn norm_examples() {
        let opts = SolverOptions::default();

        let p = parse_polynomial("x1", 1, 0).unwrap();
        let n = norm_of_polynomial(&p, &[], 0.02, &opts).unwrap();
        assert!((n - 2.0).abs() <= 0.02, "norm of x1: {n}");

        let p = parse_polynomial("a1", 0, 1).unwrap();
        let n = norm_of_polynomial(&p, &[diag(&[-3.0, 1.0])], 0.02, &opts).unwrap();
        assert!((n - 3.0).abs() <= 0.02, "norm of a1: {n}");

        let p = parse_polynomial("x1 + a1", 1, 1).unwrap();
        let n = norm_of_polynomial(&p, &[one_by_one(0.0)], 0.02, &opts).unwrap();
        assert!((n - 2.0).abs() <= 0.02, "norm of x1 + 0: {n}");
    }

    #[test]
    fn fatten_merges_and_handles_empty() {
        let base = SupportSet {
            intervals: vec![
                Interval { lo: -1.5, hi: -0.5 },
                Interval { lo: 0.5, hi: 1.5 },
            ],
            atoms: vec![],
            threshold: 1e-3,
            eps: 1e-3,
        };
        let fat = fatten_support(&base, 0.5).unwrap();
        assert_eq!(fat.intervals, vec![Interval { lo: -2.0, hi: 2.0 }]);

        let single = SupportSet {
            intervals: vec![Interval { lo: -2.0, hi: 2.0 }],
            atoms: vec![],
            threshold: 1e-3,
            eps: 1e-3,
        };
        let fat = fatten_support(&single, 0.1).unwrap();
        assert_eq!(fat.intervals, vec![Interval { lo: -2.1, hi: 2.1 }]);

        let empty = SupportSet {
            intervals: vec![],
            atoms: vec![],
            threshold: 1e-3,
            eps: 1e-3,
        };
        assert!(fatten_support(&empty, 3.0).unwrap().intervals.is_empty());
        assert!(fatten_support(&empty, -1.0).is_err());
    }

    #[test]
    fn support_grows_with_inversion_height() {
        let model = semicircle_plus_signs(16);
        let opts = SolverOptions::default();
        let tight = support_of_model(&model, 1e-3, 1e-3, &opts).unwrap();
        let loose = support_of_model(&model, 2e-3, 1e-3, &opts).unwrap();
        // Every point of the tighter support must be covered by the looser one, up
        // to the endpoint refinement slack.
        let slack = 1e-3;
        let fat = fatten_support(&loose, slack).unwrap();
        for iv in &tight.intervals {
            assert!(
                fat.contains(iv.lo) && fat.contains(iv.hi),
                "interval {:?} escapes {:?}",
                iv,
                fat.intervals
            );
        }
    }

    #[test]
    fn failure_mask_marks_unconverged_points() {
        let model = scalar_semicircle();
        let opts = SolverOptions {
            max_iter: 2,
            continuation_start: 0.0,
            ..SolverOptions::default()
        };
        let d = density_of_model(&model, &[0.0, 0.5], 1e-3, &opts).unwrap();
        assert_eq!(d.failed_points(), 2);
        assert!(d.values.iter().all(|v| *v == 0.0));
        assert_eq!(d.mass, 0.0);
    }

    #[test]
    fn clipping_rules() {
        assert_eq!(clip_density(-5e-10, 0.0).unwrap(), 0.0);
        assert_eq!(clip_density(3e-4, 0.0).unwrap(), 3e-4);
        match clip_density(-1e-8, 0.7) {
            Err(Error::NegativeDensity { value, x }) => {
                assert_eq!(value, -1e-8);
                assert_eq!(x, 0.7);
            }
            other => panic!("expected NegativeDensity, got {other:?}"),
        }
    }

    #[test]
    fn csv_export_layout() {
        let d = DensityGrid {
            points: vec![0.0, 0.5],
            eps: 1e-3,
            values: vec![0.25, 0.125],
            converged: vec![true, false],
            mass: 0.09375,
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,density,converged");
        assert_eq!(lines[1], "0,0.25,1");
        assert_eq!(lines[2], "0.5,0.125,0");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn support_json_roundtrip() {
        let s = SupportSet {
            intervals: vec![Interval { lo: -2.0, hi: 2.0 }],
            atoms: vec![0.5],
            threshold: 1e-3,
            eps: 1e-3,
        };
        let text = s.to_json().unwrap();
        assert!(text.contains("threshold"));
        let back = SupportSet::from_json(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn grid_construction_checks() {
        let g = range_grid(-1.0, 1.0, 0.5).unwrap();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(range_grid(1.0, -1.0, 0.5).is_err());
        assert!(range_grid(-1.0, 1.0, 0.0).is_err());

        let model = scalar_semicircle();
        let g = default_grid(&model, 1e-2).unwrap();
        assert_eq!(g.first().copied().unwrap(), -3.0);
        assert!((g.last().copied().unwrap() - 3.0).abs() < 1e-12);
        assert!((g[1] - g[0] - 5e-3).abs() < 1e-12);

        let bad = density_of_model(
            &model,
            &[0.0, 0.0],
            1e-3,
            &SolverOptions::default(),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn norm_bound_counts_generators() {
        let p = parse_polynomial("x1*a1 + a1*x1 + x1*x1", 1, 1).unwrap();
        let a = diag(&[1.0, -1.0]);
        let b = polynomial_norm_bound(&p, &[a]).unwrap();
        // 2·2·1 (twice, halves of the mixed term) + 4 (the square).
        assert!((b - 8.0).abs() < 1e-12, "bound {b}");
    }
}

