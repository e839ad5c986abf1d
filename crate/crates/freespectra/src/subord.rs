//! Operator-valued subordination for models s = γ⊗1 + Σ_v α_v⊗x_v + Σ_u β_u⊗a_u with
//! free semicircular x_v and deterministic Hermitian a_u.
//!
//! The matrix Stieltjes transform G̃(λ) = (id_m⊗tr)(λ⊗1 − s)⁻¹ is computed through the
//! subordination function ω(λ), the fixed point of
//!
//!   ω = λ − γ − η(G_det(ω)),    η(b) = Σ_v α_v b α_v,
//!
//! where G_det is the matrix Stieltjes transform of the purely deterministic part
//! Σ β_u⊗A_u. Then G̃(λ) = G_det(ω(λ)). The solver is a damped Picard iteration with
//! continuation in the imaginary direction; there is no convergence theory near the
//! real axis, so failures are reported, never hidden.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::matops::{
    self, frobenius, hermitian_deviation, hermitian_eigvals_unchecked, imag_part, invert_checked,
    kron, operator_norm, partial_trace_n, HalfPlanePoint, HERMITIAN_RTOL,
};
use crate::{CMat, Error, Result};

/// Minimum eigenvalue of Im ω kept during iteration; below it the iterate is lifted
/// back into the half-plane and the state flagged.
const PROJECTION_FLOOR: f64 = 1e-12;
const PROJECTION_LIFT: f64 = 1e-10;

/// The model s = γ⊗1 + Σ α_v⊗x_v + Σ β_u⊗a_u.
///
/// All coefficient matrices are validated Hermitian and symmetrized on construction;
/// operator norms are cached. When every A_u is exactly diagonal, resolvents of the
/// deterministic part reduce to m×m solves grouped by distinct diagonal columns,
/// which is used as an exact fast path.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    m: usize,
    r: usize,
    t: usize,
    n: usize,
    gamma: CMat,
    alphas: Vec<CMat>,
    betas: Vec<CMat>,
    dets: Vec<CMat>,
    gamma_norm: f64,
    alpha_norms: Vec<f64>,
    beta_norms: Vec<f64>,
    det_norms: Vec<f64>,
    /// Distinct columns (A₁[k,k], …, A_t[k,k]) with multiplicities, when all A_u are
    /// diagonal; empty means the dense path must be used.
    diag_patterns: Vec<(Vec<f64>, usize)>,
}

fn checked_hermitian(name: &str, mat: &CMat) -> Result<CMat> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::Size(format!(
            "{} must be square, got {}x{}",
            name,
            mat.nrows(),
            mat.ncols()
        )));
    }
    let dev = hermitian_deviation(mat);
    if dev > HERMITIAN_RTOL {
        return Err(Error::NotHermitian {
            deviation: dev,
            tolerance: HERMITIAN_RTOL,
        });
    }
    Ok(matops::hermitize(mat))
}

impl ModelSpec {
    /// Validate and cache a model. `alphas` and `betas` are m×m like `gamma`; `dets`
    /// pairs with `betas` and fixes n (n = 1 when t = 0).
    pub fn new(gamma: CMat, alphas: Vec<CMat>, betas: Vec<CMat>, dets: Vec<CMat>) -> Result<Self> {
        let m = gamma.nrows();
        if betas.len() != dets.len() {
            return Err(Error::Size(format!(
                "{} beta coefficients but {} deterministic matrices",
                betas.len(),
                dets.len()
            )));
        }
        let gamma = checked_hermitian("gamma", &gamma)?;
        let mut ca = Vec::with_capacity(alphas.len());
        for (v, a) in alphas.iter().enumerate() {
            let a = checked_hermitian(&format!("alpha_{}", v + 1), a)?;
            if a.nrows() != m {
                return Err(Error::Size(format!(
                    "alpha_{} is {}x{}, expected {}x{}",
                    v + 1,
                    a.nrows(),
                    a.ncols(),
                    m,
                    m
                )));
            }
            ca.push(a);
        }
        let mut cb = Vec::with_capacity(betas.len());
        for (u, b) in betas.iter().enumerate() {
            let b = checked_hermitian(&format!("beta_{}", u + 1), b)?;
            if b.nrows() != m {
                return Err(Error::Size(format!(
                    "beta_{} is {}x{}, expected {}x{}",
                    u + 1,
                    b.nrows(),
                    b.ncols(),
                    m,
                    m
                )));
            }
            cb.push(b);
        }
        let n = dets.first().map_or(1, |d| d.nrows());
        let mut cd = Vec::with_capacity(dets.len());
        for (u, d) in dets.iter().enumerate() {
            let d = checked_hermitian(&format!("A_{}", u + 1), d)?;
            if d.nrows() != n {
                return Err(Error::Size(format!(
                    "A_{} is {}x{}, expected {}x{}",
                    u + 1,
                    d.nrows(),
                    d.ncols(),
                    n,
                    n
                )));
            }
            cd.push(d);
        }

        let gamma_norm = operator_norm(&gamma);
        let alpha_norms = ca.iter().map(operator_norm).collect();
        let beta_norms = cb.iter().map(operator_norm).collect();
        let det_norms: Vec<f64> = cd.iter().map(operator_norm).collect();

        let all_diagonal = cd.iter().all(|d| {
            d.indexed_iter()
                .all(|((i, j), z)| i == j || *z == Complex64::new(0.0, 0.0))
        });
        let mut diag_patterns = Vec::new();
        if all_diagonal {
            let mut counts: std::collections::BTreeMap<Vec<u64>, usize> =
                std::collections::BTreeMap::new();
            for k in 0..n {
                let col: Vec<f64> = cd.iter().map(|d| d[[k, k]].re).collect();
                let key: Vec<u64> = col.iter().map(|x| x.to_bits()).collect();
                *counts.entry(key).or_insert(0) += 1;
            }
            diag_patterns = counts
                .into_iter()
                .map(|(key, count)| (key.into_iter().map(f64::from_bits).collect(), count))
                .collect();
        }

        Ok(Self {
            m,
            r: ca.len(),
            t: cb.len(),
            n,
            gamma,
            alphas: ca,
            betas: cb,
            dets: cd,
            gamma_norm,
            alpha_norms,
            beta_norms,
            det_norms,
            diag_patterns,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> &CMat {
        &self.gamma
    }

    pub fn alphas(&self) -> &[CMat] {
        &self.alphas
    }

    pub fn betas(&self) -> &[CMat] {
        &self.betas
    }

    pub fn dets(&self) -> &[CMat] {
        &self.dets
    }

    pub fn gamma_norm(&self) -> f64 {
        self.gamma_norm
    }

    pub fn alpha_norms(&self) -> &[f64] {
        &self.alpha_norms
    }

    pub fn beta_norms(&self) -> &[f64] {
        &self.beta_norms
    }

    pub fn det_norms(&self) -> &[f64] {
        &self.det_norms
    }

    /// True when resolvents of the deterministic part take the grouped-diagonal path.
    pub fn has_diagonal_dets(&self) -> bool {
        !self.diag_patterns.is_empty()
    }

    /// A priori radius containing the spectrum of s: ‖γ‖ + 2Σ‖α_v‖ + Σ‖β_u‖‖A_u‖
    /// (each semicircular factor contributes spectrum [−2, 2]).
    pub fn norm_radius(&self) -> f64 {
        self.gamma_norm
            + 2.0 * self.alpha_norms.iter().sum::<f64>()
            + self
                .beta_norms
                .iter()
                .zip(self.det_norms.iter())
                .map(|(b, d)| b * d)
                .sum::<f64>()
    }

    /// G_det at a matrix point not wrapped in a HalfPlanePoint; callers must keep
    /// Im(rho) positive definite themselves.
    fn g_det_raw(&self, rho: &CMat) -> Result<CMat> {
        if !self.diag_patterns.is_empty() {
            let mut g = CMat::zeros((self.m, self.m));
            for (col, count) in &self.diag_patterns {
                let mut pencil = rho.clone();
                for (beta, d) in self.betas.iter().zip(col.iter()) {
                    pencil -= &beta.mapv(|z| z * *d);
                }
                let inv = invert_checked(&pencil)?;
                g += &inv.mapv(|z| z * (*count as f64 / self.n as f64));
            }
            return Ok(g);
        }
        let eye = CMat::eye(self.n);
        let mut pencil = kron(rho, &eye);
        for (beta, det) in self.betas.iter().zip(self.dets.iter()) {
            pencil -= &kron(beta, det);
        }
        let inv = invert_checked(&pencil)?;
        let op = matops::BlockOperator {
            m: self.m,
            n: self.n,
            data: inv,
            hermitian: false,
        };
        Ok(partial_trace_n(&op))
    }
}

/// The completely positive map η(b) = Σ_v α_v b α_v of the semicircular part.
pub fn eta(model: &ModelSpec, b: &CMat) -> Result<CMat> {
    if b.nrows() != model.m || b.ncols() != model.m {
        return Err(Error::Size(format!(
            "eta argument is {}x{}, expected {}x{}",
            b.nrows(),
            b.ncols(),
            model.m,
            model.m
        )));
    }
    let mut out = CMat::zeros((model.m, model.m));
    for alpha in &model.alphas {
        out += &alpha.dot(b).dot(alpha);
    }
    Ok(out)
}

/// Matrix Stieltjes transform of the deterministic part:
/// G_det(ρ) = (id_m⊗tr_n)(ρ⊗I_n − Σ β_u⊗A_u)⁻¹ with the normalized trace.
pub fn g_deterministic(model: &ModelSpec, rho: &HalfPlanePoint) -> Result<CMat> {
    if rho.dim() != model.m {
        return Err(Error::Size(format!(
            "rho is {0}x{0}, expected {1}x{1}",
            rho.dim(),
            model.m
        )));
    }
    model.g_det_raw(rho.matrix())
}

/// Λ(ρ) = γ + ρ + η(G_det(ρ)), the right inverse of the subordination function.
pub fn capital_lambda(model: &ModelSpec, rho: &HalfPlanePoint) -> Result<CMat> {
    let g = g_deterministic(model, rho)?;
    Ok(&model.gamma + rho.matrix() + &eta(model, &g)?)
}

/// Iteration controls for the subordination solver. `tol` is relative: the accepted
/// fixed-point defect is tol·max(1, ‖λ‖).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping_min: f64,
    pub continuation_start: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 2000,
            damping_min: 0.05,
            continuation_start: 1.0,
        }
    }
}

/// Result of one subordination solve.
#[derive(Debug, Clone)]
pub struct SubordinationState {
    pub lambda: HalfPlanePoint,
    pub omega: CMat,
    pub gtilde: CMat,
    /// Fixed-point defect ‖ω − (λ − γ − η(G_det(ω)))‖_F at the returned ω.
    pub residual: f64,
    /// Total G_det evaluations across all continuation stages.
    pub iterations: usize,
    pub converged: bool,
    /// True if any iterate left the matrix upper half-plane and was lifted back.
    pub half_plane_projected: bool,
}

fn ensure_half_plane(omega: &mut CMat, projected: &mut bool) -> Result<()> {
    let im = imag_part(omega);
    let eigs = hermitian_eigvals_unchecked(&im)?;
    let min = eigs.first().copied().unwrap_or(f64::NEG_INFINITY);
    if min <= PROJECTION_FLOOR {
        let lift = Complex64::new(0.0, min.abs() + PROJECTION_LIFT);
        for i in 0..omega.nrows() {
            omega[[i, i]] += lift;
        }
        *projected = true;
    }
    Ok(())
}

struct StageOutcome {
    gtilde: CMat,
    residual: f64,
    converged: bool,
}

/// Number of recent iterates mixed into an accelerated step.
const ANDERSON_DEPTH: usize = 4;

/// Exit tolerance of an intermediate continuation stage, as a fraction of the
/// stage height.
const RUNG_SLACK: f64 = 1e-3;

fn mat_inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Solve a small complex linear system in place by Gaussian elimination with
/// partial pivoting. Returns None when a pivot degenerates.
fn solve_small(mut g: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Option<Vec<Complex64>> {
    let k = b.len();
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| g[i][col].norm().total_cmp(&g[j][col].norm()))?;
        if g[pivot][col].norm() < 1e-300 {
            return None;
        }
        g.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let factor = g[row][col] / g[col][col];
            for c in col..k {
                let upper = g[col][c];
                g[row][c] -= factor * upper;
            }
            let upper = b[col];
            b[row] -= factor * upper;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); k];
    for col in (0..k).rev() {
        let mut acc = b[col];
        for c in col + 1..k {
            acc -= g[col][c] * x[c];
        }
        x[col] = acc / g[col][col];
    }
    Some(x)
}

/// Anderson mixing step from the recent (map value, defect) history: least squares
/// over consecutive defect differences via the normal equations, with a small ridge
/// for degenerate geometry. None when the history is too short or the coefficients
/// come out wild; callers then fall back to the damped Picard step.
fn anderson_candidate(history: &[(CMat, CMat)]) -> Option<CMat> {
    let k = history.len().checked_sub(1)?;
    if k == 0 {
        return None;
    }
    let (h_k, f_k) = history.last().expect("nonempty");
    let dfs: Vec<CMat> = (0..k)
        .map(|j| &history[j + 1].1 - &history[j].1)
        .collect();
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    let mut rhs = vec![Complex64::new(0.0, 0.0); k];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = mat_inner(&dfs[i], &dfs[j]);
        }
        rhs[i] = mat_inner(&dfs[i], f_k);
    }
    let trace: f64 = (0..k).map(|i| gram[i][i].re).sum();
    if !(trace > 0.0) {
        return None;
    }
    let ridge = Complex64::new(1e-13 * trace / k as f64, 0.0);
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let coeffs = solve_small(gram, rhs)?;
    if coeffs.iter().any(|c| !c.is_finite()) {
        return None;
    }
    // Large coefficients are legitimate when the history is nearly collinear: they
    // are exactly what extrapolates a slow mode under heavy damping. The cutoff only
    // has to catch degenerate solves; every candidate is accept-tested anyway.
    if coeffs.iter().map(|c| c.norm()).sum::<f64>() > 1e6 {
        return None;
    }
    let mut cand = h_k.clone();
    for (j, c) in coeffs.iter().enumerate() {
        let dh = &history[j + 1].0 - &history[j].0;
        cand -= &dh.mapv(|z| z * *c);
    }
    Some(cand)
}

/// One evaluation of the fixed-point map at ω: G_det, the map value
/// h(ω) = λ − γ − η(G_det(ω)), the defect f = h(ω) − ω and its norm.
#[derive(Clone)]
struct MapPoint {
    g: CMat,
    target: CMat,
    f: CMat,
    defect: f64,
}

fn evaluate_map(model: &ModelSpec, lambda_stage: &CMat, omega: &CMat) -> Result<MapPoint> {
    let g = model.g_det_raw(omega)?;
    let target = lambda_stage - &model.gamma - &eta(model, &g)?;
    let f = &target - omega;
    let defect = frobenius(&f);
    Ok(MapPoint {
        g,
        target,
        f,
        defect,
    })
}

/// Errors a trial iterate can hit in a bad region of the half-plane; these reject
/// the trial rather than abort the solve.
fn is_trial_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::IllConditioned { .. } | Error::SpectralPoint(_) | Error::NotHalfPlane { .. }
    )
}

fn push_history(history: &mut Vec<(CMat, CMat)>, entry: (CMat, CMat)) {
    history.push(entry);
    if history.len() > ANDERSON_DEPTH + 1 {
        history.remove(0);
    }
}

fn run_stage(
    model: &ModelSpec,
    lambda_stage: &CMat,
    stage_tol: f64,
    opts: &SolverOptions,
    omega: &mut CMat,
    theta: &mut f64,
    iterations: &mut usize,
    projected: &mut bool,
) -> Result<StageOutcome> {
    ensure_half_plane(omega, projected)?;
    let mut cur = evaluate_map(model, lambda_stage, omega)?;
    *iterations += 1;
    let mut used = 1usize;
    let mut history: Vec<(CMat, CMat)> = vec![(cur.target.clone(), cur.f.clone())];
    // Best iterate seen so far; near a support edge the iteration can wander out of
    // the (shrinking) basin of attraction, and the stage must not hand a worse point
    // than it received to the next continuation stage.
    let mut best_omega = omega.clone();
    let mut best = cur.clone();
    // Consecutive accepted steps since the last rejection; a long quiet run earns
    // the damping back, otherwise one rough patch early on pins every later stage
    // to a crawl at the floor.
    let mut accept_streak = 0usize;

    while cur.defect > stage_tol {
        if used >= opts.max_iter {
            *omega = best_omega;
            return Ok(StageOutcome {
                gtilde: best.g,
                residual: best.defect,
                converged: false,
            });
        }
        if accept_streak >= 10 {
            *theta = (*theta * 2.0).min(1.0);
            accept_streak = 0;
        }

        // Accelerated candidate first: Anderson mixing over the last few committed
        // map values cancels the slow modes that make plain Picard crawl near the
        // real axis (contraction rate 1 − O(Im λ) inside a spectral bulk). The
        // candidate is committed only if it actually shrinks the defect; a near-miss
        // is retried once at a fraction of the extrapolation, which rescues the
        // common case of a sound direction overshooting a small nonlinear basin.
        let mut attempt = anderson_candidate(&history);
        let mut backtracked = false;
        let mut accelerated = false;
        while let Some(mut cand) = attempt.take() {
            let mut cand_projected = false;
            ensure_half_plane(&mut cand, &mut cand_projected)?;
            match evaluate_map(model, lambda_stage, &cand) {
                Ok(next) => {
                    *iterations += 1;
                    used += 1;
                    if next.defect < cur.defect {
                        *projected |= cand_projected;
                        *omega = cand;
                        cur = next;
                        push_history(&mut history, (cur.target.clone(), cur.f.clone()));
                        if cur.defect < best.defect {
                            best_omega = omega.clone();
                            best = cur.clone();
                        }
                        accept_streak += 1;
                        accelerated = true;
                    } else if !backtracked && next.defect < 3.0 * cur.defect {
                        backtracked = true;
                        attempt = Some(&*omega + &(&cand - &*omega).mapv(|z| z * 0.3));
                    }
                }
                Err(e) if is_trial_failure(&e) => {
                    *iterations += 1;
                    used += 1;
                }
                Err(e) => return Err(e),
            }
            if used >= opts.max_iter {
                break;
            }
        }
        if accelerated || used >= opts.max_iter {
            continue;
        }

        // Damped Picard step with rejection: a trial whose defect grows is not
        // committed; θ is halved and the trial repeated from the same iterate, so a
        // good warm start survives an expansive region. At the floor the step is
        // committed regardless to keep moving (the acceleration history restarts
        // then, since the trajectory turned non-monotone).
        loop {
            let mut trial = &*omega + &cur.f.mapv(|z| z * Complex64::new(*theta, 0.0));
            let mut trial_projected = false;
            ensure_half_plane(&mut trial, &mut trial_projected)?;
            let at_floor = *theta <= opts.damping_min * 1.000_000_1;
            match evaluate_map(model, lambda_stage, &trial) {
                Ok(next) => {
                    *iterations += 1;
                    used += 1;
                    if next.defect <= cur.defect || at_floor {
                        if next.defect > cur.defect {
                            history.clear();
                            accept_streak = 0;
                        } else {
                            accept_streak += 1;
                        }
                        *projected |= trial_projected;
                        *omega = trial;
                        cur = next;
                        push_history(&mut history, (cur.target.clone(), cur.f.clone()));
                        if cur.defect < best.defect {
                            best_omega = omega.clone();
                            best = cur.clone();
                        }
                        break;
                    }
                    *theta = (*theta * 0.5).max(opts.damping_min);
                    accept_streak = 0;
                }
                Err(e) if is_trial_failure(&e) && !at_floor => {
                    *iterations += 1;
                    used += 1;
                    *theta = (*theta * 0.5).max(opts.damping_min);
                    accept_streak = 0;
                }
                Err(e) => return Err(e),
            }
            if used >= opts.max_iter {
                *omega = best_omega;
                return Ok(StageOutcome {
                    gtilde: best.g,
                    residual: best.defect,
                    converged: false,
                });
            }
        }
    }

    Ok(StageOutcome {
        gtilde: cur.g,
        residual: cur.defect,
        converged: true,
    })
}

/// Continuation heights: the 1-2-5 ladder below `start`, strictly above `target`,
/// descending.
fn ladder_heights(start: f64, target: f64) -> Vec<f64> {
    let mut out = Vec::new();
    'outer: for exp in 0..=14i32 {
        for mant in [1.0f64, 0.5, 0.2] {
            let h = mant * 10f64.powi(-exp);
            if h > start * (1.0 + 1e-12) {
                continue;
            }
            if h <= target {
                break 'outer;
            }
            out.push(h);
        }
    }
    out
}

fn solve_with_init(
    model: &ModelSpec,
    lambda: &HalfPlanePoint,
    opts: &SolverOptions,
    mut omega: CMat,
    use_continuation: bool,
) -> Result<SubordinationState> {
    if lambda.dim() != model.m {
        return Err(Error::Size(format!(
            "lambda is {0}x{0}, expected {1}x{1}",
            lambda.dim(),
            model.m
        )));
    }
    let tol_abs = opts.tol * f64::max(1.0, operator_norm(lambda.matrix()));
    let mut iterations = 0usize;
    let mut projected = false;
    let mut theta = 1.0f64;

    if use_continuation {
        let mu = lambda.im_min_eig();
        for h in ladder_heights(opts.continuation_start, mu) {
            let shift = Complex64::new(0.0, h - mu);
            let mut stage = lambda.matrix().clone();
            for i in 0..model.m {
                stage[[i, i]] += shift;
            }
            // Intermediate stages only need to produce a warm start that lands in
            // the next stage's basin; between stages the fixed point moves by an
            // amount on the scale of the height drop, so polishing beyond a small
            // fraction of the height is wasted budget.
            let stage_tol = f64::max(tol_abs, RUNG_SLACK * h);
            run_stage(
                model,
                &stage,
                stage_tol,
                opts,
                &mut omega,
                &mut theta,
                &mut iterations,
                &mut projected,
            )?;
            // The damping that a hard stage settled on is a good opening guess one
            // rung down, with a little headroom restored for the new geometry.
            theta = (theta * 2.0).min(1.0);
        }
    }

    let outcome = run_stage(
        model,
        lambda.matrix(),
        tol_abs,
        opts,
        &mut omega,
        &mut theta,
        &mut iterations,
        &mut projected,
    )?;
    if !outcome.converged {
        return Err(Error::NonConvergence {
            residual: outcome.residual,
            tolerance: tol_abs,
            iterations,
        });
    }
    Ok(SubordinationState {
        lambda: lambda.clone(),
        omega,
        gtilde: outcome.gtilde,
        residual: outcome.residual,
        iterations,
        converged: true,
        half_plane_projected: projected,
    })
}

/// Solve the subordination fixed point at λ, with continuation from
/// `opts.continuation_start` down to the height of λ. Starts at ω₀ = λ.
pub fn solve_subordination(
    model: &ModelSpec,
    lambda: &HalfPlanePoint,
    opts: &SolverOptions,
) -> Result<SubordinationState> {
    solve_with_init(model, lambda, opts, lambda.matrix().clone(), true)
}

/// Solve at λ starting from a caller-supplied ω (e.g. the solution at a neighboring
/// grid point). No continuation ladder; on failure fall back to
/// [`solve_subordination`].
pub fn solve_subordination_warm(
    model: &ModelSpec,
    lambda: &HalfPlanePoint,
    opts: &SolverOptions,
    omega0: &CMat,
) -> Result<SubordinationState> {
    solve_with_init(model, lambda, opts, omega0.clone(), false)
}

/// Scalar transform g̃(z) = tr_m G̃(zI_m) with the normalized trace.
///
/// For Im z > 0 the solve runs at λ = zI_m directly (`eps` unused); on the real axis
/// the point is lifted to z + iε; for Im z < 0 the value is conj(g̃(z̄)).
pub fn scalar_gtilde(
    model: &ModelSpec,
    z: Complex64,
    eps: f64,
    opts: &SolverOptions,
) -> Result<Complex64> {
    if z.im < 0.0 {
        return Ok(scalar_gtilde(model, z.conj(), eps, opts)?.conj());
    }
    let zz = if z.im > 0.0 {
        z
    } else {
        if eps <= 0.0 {
            return Err(Error::Parameter(
                "scalar_gtilde on the real axis needs eps > 0".into(),
            ));
        }
        z + Complex64::new(0.0, eps)
    };
    let lambda = HalfPlanePoint::from_scalar(zz, model.m)?;
    let state = solve_subordination(model, &lambda, opts)?;
    let tr = (0..model.m)
        .map(|i| state.gtilde[[i, i]])
        .sum::<Complex64>();
    Ok(tr / model.m as f64)
}
