//! Self-adjoint linearization of *-polynomials.
//!
//! A self-adjoint polynomial p in generators X₁…X_k is encoded as an affine pencil
//! L = γ⊗1 + Σ_j ζ_j⊗X_j with Hermitian m×m coefficients γ, ζ_j such that for every
//! tuple of self-adjoint arguments the resolvent corner identity
//!
//!   (z − p(X))⁻¹ = [(zÊ₁₁⊗1 − L(X))⁻¹]₁₁
//!
//! holds, where Ê₁₁ is the matrix unit at (1,1). The construction works monomial by
//! monomial: a degree-l monomial c·X_{i₁}…X_{i_l} gets an l×l block with the letters
//! on one antidiagonal and −1 on the next, so that the monomial equals −uQ⁻¹v for the
//! first-row/first-column/bulk pieces u, v, Q of the block. Writing p = d + P₀' + P₀'*
//! (d the affine part, P₀' the higher-degree half of a self-adjoint split) and stacking
//! the u, v, Q of all monomials of P₀' gives
//!
//!   L = [ d   u   v* ]
//!       [ u*  0   Q* ]
//!       [ v   Q   0  ],
//!
//! whose Schur complement at the (1,1) corner is exactly z − p(X).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::matops::{self, hermitian_deviation, invert_checked, kron};
use crate::ncalg::{Monomial, NCPolynomial};
use crate::{CMat, Error, Result};

/// Hermitian-symmetry budget for constructed coefficient matrices.
const COEFF_HERMITIAN_TOL: f64 = 1e-14;

/// A matrix whose entries are affine expressions c₀ + Σ_j c_j X_j in the generators:
/// `constant` holds the scalar part and `coeffs[j]` the coefficient of X_{j+1}.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub rows: usize,
    pub cols: usize,
    pub constant: CMat,
    pub coeffs: Vec<CMat>,
}

impl AffineBlock {
    fn zeros(rows: usize, cols: usize, k: usize) -> Self {
        Self {
            rows,
            cols,
            constant: CMat::zeros((rows, cols)),
            coeffs: (0..k).map(|_| CMat::zeros((rows, cols))).collect(),
        }
    }

    /// Substitute matrices for the generators: the result is (rows·N)×(cols·N).
    pub fn evaluate(&self, args: &[CMat]) -> Result<CMat> {
        if args.len() != self.coeffs.len() {
            return Err(Error::Size(format!(
                "affine block over {} generators evaluated with {} arguments",
                self.coeffs.len(),
                args.len()
            )));
        }
        let n = args.first().map_or(1, |a| a.nrows());
        let mut out = kron(&self.constant, &CMat::eye(n));
        for (c, x) in self.coeffs.iter().zip(args.iter()) {
            out += &kron(c, x);
        }
        Ok(out)
    }
}

/// Block description of a single linearized monomial.
#[derive(Debug, Clone)]
pub enum MonomialBlocks {
    /// Degree 1: the monomial is used as-is (a 1×1 affine expression).
    Direct { value: AffineBlock },
    /// Degree l ≥ 2: pieces with the monomial equal to −uQ⁻¹v; u is 1×(l−1),
    /// v is (l−1)×1 and Q is (l−1)×(l−1) with constant part an antidiagonal of −1.
    Schur {
        u: AffineBlock,
        v: AffineBlock,
        q: AffineBlock,
    },
}

/// Block structure for a degree-l ≥ 1 monomial over k generators.
///
/// Adjoint markers on letters are ignored: the blocks are only ever substituted with
/// self-adjoint arguments, where X* = X.
pub fn linearize_monomial(mono: &Monomial, k: usize) -> Result<MonomialBlocks> {
    let l = mono.degree();
    if l == 0 {
        return Err(Error::Contract(
            "constant terms are absorbed into gamma, not linearized as blocks".into(),
        ));
    }
    let idx: Vec<usize> = mono.word.iter().map(|g| g.index).collect();
    if idx.iter().any(|&i| i == 0 || i > k) {
        return Err(Error::Parameter(format!(
            "monomial letter index outside arity {}",
            k
        )));
    }
    if l == 1 {
        let mut value = AffineBlock::zeros(1, 1, k);
        value.coeffs[idx[0] - 1][[0, 0]] = mono.coefficient;
        return Ok(MonomialBlocks::Direct { value });
    }
    let mut u = AffineBlock::zeros(1, l - 1, k);
    let mut v = AffineBlock::zeros(l - 1, 1, k);
    let mut q = AffineBlock::zeros(l - 1, l - 1, k);
    // Assembled block [[0, u],[v, Q]] carries c·X_{i₁} at (1, l), X_{i_j} at
    // (j, l+1−j) and −1 at (j, l+2−j) for j = 2..l; in 0-based piece coordinates:
    u.coeffs[idx[0] - 1][[0, l - 2]] = mono.coefficient;
    v.coeffs[idx[l - 1] - 1][[l - 2, 0]] = Complex64::new(1.0, 0.0);
    for j in 2..=l {
        q.constant[[j - 2, l - j]] = Complex64::new(-1.0, 0.0);
        if j <= l - 1 {
            q.coeffs[idx[j - 1] - 1][[j - 2, l - 1 - j]] = Complex64::new(1.0, 0.0);
        }
    }
    Ok(MonomialBlocks::Schur { u, v, q })
}

/// The affine pencil L = γ⊗1 + Σ ζ_j⊗X_j linearizing a self-adjoint polynomial.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub m: usize,
    pub gamma: CMat,
    pub zetas: Vec<CMat>,
    pub source_degree: usize,
}

/// Adds val at (r,c) and its conjugate at (c,r), keeping the matrix Hermitian.
fn add_mirrored(mat: &mut CMat, r: usize, c: usize, val: Complex64) {
    mat[[r, c]] += val;
    if r != c {
        mat[[c, r]] += val.conj();
    }
}

/// Build a self-adjoint linearization of a self-adjoint polynomial.
///
/// The affine part of p sits at the (1,1) entry of γ and the ζ_j; the degree ≥ 2
/// monomials of one self-adjoint split half are stacked as in the module description.
/// Degree ≤ 1 polynomials keep m = 1 with L = p itself.
pub fn linearize(p: &NCPolynomial) -> Result<Linearization> {
    if !p.is_selfadjoint() {
        return Err(Error::Contract(
            "linearize requires a self-adjoint polynomial".into(),
        ));
    }
    let k = p.arity();
    let p0 = p.split_selfadjoint()?;
    let high: Vec<&Monomial> = p0.monomials().iter().filter(|m| m.degree() >= 2).collect();
    let q_total: usize = high.iter().map(|m| m.degree() - 1).sum();
    let m = if q_total == 0 { 1 } else { 1 + 2 * q_total };

    let mut gamma = CMat::zeros((m, m));
    let mut zetas: Vec<CMat> = (0..k).map(|_| CMat::zeros((m, m))).collect();

    // Affine part of p itself (self-adjointness makes these coefficients real).
    gamma[[0, 0]] = Complex64::new(p.constant_term().re, 0.0);
    for mono in p.monomials().iter().filter(|m| m.degree() == 1) {
        let j = mono.word[0].index - 1;
        zetas[j][[0, 0]] += Complex64::new(mono.coefficient.re, 0.0);
    }

    let mut off = 0usize;
    for mono in &high {
        let l = mono.degree();
        let blocks = linearize_monomial(mono, k)?;
        let (u, v, q) = match blocks {
            MonomialBlocks::Schur { u, v, q } => (u, v, q),
            MonomialBlocks::Direct { .. } => unreachable!("degree >= 2 filtered above"),
        };
        let u_base = 1 + off;
        let v_base = 1 + q_total + off;
        // u occupies row 0 over the u-columns; the mirror writes u*.
        for (target, piece) in std::iter::once((&mut gamma, &u.constant))
            .chain(zetas.iter_mut().zip(u.coeffs.iter()))
        {
            for b in 0..l - 1 {
                let val = piece[[0, b]];
                if val != Complex64::new(0.0, 0.0) {
                    add_mirrored(target, 0, u_base + b, val);
                }
            }
        }
        // v occupies the v-rows in column 0; the mirror writes v*.
        for (target, piece) in std::iter::once((&mut gamma, &v.constant))
            .chain(zetas.iter_mut().zip(v.coeffs.iter()))
        {
            for a in 0..l - 1 {
                let val = piece[[a, 0]];
                if val != Complex64::new(0.0, 0.0) {
                    add_mirrored(target, v_base + a, 0, val);
                }
            }
        }
        // Q occupies (v-rows × u-columns); the mirror writes Q*.
        for (target, piece) in std::iter::once((&mut gamma, &q.constant))
            .chain(zetas.iter_mut().zip(q.coeffs.iter()))
        {
            for a in 0..l - 1 {
                for b in 0..l - 1 {
                    let val = piece[[a, b]];
                    if val != Complex64::new(0.0, 0.0) {
                        add_mirrored(target, v_base + a, u_base + b, val);
                    }
                }
            }
        }
        off += l - 1;
    }

    for (name, mat) in std::iter::once(("gamma", &gamma)).chain(zetas.iter().map(|z| ("zeta", z)))
    {
        let dev = hermitian_deviation(mat);
        if dev > COEFF_HERMITIAN_TOL {
            return Err(Error::Contract(format!(
                "constructed {} deviates from Hermitian by {:.3e}",
                name, dev
            )));
        }
    }

    Ok(Linearization {
        m,
        gamma,
        zetas,
        source_degree: p.degree(),
    })
}

impl Linearization {
    /// Substitute matrices for the generators: L(X) = γ⊗I_N + Σ ζ_j⊗X_j.
    pub fn evaluate(&self, args: &[CMat]) -> Result<CMat> {
        if args.len() != self.zetas.len() {
            return Err(Error::Size(format!(
                "linearization over {} generators evaluated with {} arguments",
                self.zetas.len(),
                args.len()
            )));
        }
        let n = args.first().map_or(1, |a| a.nrows());
        for (j, a) in args.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Size(format!(
                    "argument {} is {}x{}, expected {}x{}",
                    j + 1,
                    a.nrows(),
                    a.ncols(),
                    n,
                    n
                )));
            }
        }
        let mut out = kron(&self.gamma, &CMat::eye(n));
        for (z, x) in self.zetas.iter().zip(args.iter()) {
            out += &kron(z, x);
        }
        Ok(out)
    }

    /// The pencil zÊ₁₁⊗I_N − L(X) whose corner inverse reproduces (z − p(X))⁻¹.
    pub fn pencil(&self, z: Complex64, args: &[CMat]) -> Result<CMat> {
        let n = args.first().map_or(1, |a| a.nrows());
        let mut e11 = CMat::zeros((self.m, self.m));
        e11[[0, 0]] = z;
        Ok(kron(&e11, &CMat::eye(n)) - &self.evaluate(args)?)
    }
}

/// Verify the resolvent corner identity at one point: computes (z − p(X))⁻¹ directly
/// and as the (1,1) N×N corner of the inverted pencil, and compares entrywise.
pub fn corner_resolvent_check(
    lin: &Linearization,
    p: &NCPolynomial,
    args: &[CMat],
    z: Complex64,
    tol: f64,
) -> Result<bool> {
    for a in args {
        if !matops::is_hermitian(a) {
            return Err(Error::NotHermitian {
                deviation: hermitian_deviation(a),
                tolerance: crate::matops::HERMITIAN_RTOL,
            });
        }
    }
    let n = args.first().map_or(1, |a| a.nrows());
    let pval = p.evaluate(args)?;
    let direct_pencil = matops::scalar_matrix(z, n) - &pval;
    let left = invert_checked(&direct_pencil).map_err(|_| {
        Error::SpectralPoint(format!("z = {} is at or near the spectrum of p(X)", z))
    })?;
    let big = lin.pencil(z, args)?;
    let big_inv = invert_checked(&big).map_err(|_| {
        Error::SpectralPoint(format!(
            "linearized pencil is singular at z = {} (spectral point)",
            z
        ))
    })?;
    let corner = big_inv.slice(ndarray::s![0..n, 0..n]).to_owned();
    let dev = (&left - &corner)
        .iter()
        .fold(0.0f64, |acc, d| acc.max(d.norm()));
    Ok(dev <= tol)
}

/// Lower bound ε on the distance from 0 to the spectrum of z₀Ê₁₁⊗1 − L(y) valid for
/// all self-adjoint substitutions with ‖y_j‖ ≤ C and all real z₀ at distance ≥ δ from
/// the spectrum of p(y).
///
/// The bound is ε = min{1/(2κ), δ/(1 + 2κ²ℓ²)} with κ a bound on ‖Q(y)⁻¹‖ and ℓ a
/// bound on the first-row blocks. κ comes from a Neumann series around the constant
/// part of Q: for linearizations built here the generator part of Q is nilpotent after
/// preconditioning by the constant part, so the series truncated at the Q dimension is
/// a true bound even when its ratio exceeds one. Degree ≤ 1 pencils return δ itself.
pub fn linearized_gap_bound(lin: &Linearization, norm_bound: f64, delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(Error::Parameter("delta must be positive".into()));
    }
    if norm_bound < 0.0 {
        return Err(Error::Parameter("norm bound must be nonnegative".into()));
    }
    if lin.m == 1 {
        return Ok(delta);
    }
    let s = ndarray::s![1..lin.m, 1..lin.m];
    let qc = lin.gamma.slice(s).to_owned();
    let qc_inv = invert_checked(&qc)?;
    let kappa0 = matops::operator_norm(&qc_inv);
    let dq_norm: f64 = lin
        .zetas
        .iter()
        .map(|zeta| matops::operator_norm(&zeta.slice(s).to_owned()))
        .sum();
    let ratio = kappa0 * norm_bound * dq_norm;
    let mut series = 0.0f64;
    let mut term = 1.0f64;
    for _ in 0..lin.m {
        series += term;
        term *= ratio;
    }
    let kappa = kappa0 * series;

    let row = ndarray::s![0..1, 1..lin.m];
    let ell_const = matops::operator_norm(&lin.gamma.slice(row).to_owned());
    let ell_coeff: f64 = lin
        .zetas
        .iter()
        .map(|zeta| matops::operator_norm(&zeta.slice(row).to_owned()))
        .sum();
    let ell = ell_const + norm_bound * ell_coeff;

    let eps = (1.0 / (2.0 * kappa)).min(delta / (1.0 + 2.0 * kappa * kappa * ell * ell));
    Ok(eps)
}

/// Serialization document for a linearization: matrices are flattened row-major as
/// [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearizationJson {
    pub m: usize,
    pub source_degree: usize,
    pub gamma: Vec<[f64; 2]>,
    pub zetas: Vec<Vec<[f64; 2]>>,
}

fn flatten(mat: &CMat) -> Vec<[f64; 2]> {
    mat.iter().map(|z| [z.re, z.im]).collect()
}

fn unflatten(entries: &[[f64; 2]], m: usize) -> Result<CMat> {
    if entries.len() != m * m {
        return Err(Error::Size(format!(
            "expected {} matrix entries, got {}",
            m * m,
            entries.len()
        )));
    }
    let mut mat = CMat::zeros((m, m));
    for (pos, e) in entries.iter().enumerate() {
        mat[[pos / m, pos % m]] = Complex64::new(e[0], e[1]);
    }
    Ok(mat)
}

impl From<&Linearization> for LinearizationJson {
    fn from(lin: &Linearization) -> Self {
        Self {
            m: lin.m,
            source_degree: lin.source_degree,
            gamma: flatten(&lin.gamma),
            zetas: lin.zetas.iter().map(flatten).collect(),
        }
    }
}

impl TryFrom<&LinearizationJson> for Linearization {
    type Error = Error;

    fn try_from(doc: &LinearizationJson) -> Result<Self> {
        let gamma = unflatten(&doc.gamma, doc.m)?;
        let zetas = doc
            .zetas
            .iter()
            .map(|z| unflatten(z, doc.m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m: doc.m,
            gamma,
            zetas,
            source_degree: doc.source_degree,
        })
    }
}
