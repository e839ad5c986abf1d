//! Complex dense matrix utilities: Hermitian structure checks, matrix upper half-plane
//! membership, resolvents, partial traces, Kronecker assembly, operator norms and
//! Hermitian eigendecomposition.
//!
//! Everything is dense; the intended scale is mn up to a few thousand.

use ndarray_linalg::{Eigh, EigValsh, Inverse, OperationNorm, SVD, UPLO};
use num_complex::Complex64;

use crate::{CMat, Error, Result};

/// Relative Frobenius deviation below which a matrix counts as Hermitian.
pub const HERMITIAN_RTOL: f64 = 1e-10;
/// Smallest eigenvalue of Im(lambda) required for half-plane membership.
pub const HALF_PLANE_MIN_EIG: f64 = 1e-12;
/// One-norm condition estimate above which a resolvent solve is rejected.
const CONDITION_LIMIT: f64 = 1e14;

/// Conjugate transpose.
pub fn adjoint(m: &CMat) -> CMat {
    let mut out = CMat::zeros((m.ncols(), m.nrows()));
    for ((i, j), v) in m.indexed_iter() {
        out[[j, i]] = v.conj();
    }
    out
}

/// Hermitian part (M + M*)/2.
pub fn hermitize(m: &CMat) -> CMat {
    let adj = adjoint(m);
    (m + &adj).mapv(|z| z * 0.5)
}

/// Imaginary part (M - M*)/2i, itself a Hermitian matrix.
pub fn imag_part(m: &CMat) -> CMat {
    let adj = adjoint(m);
    (m - &adj).mapv(|z| z * Complex64::new(0.0, -0.5))
}

pub(crate) fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative Frobenius deviation from Hermitian symmetry: ||M - M*|| / max(1, ||M||).
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let adj = adjoint(m);
    let diff = m - &adj;
    frobenius(&diff) / f64::max(1.0, frobenius(m))
}

/// True when the deviation is within [`HERMITIAN_RTOL`].
pub fn is_hermitian(m: &CMat) -> bool {
    m.nrows() == m.ncols() && hermitian_deviation(m) <= HERMITIAN_RTOL
}

/// zI_m as a dense matrix.
pub fn scalar_matrix(z: Complex64, m: usize) -> CMat {
    CMat::eye(m).mapv(|e| e * z)
}

/// A matrix point of the upper half-plane H+(M_m): Im(lambda) positive definite.
#[derive(Debug, Clone)]
pub struct HalfPlanePoint {
    lambda: CMat,
    im_min_eig: f64,
}

impl HalfPlanePoint {
    /// Validates Im(lambda) > 0 (smallest eigenvalue above [`HALF_PLANE_MIN_EIG`]).
    pub fn new(lambda: CMat) -> Result<Self> {
        if lambda.nrows() != lambda.ncols() {
            return Err(Error::Size(format!(
                "half-plane point must be square, got {}x{}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        let im = imag_part(&lambda);
        let eigs = hermitian_eigvals_unchecked(&im)?;
        let min = eigs.first().copied().unwrap_or(f64::NEG_INFINITY);
        if min <= HALF_PLANE_MIN_EIG {
            return Err(Error::NotHalfPlane { min_imag_eig: min });
        }
        Ok(Self {
            lambda,
            im_min_eig: min,
        })
    }

    /// zI_m for scalar z with Im z > 0.
    pub fn from_scalar(z: Complex64, m: usize) -> Result<Self> {
        Self::new(scalar_matrix(z, m))
    }

    pub fn matrix(&self) -> &CMat {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    /// Smallest eigenvalue of Im(lambda); controls the resolvent norm bound.
    pub fn im_min_eig(&self) -> f64 {
        self.im_min_eig
    }

    pub fn into_matrix(self) -> CMat {
        self.lambda
    }
}

/// An element of M_m(C) ⊗ M_n(C) stored as a dense (mn)x(mn) matrix.
///
/// Block (i,j) occupies rows i*n..(i+1)*n and columns j*n..(j+1)*n, matching the
/// standard Kronecker convention (c ⊗ D)[(i n + a), (j n + b)] = c_ij D_ab.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub m: usize,
    pub n: usize,
    pub data: CMat,
    pub hermitian: bool,
}

impl BlockOperator {
    pub fn new(m: usize, n: usize, data: CMat) -> Result<Self> {
        if data.nrows() != m * n || data.ncols() != m * n {
            return Err(Error::Size(format!(
                "block operator data must be {}x{}, got {}x{}",
                m * n,
                m * n,
                data.nrows(),
                data.ncols()
            )));
        }
        let hermitian = is_hermitian(&data);
        Ok(Self {
            m,
            n,
            data,
            hermitian,
        })
    }
}

/// Dense Kronecker product a ⊗ b.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (p, q) = (a.nrows(), a.ncols());
    let (r, s) = (b.nrows(), b.ncols());
    let mut out = CMat::zeros((p * r, q * s));
    for i in 0..p {
        for j in 0..q {
            let aij = a[[i, j]];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..r {
                for l in 0..s {
                    out[[i * r + k, j * s + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Sum of Kronecker products: sum_i coeffs_i ⊗ blocks_i.
///
/// The result is flagged Hermitian when every (coeff, block) pair is Hermitian.
pub fn kron_assemble(coeffs: &[CMat], blocks: &[CMat]) -> Result<BlockOperator> {
    if coeffs.len() != blocks.len() {
        return Err(Error::Size(format!(
            "kron_assemble needs equal list lengths, got {} coefficients and {} blocks",
            coeffs.len(),
            blocks.len()
        )));
    }
    if coeffs.is_empty() {
        return Err(Error::Size("kron_assemble needs at least one term".into()));
    }
    let m = coeffs[0].nrows();
    let n = blocks[0].nrows();
    for c in coeffs {
        if c.nrows() != m || c.ncols() != m {
            return Err(Error::Size("inconsistent coefficient sizes".into()));
        }
    }
    for b in blocks {
        if b.nrows() != n || b.ncols() != n {
            return Err(Error::Size("inconsistent block sizes".into()));
        }
    }
    let mut data = CMat::zeros((m * n, m * n));
    let mut hermitian = true;
    for (c, b) in coeffs.iter().zip(blocks.iter()) {
        data += &kron(c, b);
        hermitian &= is_hermitian(c) && is_hermitian(b);
    }
    Ok(BlockOperator {
        m,
        n,
        data,
        hermitian,
    })
}

/// (id_m ⊗ tr_n)(M): entry (i,j) is the normalized trace of the (i,j)-th n×n block.
pub fn partial_trace_n(op: &BlockOperator) -> CMat {
    let (m, n) = (op.m, op.n);
    let mut out = CMat::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..n {
                acc += op.data[[i * n + a, j * n + a]];
            }
            out[[i, j]] = acc / n as f64;
        }
    }
    out
}

/// Resolvent (lambda ⊗ I_n − M)^{-1} of a Hermitian block operator at a half-plane point.
///
/// The result norm obeys ||R|| <= ||Im(lambda)^{-1}|| = 1/min_eig(Im lambda).
pub fn resolvent(op: &BlockOperator, lambda: &HalfPlanePoint) -> Result<BlockOperator> {
    if lambda.dim() != op.m {
        return Err(Error::Size(format!(
            "lambda is {}x{} but operator has m = {}",
            lambda.dim(),
            lambda.dim(),
            op.m
        )));
    }
    let pencil = kron(lambda.matrix(), &CMat::eye(op.n)) - &op.data;
    let inv = invert_checked(&pencil)?;
    Ok(BlockOperator {
        m: op.m,
        n: op.n,
        data: inv,
        hermitian: false,
    })
}

/// Dense inverse with a one-norm condition estimate; rejects estimates above 1e14.
pub fn invert_checked(a: &CMat) -> Result<CMat> {
    let inv = a.inv().map_err(|_| Error::IllConditioned {
        estimate: f64::INFINITY,
    })?;
    let est = a.opnorm_one().unwrap_or(f64::INFINITY) * inv.opnorm_one().unwrap_or(f64::INFINITY);
    if !est.is_finite() || est > CONDITION_LIMIT {
        return Err(Error::IllConditioned { estimate: est });
    }
    Ok(inv)
}

/// Spectral norm (largest singular value).
///
/// Hermitian inputs take the eigenvalue path, which gives the same number; general
/// matrices go through the SVD.
pub fn operator_norm(m: &CMat) -> f64 {
    if m.nrows() == m.ncols() && is_hermitian(m) {
        let h = hermitize(m);
        match h.eigvalsh(UPLO::Lower) {
            Ok(w) => w.iter().fold(0.0f64, |acc, x| acc.max(x.abs())),
            Err(_) => svd_norm(m),
        }
    } else {
        svd_norm(m)
    }
}

fn svd_norm(m: &CMat) -> f64 {
    match m.svd(false, false) {
        Ok((_, s, _)) => s.iter().fold(0.0f64, |acc, x| acc.max(*x)),
        Err(_) => f64::NAN,
    }
}

fn check_hermitian_input(m: &CMat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Size(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = hermitian_deviation(m);
    if dev > HERMITIAN_RTOL {
        return Err(Error::NotHermitian {
            deviation: dev,
            tolerance: HERMITIAN_RTOL,
        });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix: ascending eigenvalues and a unitary whose
/// columns are the eigenvectors. Input is symmetrized before factorization.
pub fn hermitian_eigs(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    check_hermitian_input(m)?;
    let h = hermitize(m);
    let (w, v) = h.eigh(UPLO::Lower)?;
    // With row-major storage the backend factorizes the transpose, i.e. conj(M), so
    // the eigenvector columns come back conjugated.
    Ok((w.to_vec(), v.mapv(|z| z.conj())))
}

/// Ascending eigenvalues of a Hermitian matrix (values-only fast path).
pub fn hermitian_eigvals(m: &CMat) -> Result<Vec<f64>> {
    check_hermitian_input(m)?;
    let h = hermitize(m);
    hermitian_eigvals_unchecked(&h)
}

/// Values-only eigensolve for a matrix already known to be Hermitian.
pub(crate) fn hermitian_eigvals_unchecked(h: &CMat) -> Result<Vec<f64>> {
    let w = h.eigvalsh(UPLO::Lower)?;
    Ok(w.to_vec())
}

/// Write a square complex matrix as CSV with interleaved re,im columns:
/// row i is re(i,0), im(i,0), re(i,1), im(i,1), ...
pub fn write_matrix_csv<W: std::io::Write>(m: &CMat, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        let mut rec = Vec::with_capacity(2 * m.ncols());
        for j in 0..m.ncols() {
            rec.push(m[[i, j]].re.to_string());
            rec.push(m[[i, j]].im.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a square complex matrix from the interleaved re,im CSV format.
pub fn read_matrix_csv<R: std::io::Read>(input: R) -> Result<CMat> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (ri, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() % 2 != 0 {
            return Err(Error::Parse {
                message: format!("row {} has odd field count {}", ri + 1, rec.len()),
                position: ri + 1,
            });
        }
        let mut row = Vec::with_capacity(rec.len() / 2);
        for k in 0..rec.len() / 2 {
            let re: f64 = rec[2 * k].parse().map_err(|_| Error::Parse {
                message: format!("bad float {:?} in row {}", &rec[2 * k], ri + 1),
                position: ri + 1,
            })?;
            let im: f64 = rec[2 * k + 1].parse().map_err(|_| Error::Parse {
                message: format!("bad float {:?} in row {}", &rec[2 * k + 1], ri + 1),
                position: ri + 1,
            })?;
            row.push(Complex64::new(re, im));
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse {
            message: "empty matrix".into(),
            position: 0,
        });
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Size(format!(
            "matrix CSV must be square; got {} rows and {} columns in some row",
            n,
            rows.iter().map(|r| r.len()).max().unwrap_or(0)
        )));
    }
    let mut m = CMat::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, z) in row.into_iter().enumerate() {
            m[[i, j]] = z;
        }
    }
    Ok(m)
}


#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kron_identities() {
        let i2 = CMat::eye(2);
        let i3 = CMat::eye(3);
        let k = kron(&i2, &i3);
        assert_eq!(k, CMat::eye(6));

        let a = CMat::from_diag(&ndarray::arr1(&[c(1.0, 0.0), c(-1.0, 0.0)]));
        let b = CMat::from_diag(&ndarray::arr1(&[c(2.0, 0.0), c(3.0, 0.0)]));
        let k = kron(&a, &b);
        let expect = CMat::from_diag(&ndarray::arr1(&[
            c(2.0, 0.0),
            c(3.0, 0.0),
            c(-2.0, 0.0),
            c(-3.0, 0.0),
        ]));
        assert_eq!(k, expect);
    }

    #[test]
    fn kron_matches_index_loop() {
        let mut r = rng(11);
        let a = random_complex(&mut r, 3, 3);
        let b = random_complex(&mut r, 4, 4);
        let k = kron(&a, &b);
        for i in 0..3 {
            for p in 0..4 {
                for j in 0..3 {
                    for q in 0..4 {
                        let expect = a[[i, j]] * b[[p, q]];
                        assert_eq!(k[[i * 4 + p, j * 4 + q]], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_assemble_hermitian_flag_and_bilinearity() {
        let mut r = rng(12);
        let a = random_hermitian(&mut r, 2);
        let b = random_hermitian(&mut r, 3);
        let op = kron_assemble(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        assert!(op.hermitian);
        assert!(is_hermitian(&op.data));

        let a2 = a.mapv(|z| z * 2.5);
        let op2 = kron_assemble(std::slice::from_ref(&a2), std::slice::from_ref(&b)).unwrap();
        let scaled = op.data.mapv(|z| z * 2.5);
        let diff = &op2.data - &scaled;
        assert!(frobenius(&diff) < 1e-12);
    }

    #[test]
    fn partial_trace_examples() {
        // I_m ⊗ D → tr_n(D)·I_m
        let mut r = rng(13);
        let d = random_complex(&mut r, 4, 4);
        let op = BlockOperator::new(3, 4, kron(&CMat::eye(3), &d)).unwrap();
        let pt = partial_trace_n(&op);
        let trn = (0..4).map(|a| d[[a, a]]).sum::<Complex64>() / 4.0;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { trn } else { c(0.0, 0.0) };
                assert!((pt[[i, j]] - expect).norm() < 1e-14);
            }
        }

        // c ⊗ I_n → c
        let cm = random_complex(&mut r, 3, 3);
        let op = BlockOperator::new(3, 5, kron(&cm, &CMat::eye(5))).unwrap();
        let pt = partial_trace_n(&op);
        let diff = &pt - &cm;
        assert!(frobenius(&diff) < 1e-13);
    }

    #[test]
    fn partial_trace_matches_index_loop() {
        let mut r = rng(14);
        let data = random_complex(&mut r, 12, 12);
        let op = BlockOperator::new(3, 4, data.clone()).unwrap();
        let pt = partial_trace_n(&op);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = c(0.0, 0.0);
                for a in 0..4 {
                    acc += data[[i * 4 + a, j * 4 + a]];
                }
                assert!((pt[[i, j]] - acc / 4.0).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn resolvent_of_zero_is_minus_i() {
        let op = BlockOperator::new(2, 3, CMat::zeros((6, 6))).unwrap();
        let lambda = HalfPlanePoint::from_scalar(c(0.0, 1.0), 2).unwrap();
        let r = resolvent(&op, &lambda).unwrap();
        let expect = CMat::eye(6).mapv(|z| z * c(0.0, -1.0));
        let diff = &r.data - &expect;
        assert!(frobenius(&diff) < 1e-14);
    }

    #[test]
    fn resolvent_diagonal_scalar_case() {
        let mu = [1.0, -2.0, 0.5];
        let d = CMat::from_diag(&ndarray::arr1(&[c(1.0, 0.0), c(-2.0, 0.0), c(0.5, 0.0)]));
        let op = BlockOperator::new(1, 3, d).unwrap();
        let z = c(0.0, 2.0);
        let lambda = HalfPlanePoint::from_scalar(z, 1).unwrap();
        let r = resolvent(&op, &lambda).unwrap();
        for (k, &m) in mu.iter().enumerate() {
            let expect = (z - m).inv();
            assert!((r.data[[k, k]] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn resolvent_norm_bound() {
        // Lemma-style bound: ||(lambda ⊗ I − H)^{-1}|| ≤ ||Im(lambda)^{-1}||.
        let mut r = rng(15);
        for trial in 0..20 {
            let h = random_hermitian(&mut r, 6 + (trial % 3));
            let n = h.nrows();
            let op = BlockOperator::new(1, n, h).unwrap();
            let lam = c(trial as f64 * 0.3 - 2.0, 1.0);
            let lambda = HalfPlanePoint::from_scalar(lam, 1).unwrap();
            let res = resolvent(&op, &lambda).unwrap();
            let bound = 1.0 / lambda.im_min_eig();
            assert!(operator_norm(&res.data) <= bound + 1e-9);
        }
    }

    #[test]
    fn resolvent_matrix_halfplane_norm_bound() {
        let mut r = rng(16);
        for _ in 0..10 {
            let h = random_hermitian(&mut r, 8);
            let op = BlockOperator::new(2, 4, h).unwrap();
            let base = random_hermitian(&mut r, 2);
            let lam = &base + &CMat::eye(2).mapv(|z| z * c(0.0, 1.2));
            let lambda = HalfPlanePoint::new(lam).unwrap();
            let res = resolvent(&op, &lambda).unwrap();
            let bound = 1.0 / lambda.im_min_eig();
            assert!(operator_norm(&res.data) <= bound + 1e-9);
        }
    }

    #[test]
    fn partial_trace_of_resolvent_has_negative_imag_part() {
        let mut r = rng(17);
        let h = random_hermitian(&mut r, 12);
        let op = BlockOperator::new(3, 4, h).unwrap();
        let lambda = HalfPlanePoint::from_scalar(c(0.3, 0.7), 3).unwrap();
        let res = resolvent(&op, &lambda).unwrap();
        let g = partial_trace_n(&res);
        let im = imag_part(&g);
        let eigs = hermitian_eigvals(&im).unwrap();
        assert!(eigs.last().copied().unwrap() < 0.0);
    }

    #[test]
    fn block_row_sum_bound() {
        // For each block column k: sum_l ||M_{lk}||^2 ≤ m ||M||^2.
        let mut r = rng(18);
        for _ in 0..5 {
            let data = random_complex(&mut r, 12, 12);
            let op = BlockOperator::new(3, 4, data).unwrap();
            let total = operator_norm(&op.data);
            for k in 0..3 {
                let mut sum = 0.0;
                for l in 0..3 {
                    let block = op
                        .data
                        .slice(ndarray::s![l * 4..(l + 1) * 4, k * 4..(k + 1) * 4])
                        .to_owned();
                    sum += operator_norm(&block).powi(2);
                }
                assert!(sum <= 3.0 * total * total + 1e-9);
            }
        }
    }

    #[test]
    fn operator_norm_examples() {
        let d = CMat::from_diag(&ndarray::arr1(&[c(3.0, 0.0), c(-5.0, 0.0)]));
        assert_abs_diff_eq!(operator_norm(&d), 5.0, epsilon = 1e-12);

        // A unitary: 2x2 rotation.
        let th = 0.73f64;
        let mut u = CMat::zeros((2, 2));
        u[[0, 0]] = c(th.cos(), 0.0);
        u[[0, 1]] = c(-th.sin(), 0.0);
        u[[1, 0]] = c(th.sin(), 0.0);
        u[[1, 1]] = c(th.cos(), 0.0);
        assert_abs_diff_eq!(operator_norm(&u), 1.0, epsilon = 1e-12);

        // Random M: matches sqrt of top eigenvalue of M*M.
        let mut r = rng(19);
        let m = random_complex(&mut r, 7, 7);
        let mm = adjoint(&m).dot(&m);
        let eigs = hermitian_eigvals(&hermitize(&mm)).unwrap();
        let expect = eigs.last().unwrap().max(0.0).sqrt();
        assert_abs_diff_eq!(operator_norm(&m), expect, epsilon = 1e-9 * expect.max(1.0));
    }

    #[test]
    fn hermitian_eigs_examples() {
        let d = CMat::from_diag(&ndarray::arr1(&[c(2.0, 0.0), c(1.0, 0.0)]));
        let (w, _) = hermitian_eigs(&d).unwrap();
        assert_eq!(w.len(), 2);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-14);

        let mut x = CMat::zeros((2, 2));
        x[[0, 1]] = c(1.0, 0.0);
        x[[1, 0]] = c(1.0, 0.0);
        let (w, _) = hermitian_eigs(&x).unwrap();
        assert_abs_diff_eq!(w[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn hermitian_eigs_residual() {
        let mut r = rng(20);
        let h = random_hermitian(&mut r, 50);
        let (w, v) = hermitian_eigs(&h).unwrap();
        let lam = CMat::from_diag(&ndarray::arr1(
            &w.iter().map(|x| c(*x, 0.0)).collect::<Vec<_>>(),
        ));
        let resid = h.dot(&v) - v.dot(&lam);
        assert!(operator_norm(&resid) <= 1e-9 * operator_norm(&h));
        // Ascending order.
        for k in 1..w.len() {
            assert!(w[k] >= w[k - 1]);
        }
    }

    #[test]
    fn hermitian_eigs_rejects_non_hermitian() {
        let mut m = CMat::zeros((2, 2));
        m[[0, 1]] = c(1.0, 0.0);
        assert!(matches!(
            hermitian_eigs(&m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn half_plane_rejects_real_matrix() {
        let m = CMat::eye(2);
        assert!(matches!(
            HalfPlanePoint::new(m),
            Err(Error::NotHalfPlane { .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let mut r = rng(21);
        let m = random_complex(&mut r, 5, 5);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }
}
