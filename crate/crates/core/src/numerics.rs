//! Dense linear-algebra kernel used by the solver modules.
//!
//! Everything downstream expresses its matrix work through this module:
//! complex eigen-decomposition of general real matrices with left *and*
//! right eigenvectors, a deterministic spectral ordering, SVD-based left
//! nullvectors and rank diagnostics, least squares for stacked systems via
//! QR, and a scaling-and-squaring matrix exponential.
//!
//! Eigenvalues come from the real Schur form; the eigenvectors for each
//! eigenvalue λ are recovered from the singular direction of smallest
//! singular value of (M − λI). This stays well-behaved near (but not at)
//! repeated eigenvalues and hands us the rank diagnostics from the same
//! factorization. Spectra of interest here are simple by assumption, so
//! no Jordan machinery is attempted: suspicious clustering is reported,
//! not repaired.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C = Complex64;
pub type CMat = DMatrix<C>;
pub type CVec = DVector<C>;
pub type CRow = RowDVector<C>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Relative residual allowed for computed eigenpairs.
pub const EIG_RESIDUAL_TOL: f64 = 1e-10;
/// Default "numerically zero" threshold for rank decisions.
pub const TOL_ZERO_DEFAULT: f64 = 1e-10;
/// Default "safely nonzero" threshold for rank decisions.
pub const TOL_NONZERO_DEFAULT: f64 = 1e-6;

const ITER_CAP: usize = 100_000;

pub fn complexify(m: &RMat) -> CMat {
    m.map(|x| C::new(x, 0.0))
}

pub fn c_identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

fn square_dim(m: &CMat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// How the eigenvalues of a [`Spectrum`] are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumOrdering {
    /// Whatever order the factorization produced.
    AsComputed,
    /// Decreasing modulus; within a conjugate pair the member with
    /// positive imaginary part first; remaining ties broken by
    /// descending real part, then descending imaginary part.
    ModulusDescending,
}

/// Full complex spectrum of a real square matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues.
    pub values: CVec,
    /// Row `k` is a unit-norm left eigenvector of `values[k]`.
    pub left: CMat,
    /// Column `k` is a unit-norm right eigenvector of `values[k]`.
    pub right: CMat,
    pub ordering: SpectrumOrdering,
}

fn schur_eigenvalues(m: &RMat) -> Result<CVec> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, ITER_CAP)
        .ok_or_else(|| Error::Numerical("Schur eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues())
}

// Deflation tolerance for the SVD iteration. nalgebra's own `SVD::new`
// uses 5ε; a plain ε fails to deflate some near-singular bidiagonals and
// yields a broken factorization.
const SVD_EPS: f64 = 5.0 * f64::EPSILON;

/// Singular values (descending) and the right-singular direction of the
/// smallest singular value.
///
/// The U factor of the complex SVD is never used anywhere in this crate:
/// it comes out inaccurate for some near-singular inputs in this
/// nalgebra version, while the V factor holds to machine precision.
/// Left directions are recovered from the adjoint's V factor instead.
fn svd_sigma_vmin(m: &CMat) -> Result<(RVec, CVec)> {
    let n = m.nrows().min(m.ncols());
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), false, true, SVD_EPS, ITER_CAP)
        .ok_or_else(|| Error::Numerical("SVD iteration did not converge".into()))?;
    let v_t = svd.v_t.expect("v_t was requested");
    Ok((svd.singular_values, v_t.row(n - 1).adjoint()))
}

/// Singular values plus the left null-direction row (the row w with
/// w·M ≈ 0 when σ_min ≈ 0), via the adjoint's right factor.
fn svd_sigma_left_row(m: &CMat) -> Result<(RVec, CRow)> {
    let (sigma, x) = svd_sigma_vmin(&m.adjoint())?;
    Ok((sigma, x.adjoint()))
}

fn singular_values(m: &CMat) -> Result<RVec> {
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), false, false, SVD_EPS, ITER_CAP)
        .ok_or_else(|| Error::Numerical("SVD iteration did not converge".into()))?;
    Ok(svd.singular_values)
}

/// Full complex spectrum (values plus left and right eigenvectors) of a
/// general real matrix, in the order the eigenvalue iteration produced.
///
/// Every eigenpair is verified to satisfy its defining equation to within
/// [`EIG_RESIDUAL_TOL`] relative to ‖M‖; a violation is reported as a
/// numerical failure rather than silently returned.
pub fn eig_general(m: &RMat) -> Result<Spectrum> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }

    let values = schur_eigenvalues(m)?;
    let mc = complexify(m);
    let scale = m.norm().max(f64::MIN_POSITIVE);

    let mut left = CMat::zeros(n, n);
    let mut right = CMat::zeros(n, n);
    for k in 0..n {
        let mut shifted = mc.clone();
        for i in 0..n {
            shifted[(i, i)] -= values[k];
        }
        // The singular directions of smallest singular value span the
        // (right/left) near-nullspaces of M − λI.
        let (_, vmin) = svd_sigma_vmin(&shifted)?;
        right.set_column(k, &vmin);
        let (_, lrow) = svd_sigma_left_row(&shifted)?;
        left.row_mut(k).copy_from(&lrow);
    }

    let spectrum = Spectrum {
        values,
        left,
        right,
        ordering: SpectrumOrdering::AsComputed,
    };
    for k in 0..n {
        let lam = spectrum.values[k];
        let lres = (spectrum.left.row(k) * &mc - spectrum.left.row(k) * lam).norm();
        let rres = (&mc * spectrum.right.column(k) - spectrum.right.column(k) * lam).norm();
        if lres > EIG_RESIDUAL_TOL * scale || rres > EIG_RESIDUAL_TOL * scale {
            return Err(Error::Numerical(format!(
                "eigenpair {k} residual too large (left {:.3e}, right {:.3e}, scale {:.3e})",
                lres, rres, scale
            )));
        }
    }
    Ok(spectrum)
}

/// Comparator for the deterministic spectral order: decreasing modulus,
/// then decreasing real part, then decreasing imaginary part. For an
/// exactly conjugate pair this places the member with positive imaginary
/// part first.
pub fn spectral_order(a: &C, b: &C) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Sorts a spectrum into the deterministic order of [`spectral_order`],
/// permuting left rows and right columns consistently.
pub fn sort_spectrum(s: &Spectrum) -> Spectrum {
    let n = s.values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| spectral_order(&s.values[i], &s.values[j]));

    let values = CVec::from_iterator(n, idx.iter().map(|&i| s.values[i]));
    let mut left = CMat::zeros(n, n);
    let mut right = CMat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        left.row_mut(k).copy_from(&s.left.row(i));
        right.set_column(k, &s.right.column(i));
    }
    Spectrum {
        values,
        left,
        right,
        ordering: SpectrumOrdering::ModulusDescending,
    }
}

/// Left nullvector of a matrix that is rank-deficient by exactly one,
/// normalized so its first component is exactly 1.
///
/// Rank ratios are measured against σ_max; see
/// [`left_nullvector_scaled`] when the matrix is an analytically-zero
/// combination of large terms.
pub fn left_nullvector(m: &CMat, tol: f64) -> Result<CRow> {
    left_nullvector_scaled(m, tol, 0.0)
}

/// Like [`left_nullvector`], but rank ratios are taken against
/// max(σ_max, `scale_floor`). Callers that build `m` by cancelling
/// O(scale) terms pass that scale here; otherwise a matrix that is
/// analytically zero (e.g. the 1×1 bracket of the single-phase model)
/// would be judged against its own rounding noise.
pub fn left_nullvector_scaled(m: &CMat, tol: f64, scale_floor: f64) -> Result<CRow> {
    let n = square_dim(m)?;
    let (sigma, row) = svd_sigma_left_row(m)?;
    let scale = sigma[0].max(scale_floor);

    if scale == 0.0 {
        // Exactly the zero matrix.
        if n == 1 {
            return Ok(CRow::from_element(1, C::new(1.0, 0.0)));
        }
        return Err(Error::Numerical(format!(
            "rank deficiency is {n}, expected exactly 1 (zero matrix)"
        )));
    }
    if sigma[n - 1] > tol * scale {
        return Err(Error::Numerical(format!(
            "matrix is numerically nonsingular: σ_min/σ_max = {:.3e} > {:.3e}",
            sigma[n - 1] / scale,
            tol
        )));
    }
    if n >= 2 && sigma[n - 2] <= tol * scale {
        return Err(Error::Numerical(format!(
            "rank deficiency exceeds 1: second-smallest σ ratio {:.3e} ≤ {:.3e}",
            sigma[n - 2] / scale,
            tol
        )));
    }

    let mut v = row;
    let pivot = v[0];
    // The singular vector has unit norm, so this is a relative test.
    if pivot.norm() < 1e-8 {
        return Err(Error::Numerical(
            "left nullvector has numerically zero first component; normalization impossible"
                .into(),
        ));
    }
    v /= pivot;
    v[0] = C::new(1.0, 0.0);
    Ok(v)
}

/// Least-squares solution of a stacked system A·x = b with A of size
/// n×m, n ≥ m, via Householder QR. Errors when A is numerically rank
/// deficient (the stacked system is then ill-posed).
pub fn qr_solve_stacked(a: &CMat, b: &CVec) -> Result<CVec> {
    let (n, m) = a.shape();
    if b.len() != n {
        return Err(Error::Dimension(format!(
            "right-hand side length {} does not match {} rows",
            b.len(),
            n
        )));
    }
    if n < m {
        return Err(Error::Dimension(format!(
            "stacked system must have at least as many rows as unknowns ({n} < {m})"
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..m {
        let d = r[(i, i)].norm();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if dmax == 0.0 || dmin <= 1e-12 * dmax {
        return Err(Error::Numerical(format!(
            "stacked matrix has numerical rank < {m} (R diagonal ratio {:.3e})",
            if dmax == 0.0 { 0.0 } else { dmin / dmax }
        )));
    }
    let qtb = qr.q().adjoint() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("triangular solve failed in stacked QR".into()))
}

// Padé(13) numerator coefficients for the matrix exponential
// (scaling-and-squaring; Higham 2005). Stored as f64; the values above
// 2^53 round, which perturbs the approximant far below its own error.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const PADE13_THETA: f64 = 5.371920351148152;

fn one_norm(m: &RMat) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|x| x.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential of a real square matrix by scaling-and-squaring
/// with a Padé(13) approximant.
pub fn matrix_exp(m: &RMat) -> Result<RMat> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }

    let norm = one_norm(m);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    if s > 64 {
        return Err(Error::Numerical(format!(
            "matrix norm {norm:.3e} too large for the exponential (overflow)"
        )));
    }

    let a = m / 2f64.powi(s as i32);
    let eye = RMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let w1 = &a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9];
    let w2 = &w1 * &a6 + &a6 * PADE13[7] + &a4 * PADE13[5] + &a2 * PADE13[3] + &eye * PADE13[1];
    let u = &a * &w2;
    let z1 = &a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8];
    let v = &z1 * &a6 + &a6 * PADE13[6] + &a4 * PADE13[4] + &a2 * PADE13[2] + &eye * PADE13[0];

    let num = &v + &u;
    let den = &v - &u;
    let mut e = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::Numerical("Padé denominator is singular".into()))?;
    for _ in 0..s {
        e = &e * &e;
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "overflow while squaring the matrix exponential".into(),
        ));
    }
    Ok(e)
}

/// Singular-value report attached to rank diagnostics.
#[derive(Debug, Clone)]
pub struct RankReport {
    /// True iff the matrix has numerical rank exactly m−1.
    pub deficient_by_one: bool,
    /// Singular values in decreasing order.
    pub singular_values: Vec<f64>,
    /// Denominator used for the ratios.
    pub scale: f64,
}

/// Tests whether an m×m matrix has numerical rank exactly m−1:
/// σ_min/σ_max ≤ `tol_zero` and σ_{m−1}/σ_max ≥ `tol_nonzero`.
pub fn rank_is_m_minus_1(m: &CMat, tol_zero: f64, tol_nonzero: f64) -> Result<RankReport> {
    rank_is_m_minus_1_scaled(m, tol_zero, tol_nonzero, 0.0)
}

/// Like [`rank_is_m_minus_1`], with ratios taken against
/// max(σ_max, `scale_floor`); see [`left_nullvector_scaled`].
pub fn rank_is_m_minus_1_scaled(
    m: &CMat,
    tol_zero: f64,
    tol_nonzero: f64,
    scale_floor: f64,
) -> Result<RankReport> {
    let n = square_dim(m)?;
    let sigma = singular_values(m)?;
    let scale = sigma[0].max(scale_floor);
    let deficient_by_one = if scale == 0.0 {
        n == 1
    } else {
        let zero_ok = sigma[n - 1] <= tol_zero * scale;
        let nonzero_ok = n < 2 || sigma[n - 2] >= tol_nonzero * scale;
        zero_ok && nonzero_ok
    };
    Ok(RankReport {
        deficient_by_one,
        singular_values: sigma.iter().copied().collect(),
        scale,
    })
}

/// Reciprocal condition estimate σ_min/σ_max (0 for the zero matrix).
pub fn rcond(m: &CMat) -> Result<f64> {
    let sigma = singular_values(m)?;
    let n = sigma.len();
    if sigma[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(sigma[n - 1] / sigma[0])
}

/// Inverse of a complex square matrix (LU), erroring on singularity.
pub fn cinverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("matrix is singular, cannot invert".into()))
}

/// Row-vector solve x = row · A⁻¹, i.e. the solution of x·A = row.
pub fn row_solve(row: &CRow, a: &CMat) -> Result<CRow> {
    let at = a.transpose();
    let x = at
        .lu()
        .solve(&row.transpose())
        .ok_or_else(|| Error::Numerical("singular matrix in row solve".into()))?;
    Ok(x.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: usize, cols: usize, data: &[f64]) -> CMat {
        CMat::from_iterator(rows, cols, data.iter().map(|&x| C::new(x, 0.0)))
    }

    fn rm(rows: usize, cols: usize, data: &[f64]) -> RMat {
        // row-major input for readability
        RMat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn eig_identity_has_unit_eigenvalues() {
        let s = eig_general(&RMat::identity(2, 2)).unwrap();
        for k in 0..2 {
            assert!((s.values[k] - C::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn eig_rotation_generator_is_pure_imaginary() {
        let m = rm(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let s = sort_spectrum(&eig_general(&m).unwrap());
        assert!((s.values[0] - C::new(0.0, 1.0)).norm() < 1e-12);
        assert!((s.values[1] - C::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn eig_scalar_case() {
        // cμ·e·γ + T for the single-phase model λ=0.5, μ=1, c=1.
        let m = rm(1, 1, &[0.5]);
        let s = eig_general(&m).unwrap();
        assert!((s.values[0] - C::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sort_by_modulus_descending() {
        let m = rm(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let s = sort_spectrum(&eig_general(&m).unwrap());
        assert!((s.values[0].re - 2.0).abs() < 1e-12);
        assert!((s.values[1].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sort_conjugate_pair_positive_imaginary_first() {
        let spec = Spectrum {
            values: CVec::from_vec(vec![C::new(3.0, -4.0), C::new(3.0, 4.0)]),
            left: c_identity(2),
            right: c_identity(2),
            ordering: SpectrumOrdering::AsComputed,
        };
        let s = sort_spectrum(&spec);
        assert_eq!(s.values[0], C::new(3.0, 4.0));
        assert_eq!(s.values[1], C::new(3.0, -4.0));
    }

    #[test]
    fn sort_equal_modulus_reals_by_descending_real_part() {
        let spec = Spectrum {
            values: CVec::from_vec(vec![C::new(2.0, 0.0), C::new(-2.0, 0.0)]),
            left: c_identity(2),
            right: c_identity(2),
            ordering: SpectrumOrdering::AsComputed,
        };
        let s = sort_spectrum(&spec);
        assert_eq!(s.values[0], C::new(2.0, 0.0));
        assert_eq!(s.values[1], C::new(-2.0, 0.0));
    }

    #[test]
    fn nullvector_of_diagonal_matrix() {
        let m = cm(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let v = left_nullvector(&m, 1e-10).unwrap();
        assert_eq!(v[0], C::new(1.0, 0.0));
        assert!(v[1].norm() < 1e-12);
    }

    #[test]
    fn nullvector_of_rank_one_update() {
        // e·γ − I with γ = (0.3, 0.7): γ is a left nullvector, so after
        // normalization the result is (1, 7/3).
        let m = rm(2, 2, &[0.3 - 1.0, 0.7, 0.3, 0.7 - 1.0]);
        let v = left_nullvector(&complexify(&m), 1e-10).unwrap();
        assert_eq!(v[0], C::new(1.0, 0.0));
        assert!((v[1] - C::new(7.0 / 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn nullvector_rejects_full_rank() {
        let m = cm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(left_nullvector(&m, 1e-10).is_err());
    }

    #[test]
    fn nullvector_of_scalar_zero_with_scale_floor() {
        // A 1×1 matrix that is an analytically-zero combination of O(1)
        // terms; judged against the floor it is rank deficient.
        let m = cm(1, 1, &[3e-17]);
        let v = left_nullvector_scaled(&m, 1e-10, 1.0).unwrap();
        assert_eq!(v[0], C::new(1.0, 0.0));
    }

    #[test]
    fn nullvector_scaling_invariance() {
        let m = rm(2, 2, &[0.3 - 1.0, 0.7, 0.3, 0.7 - 1.0]);
        let base = left_nullvector(&complexify(&m), 1e-10).unwrap();
        // Power-of-two scalings round-trip exactly through the SVD.
        for scale in [2.0, 0.5, 256.0] {
            let scaled = complexify(&m) * C::new(scale, 0.0);
            let v = left_nullvector(&scaled, 1e-10).unwrap();
            assert_eq!(v, base);
        }
        let v3 = left_nullvector(&(complexify(&m) * C::new(3.0, 0.0)), 1e-10).unwrap();
        assert!((v3 - &base).norm() < 1e-13);
    }

    #[test]
    fn qr_single_column() {
        let a = cm(2, 1, &[1.0, 0.0]);
        let b = CVec::from_vec(vec![C::new(2.0, 0.0), C::new(0.0, 0.0)]);
        let x = qr_solve_stacked(&a, &b).unwrap();
        assert!((x[0] - C::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn qr_consistent_stacked_system() {
        let a = CMat::from_row_slice(
            3,
            2,
            &[
                C::new(1.0, 0.0),
                C::new(0.0, 0.0),
                C::new(0.0, 0.0),
                C::new(1.0, 0.0),
                C::new(1.0, 0.0),
                C::new(1.0, 0.0),
            ],
        );
        let b = CVec::from_vec(vec![C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(3.0, 0.0)]);
        let x = qr_solve_stacked(&a, &b).unwrap();
        assert!((x[0] - C::new(1.0, 0.0)).norm() < 1e-12);
        assert!((x[1] - C::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn qr_rejects_rank_deficient() {
        let a = cm(3, 2, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let b = CVec::from_vec(vec![C::new(1.0, 0.0); 3]);
        assert!(qr_solve_stacked(&a, &b).is_err());
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exp(&RMat::zeros(3, 3)).unwrap();
        assert!((e - RMat::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn exp_of_diagonal() {
        let m = rm(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let e = matrix_exp(&m).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-13);
        assert!((e[(1, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn exp_of_nilpotent_truncates() {
        let m = rm(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exp(&m).unwrap();
        let want = rm(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((e - want).norm() < 1e-14);
    }

    #[test]
    fn rank_report_examples() {
        let deficient = cm(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(
            rank_is_m_minus_1(&deficient, 1e-10, 1e-6)
                .unwrap()
                .deficient_by_one
        );
        assert!(
            !rank_is_m_minus_1(&c_identity(2), 1e-10, 1e-6)
                .unwrap()
                .deficient_by_one
        );
    }

    #[test]
    fn row_solve_matches_inverse() {
        let a = cm(2, 2, &[2.0, 1.0, 0.0, 4.0]);
        let row = CRow::from_row_slice(&[C::new(1.0, 0.0), C::new(2.0, 0.0)]);
        let x = row_solve(&row, &a).unwrap();
        assert!((&x * &a - row).norm() < 1e-13);
    }

    fn small_matrix() -> impl Strategy<Value = RMat> {
        (2usize..=4)
            .prop_flat_map(|n| {
                proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| {
                    RMat::from_vec(n, n, v)
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sort_is_an_idempotent_permutation(m in small_matrix()) {
            let s = eig_general(&m);
            prop_assume!(s.is_ok());
            let s = s.unwrap();
            let sorted = sort_spectrum(&s);
            let twice = sort_spectrum(&sorted);
            prop_assert_eq!(&sorted.values, &twice.values);
            // Same multiset of eigenvalues.
            let mut a: Vec<C> = s.values.iter().copied().collect();
            let mut b: Vec<C> = sorted.values.iter().copied().collect();
            a.sort_by(spectral_order);
            b.sort_by(spectral_order);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x, y);
            }
        }

        #[test]
        fn right_vectors_reconstruct_the_matrix(m in small_matrix()) {
            let s = eig_general(&m);
            prop_assume!(s.is_ok());
            let s = s.unwrap();
            // Skip draws with clustered spectra or ill-conditioned
            // eigenvector bases; those are excluded downstream anyway.
            let n = s.values.len();
            let scale = m.norm().max(1.0);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        prop_assume!((s.values[i] - s.values[j]).norm() > 0.05 * scale);
                    }
                }
            }
            let f = s.right.clone();
            let finv = cinverse(&f);
            prop_assume!(finv.is_ok());
            let finv = finv.unwrap();
            prop_assume!(rcond(&f).unwrap() > 1e-6);
            let d = CMat::from_diagonal(&s.values);
            let rebuilt = &f * d * finv;
            prop_assert!((rebuilt - complexify(&m)).norm() <= 1e-9 * m.norm().max(1.0));
        }

        #[test]
        fn exp_times_exp_of_negation_is_identity(m in small_matrix()) {
            // ‖M‖ ≤ 10 regime by construction (entries ≤ 3, n ≤ 4).
            let e = matrix_exp(&m).unwrap();
            let einv = matrix_exp(&(-&m)).unwrap();
            let n = m.nrows();
            prop_assert!((e * einv - RMat::identity(n, n)).norm() < 1e-10);
        }
    }
}
