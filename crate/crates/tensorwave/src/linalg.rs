//! Dense complex linear algebra on top of LAPACK: Hermitian and general
//! eigendecompositions, PSD pseudo-inverses and matrix square roots.
//!
//! All routines take row-major `Array2<Complex64>` and validate their
//! numerical preconditions instead of silently returning garbage.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Eigh, UPLO};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;
pub type RVec = Array1<f64>;

/// Default relative tolerance separating numerical zeros from real rank.
/// Gram null spaces in this code base sit at least eight orders of magnitude
/// below the smallest genuine eigenvalue, so anything in [1e-12, 1e-4] works.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: relative deviation {deviation:.3e}")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.3e}")]
    NotPsd { min_eig: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("LAPACK backend failure: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn check_finite(m: &CMat) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn check_square(m: &CMat) -> Result<()> {
    if m.nrows() == m.ncols() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() })
    }
}

/// Relative deviation from Hermiticity, ‖m − m†‖ / max(‖m‖, 1e-300).
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let norm = frobenius(m).max(1e-300);
    frobenius(&(m - &dagger(m))) / norm
}

/// Eigendecomposition of a Hermitian matrix. Eigenvalues ascending; the
/// columns of the returned matrix are the corresponding orthonormal
/// eigenvectors. Inputs further than `1e-12` (relative) from Hermitian are
/// rejected with the measured deviation.
pub fn hermitian_eig(m: &CMat) -> Result<(RVec, CMat)> {
    check_square(m)?;
    check_finite(m)?;
    let deviation = hermiticity_deviation(m);
    if deviation > 1e-12 {
        return Err(LinalgError::NotHermitian { deviation });
    }
    // Symmetrize so LAPACK sees an exactly Hermitian operator.
    let h = (m + &dagger(m)).mapv(|z| 0.5 * z);
    let (w, v) = h.eigh(UPLO::Lower).map_err(|e| LinalgError::Backend(e.to_string()))?;
    // The backend hands the row-major buffer to column-major LAPACK, so the
    // returned columns diagonalize conj(h); conjugate to get eigenvectors of h.
    Ok((w, v.mapv(|z| z.conj())))
}

/// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix.
///
/// Eigenvalues below `rel_tol * max_eigenvalue` are treated as exact zeros.
/// Returns the pseudo-inverse and the retained rank. The all-zero matrix maps
/// to the all-zero matrix with rank 0.
pub fn pseudo_inverse(m: &CMat, rel_tol: f64) -> Result<(CMat, usize)> {
    let (w, v) = hermitian_eig(m)?;
    let max_eig = w.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    if max_eig == 0.0 {
        return Ok((CMat::zeros((m.nrows(), m.ncols())), 0));
    }
    let min_eig = w.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * max_eig {
        return Err(LinalgError::NotPsd { min_eig });
    }
    let cut = rel_tol * max_eig;
    let mut rank = 0;
    let inv_w: Vec<f64> = w
        .iter()
        .map(|&x| {
            if x > cut {
                rank += 1;
                1.0 / x
            } else {
                0.0
            }
        })
        .collect();
    Ok((rescale_eigbasis(&v, &inv_w), rank))
}

/// Hermitian PSD square root and pseudo-inverse square root, sharing one
/// eigendecomposition and the given rank cutoff.
pub fn psd_sqrt_pinv_sqrt(m: &CMat, rel_tol: f64) -> Result<(CMat, CMat)> {
    let (w, v) = hermitian_eig(m)?;
    let max_eig = w.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let min_eig = w.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_eig > 0.0 && min_eig < -1e-10 * max_eig {
        return Err(LinalgError::NotPsd { min_eig });
    }
    let cut = rel_tol * max_eig;
    let sq: Vec<f64> = w.iter().map(|&x| if x > cut { x.sqrt() } else { 0.0 }).collect();
    let isq: Vec<f64> = w.iter().map(|&x| if x > cut { 1.0 / x.sqrt() } else { 0.0 }).collect();
    Ok((rescale_eigbasis(&v, &sq), rescale_eigbasis(&v, &isq)))
}

/// V · diag(scale) · V†
fn rescale_eigbasis(v: &CMat, scale: &[f64]) -> CMat {
    let mut scaled = v.clone();
    for (j, &s) in scale.iter().enumerate() {
        scaled.column_mut(j).mapv_inplace(|z| z * s);
    }
    scaled.dot(&dagger(v))
}

/// Eigenvalues of a general complex square matrix (non-Hermitian allowed).
pub fn general_eig(m: &CMat) -> Result<CVec> {
    check_square(m)?;
    check_finite(m)?;
    let (e, _) = m.eig().map_err(|e| LinalgError::Backend(e.to_string()))?;
    Ok(e)
}

/// Eigenvalues and right eigenvectors (columns) of a general complex matrix.
pub fn general_eig_vecs(m: &CMat) -> Result<(CVec, CMat)> {
    check_square(m)?;
    check_finite(m)?;
    let (e, v) = m.eig().map_err(|e| LinalgError::Backend(e.to_string()))?;
    Ok((e, v))
}

/// Solve the dense linear system a·x = b.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    use ndarray_linalg::Solve;
    check_square(a)?;
    check_finite(a)?;
    a.solve(b).map_err(|e| LinalgError::Backend(e.to_string()))
}

/// Kronecker product, row-major convention: out[(i·p+k),(j·q+l)] = a[i,j]·b[k,l].
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn identity(n: usize) -> CMat {
    CMat::eye(n)
}

/// Smallest singular value of (m − λI) relative to ‖m‖; the residual oracle
/// for general eigenvalues.
pub fn eigenvalue_residual(m: &CMat, lambda: C64) -> f64 {
    let n = m.nrows();
    let shifted = m - &(CMat::eye(n) * lambda);
    // Smallest singular value via the Hermitian eigenproblem of S†S.
    let gram = dagger(&shifted).dot(&shifted);
    let (w, _) = hermitian_eig(&gram).expect("S†S is Hermitian by construction");
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    min.sqrt() / frobenius(m).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub fn random_matrix(n: usize, m: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_shape_fn((n, m), |_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let a = random_matrix(n, n, seed);
        (&a + &dagger(&a)).mapv(|z| 0.5 * z)
    }

    #[test]
    fn hermitian_eig_identity() {
        let (w, _) = hermitian_eig(&identity(3)).unwrap();
        for &x in w.iter() {
            assert!((x - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hermitian_eig_diagonal_sorted() {
        let m = array![[c(2.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let (w, _) = hermitian_eig(&m).unwrap();
        assert!((w[0] + 1.0).abs() < 1e-14);
        assert!((w[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermitian_eig_reconstructs() {
        let m = random_hermitian(8, 1);
        let (w, v) = hermitian_eig(&m).unwrap();
        let rec = rescale_eigbasis(&v, w.as_slice().unwrap());
        assert!(frobenius(&(&rec - &m)) / frobenius(&m) < 1e-10);
        let vv = dagger(&v).dot(&v);
        assert!(frobenius(&(&vv - &identity(8))) < 1e-10);
    }

    #[test]
    fn hermitian_eig_rejects_non_hermitian() {
        let m = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        assert!(matches!(hermitian_eig(&m), Err(LinalgError::NotHermitian { .. })));
    }

    #[test]
    fn pinv_identity_and_diag() {
        let (p, rank) = pseudo_inverse(&identity(4), RANK_TOL).unwrap();
        assert_eq!(rank, 4);
        assert!(frobenius(&(&p - &identity(4))) < 1e-12);

        let m = array![[c(4.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let (p, rank) = pseudo_inverse(&m, RANK_TOL).unwrap();
        assert_eq!(rank, 1);
        assert!((p[(0, 0)].re - 0.25).abs() < 1e-14);
        assert!(p[(1, 1)].norm() < 1e-14);
    }

    #[test]
    fn pinv_zero_matrix() {
        let (p, rank) = pseudo_inverse(&CMat::zeros((3, 3)), RANK_TOL).unwrap();
        assert_eq!(rank, 0);
        assert!(frobenius(&p) == 0.0);
    }

    #[test]
    fn pinv_random_rank3_psd() {
        // X = 6x3 random, m = X X† is PSD with rank 3 by construction.
        let x = random_matrix(6, 3, 7);
        let m = x.dot(&dagger(&x));
        let (p, rank) = pseudo_inverse(&m, RANK_TOL).unwrap();
        assert_eq!(rank, 3);
        // Penrose identities
        let mpm = m.dot(&p).dot(&m);
        let pmp = p.dot(&m).dot(&p);
        assert!(frobenius(&(&mpm - &m)) / frobenius(&m) < 1e-9);
        assert!(frobenius(&(&pmp - &p)) / frobenius(&p) < 1e-9);
        // Double application restores m on its range.
        let (pp, rank2) = pseudo_inverse(&p, RANK_TOL).unwrap();
        assert_eq!(rank2, 3);
        let proj = p.dot(&m);
        let m_range = proj.dot(&m).dot(&proj);
        assert!(frobenius(&(&pp - &m_range)) / frobenius(&m) < 1e-8);
    }

    #[test]
    fn general_eig_rotation_generator() {
        let m = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(-1.0, 0.0), c(0.0, 0.0)]];
        let mut e: Vec<f64> = general_eig(&m).unwrap().iter().map(|z| z.im).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] + 1.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn general_eig_triangular() {
        let m = array![
            [c(1.0, 0.0), c(2.0, 1.0), c(0.5, 0.0)],
            [c(0.0, 0.0), c(-3.0, 0.0), c(1.0, -1.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.25, 0.5)]
        ];
        let mut got: Vec<f64> = general_eig(&m).unwrap().iter().map(|z| z.re).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = [1.0, -3.0, 0.25];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn general_eig_residual_oracle() {
        let m = random_matrix(6, 6, 3);
        for &lambda in general_eig(&m).unwrap().iter() {
            assert!(eigenvalue_residual(&m, lambda) < 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_roundtrip() {
        let x = random_matrix(5, 5, 11);
        let m = x.dot(&dagger(&x));
        let (s, si) = psd_sqrt_pinv_sqrt(&m, RANK_TOL).unwrap();
        assert!(frobenius(&(&s.dot(&s) - &m)) / frobenius(&m) < 1e-10);
        let prod = s.dot(&si);
        // s·s⁻ projects onto the range (full rank here → identity).
        assert!(frobenius(&(&prod - &identity(5))) < 1e-9);
    }

    #[test]
    fn solve_roundtrip() {
        let a = random_matrix(6, 6, 21);
        let x = Array1::from_shape_fn(6, |i| c(i as f64 + 0.5, -(i as f64) * 0.3));
        let b = a.dot(&x);
        let got = solve(&a, &b).unwrap();
        let err: f64 = got.iter().zip(x.iter()).map(|(g, w)| (g - w).norm()).sum();
        assert!(err < 1e-10, "solve mismatch {err}");
    }

    #[test]
    fn kron_small() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)]];
        let b = array![[c(0.0, 1.0)], [c(3.0, 0.0)]];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (2, 2));
        assert_eq!(k[(0, 0)], c(0.0, 1.0));
        assert_eq!(k[(1, 1)], c(6.0, 0.0));
    }
}
