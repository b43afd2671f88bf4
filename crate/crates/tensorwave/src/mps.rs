//! Uniform (translation-invariant) matrix product states: canonical form,
//! transfer-matrix machinery, the orthonormal tangent basis, regularized
//! geometric sums, and dense finite-chain embeddings used as brute-force
//! oracles.
//!
//! Conventions used throughout the crate:
//! - The site tensor `A` is stored left-canonical, Σ_s A^s† A^s = 1. The
//!   physical index is written as a Vec over `s` of D×D bond matrices.
//! - Left environments have rows in the bra layer and columns in the ket
//!   layer and update as ℓ → Σ_s X^s† ℓ Y^s (bra X, ket Y).
//! - Right environments have rows in the ket layer, columns in the bra
//!   layer, update as r → Σ_s Y^s r X^s†; the right fixed point Γ satisfies
//!   Σ_s A^s Γ A^s† = Γ with Tr Γ = 1.
//! - A closed diagram evaluates to Tr(ℓ · r).
//! - Operators act on the ket: o[(s′, s)] = ⟨s′|o|s⟩ pairs s′ with the bra
//!   tensor and s with the ket tensor.

use crate::linalg::{
    self, dagger, frobenius, general_eig, hermitian_eig, identity, psd_sqrt_pinv_sqrt, CMat,
    CVec, RANK_TOL,
};
use ndarray::{Array1, Array3};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("non-injective MPS: transfer spectrum degenerate at the unit circle (|λ₂| = {lambda2:.6})")]
    NonInjective { lambda2: f64 },
    #[error("rank-deficient gauge: left fixed point has numerical rank {rank} < {dim}")]
    RankDeficientGauge { rank: usize, dim: usize },
    #[error("fixed-point iteration failed to converge: residual {residual:.3e}")]
    FixedPointStalled { residual: f64 },
    #[error("geometric sum did not converge: residual {residual:.3e}")]
    GeometricSum { residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate derivative site {0}")]
    DuplicateSite(usize),
    #[error("finite chain dimension {0} exceeds the dense-oracle cap")]
    ChainTooLarge(usize),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse failure in tensor file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, MpsError>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

// ───────────────────────── environment primitives ─────────────────────────

/// ℓ → Σ_s X^s† ℓ Y^s
pub fn lapply(bra: &[CMat], ket: &[CMat], l: &CMat) -> CMat {
    let d = l.dim();
    let mut out = CMat::zeros(d);
    for (x, y) in bra.iter().zip(ket.iter()) {
        out = out + dagger(x).dot(l).dot(y);
    }
    out
}

/// ℓ → Σ_{s′s} o[(s′,s)] X^{s′}† ℓ Y^{s}
pub fn lapply_op1(op: &CMat, bra: &[CMat], ket: &[CMat], l: &CMat) -> CMat {
    let mut out = CMat::zeros(l.dim());
    for (sp, x) in bra.iter().enumerate() {
        let xl = dagger(x).dot(l);
        for (s, y) in ket.iter().enumerate() {
            let o = op[(sp, s)];
            if o != ZERO {
                out = out + xl.dot(y).mapv(|z| z * o);
            }
        }
    }
    out
}

/// Two-site operator update:
/// ℓ → Σ h[(s′t′),(st)] X₂^{t′}† X₁^{s′}† ℓ Y₁^{s} Y₂^{t}
pub fn lapply_op2(
    h: &CMat,
    bra: (&[CMat], &[CMat]),
    ket: (&[CMat], &[CMat]),
    l: &CMat,
) -> CMat {
    let d = bra.0.len();
    let mut out = CMat::zeros(l.dim());
    for (sp, x1) in bra.0.iter().enumerate() {
        let x1l = dagger(x1).dot(l);
        for (s, y1) in ket.0.iter().enumerate() {
            let mid = x1l.dot(y1);
            for (tp, x2) in bra.1.iter().enumerate() {
                for (t, y2) in ket.1.iter().enumerate() {
                    let c = h[(sp * d + tp, s * d + t)];
                    if c != ZERO {
                        out = out + dagger(x2).dot(&mid).dot(y2).mapv(|z| z * c);
                    }
                }
            }
        }
    }
    out
}

/// r → Σ_s Y^s r X^s†
pub fn rapply(bra: &[CMat], ket: &[CMat], r: &CMat) -> CMat {
    let mut out = CMat::zeros(r.dim());
    for (x, y) in bra.iter().zip(ket.iter()) {
        out = out + y.dot(r).dot(&dagger(x));
    }
    out
}

/// Close a diagram: Tr(ℓ · r)
pub fn close(l: &CMat, r: &CMat) -> C64 {
    l.dot(r).diag().sum()
}

// ───────────────────────────── transfer map ──────────────────────────────

/// The D²×D² transfer map T(X, Y) between two rank-3 tensors of equal bond
/// dimension, with X on the bra layer and Y on the ket layer.
pub struct TransferMap {
    pub bra: Vec<CMat>,
    pub ket: Vec<CMat>,
}

impl TransferMap {
    pub fn new(bra: Vec<CMat>, ket: Vec<CMat>) -> Self {
        TransferMap { bra, ket }
    }

    pub fn bond(&self) -> usize {
        self.bra[0].nrows()
    }

    pub fn apply_left(&self, l: &CMat) -> CMat {
        lapply(&self.bra, &self.ket, l)
    }

    pub fn apply_right(&self, r: &CMat) -> CMat {
        rapply(&self.bra, &self.ket, r)
    }

    /// Dense matrix of the right action on vectorized right environments,
    /// vec-index (ket, bra) row-major: T[(a ā),(b b̄)] = Σ_s Y^s_{ab} conj(X^s_{ā b̄}).
    pub fn dense_right(&self) -> CMat {
        let d = self.bond();
        let mut t = CMat::zeros((d * d, d * d));
        for (x, y) in self.bra.iter().zip(self.ket.iter()) {
            for a in 0..d {
                for abar in 0..d {
                    for b in 0..d {
                        for bbar in 0..d {
                            t[(a * d + abar, b * d + bbar)] += y[(a, b)] * x[(abar, bbar)].conj();
                        }
                    }
                }
            }
        }
        t
    }
}

// ────────────────────────────── uniform MPS ──────────────────────────────

#[derive(Clone)]
pub struct UniformMps {
    /// physical dimension d
    pub phys: usize,
    /// bond dimension D
    pub bond: usize,
    /// site tensor, left-canonical: site[s] is the D×D matrix A^s
    pub site: Vec<CMat>,
    /// right fixed point Γ (Hermitian, PSD, trace 1)
    pub gamma: CMat,
    /// correlation length ξ = −1/ln|λ₂|, 0 for product states
    pub xi: f64,
}

impl UniformMps {
    pub fn transfer(&self) -> TransferMap {
        TransferMap::new(self.site.clone(), self.site.clone())
    }

    /// Left action of the reference transfer map, ℓ → Σ_s A^s† ℓ A^s.
    pub fn tleft(&self, l: &CMat) -> CMat {
        lapply(&self.site, &self.site, l)
    }

    /// Modulus of the subleading transfer eigenvalue.
    pub fn lambda2(&self) -> f64 {
        if self.xi == 0.0 {
            0.0
        } else {
            (-1.0 / self.xi).exp()
        }
    }
}

fn hermitize(m: &CMat) -> CMat {
    (m + &dagger(m)).mapv(|z| 0.5 * z)
}

/// Power iteration for the dominant fixed point of a completely positive
/// map on Hermitian matrices. Returns (eigenvalue, fixed point).
fn dominant_fixed_point<F: Fn(&CMat) -> CMat>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    init: Option<&CMat>,
) -> Result<(f64, CMat)> {
    let mut v = match init {
        Some(m) if m.dim() == (dim, dim) && frobenius(m) > 0.0 => hermitize(m),
        _ => identity(dim),
    };
    v /= C64::new(frobenius(&v), 0.0);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = hermitize(&apply(&v));
        let norm = frobenius(&w);
        if norm == 0.0 {
            return Err(MpsError::FixedPointStalled { residual: 1.0 });
        }
        let wn = w.mapv(|z| z / norm);
        residual = frobenius(&(&wn - &v)).min(frobenius(&(&wn + &v)));
        let eig = norm;
        v = wn;
        if residual < tol {
            // Fix the overall sign so the fixed point is PSD.
            let tr = v.diag().sum();
            if tr.re < 0.0 {
                v = v.mapv(|z| -z);
            }
            return Ok((eig, v));
        }
    }
    Err(MpsError::FixedPointStalled { residual })
}

/// Ritz values of a linear map on ℂ^n via a k-step Arnoldi iteration.
fn arnoldi_ritz<F: Fn(&CVec) -> CVec>(apply: F, n: usize, k: usize, seed_vec: &CVec) -> Vec<C64> {
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut basis: Vec<CVec> = Vec::with_capacity(k + 1);
    let mut h = CMat::zeros((k + 1, k));
    let norm0 = seed_vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    basis.push(seed_vec.mapv(|z| z / norm0));
    let mut dim = 0;
    for j in 0..k {
        let mut w = apply(&basis[j]);
        for i in 0..=j {
            let c: C64 = basis[i].iter().zip(w.iter()).map(|(b, x)| b.conj() * x).sum();
            h[(i, j)] = c;
            w = &w - &basis[i].mapv(|z| z * c);
        }
        // one re-orthogonalization pass
        for i in 0..=j {
            let c: C64 = basis[i].iter().zip(w.iter()).map(|(b, x)| b.conj() * x).sum();
            h[(i, j)] += c;
            w = &w - &basis[i].mapv(|z| z * c);
        }
        let nw = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        dim = j + 1;
        if nw < 1e-14 {
            break;
        }
        h[(j + 1, j)] = C64::new(nw, 0.0);
        basis.push(w.mapv(|z| z / nw));
    }
    let hsq = h.slice(ndarray::s![0..dim, 0..dim]).to_owned();
    match general_eig(&hsq) {
        Ok(e) => e.to_vec(),
        Err(_) => Vec::new(),
    }
}

/// Subleading eigenvalue modulus of the reference transfer map, leading
/// eigenvalue deflated. Dense below 400 vectorized dimensions, Arnoldi above.
fn subleading_modulus(mps_site: &[CMat], gamma: &CMat) -> f64 {
    let d = mps_site[0].nrows();
    let n = d * d;
    if n == 1 {
        return 0.0;
    }
    let t = TransferMap::new(mps_site.to_vec(), mps_site.to_vec());
    if n <= 400 {
        let dense = t.dense_right();
        let mut mods: Vec<f64> = general_eig(&dense)
            .map(|e| e.iter().map(|z| z.norm()).collect())
            .unwrap_or_default();
        mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if mods.len() < 2 {
            return 0.0;
        }
        mods[1]
    } else {
        let deflated = |v: &CVec| -> CVec {
            let m = CMat::from_shape_vec((d, d), v.to_vec()).unwrap();
            let tr = m.diag().sum();
            let centered = &m - &gamma.mapv(|z| z * tr);
            let out = t.apply_right(&centered);
            Array1::from_iter(out.into_iter())
        };
        let seed = Array1::from_shape_fn(n, |i| {
            C64::new(((i * 2654435761 + 1) % 1000) as f64 / 1000.0 - 0.5, 0.3)
        });
        let ritz = arnoldi_ritz(deflated, n, 30, &seed);
        ritz.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Bring a raw rank-3 tensor to left-canonical form, compute the right fixed
/// point Γ and the correlation length. The physical ray is unchanged.
pub fn canonicalize(a_raw: &[CMat]) -> Result<UniformMps> {
    canonicalize_hinted(a_raw, None, None)
}

/// [`canonicalize`] with warm-start guesses for the left and right transfer
/// fixed points; the optimizer feeds the previous iterate's environments.
pub fn canonicalize_hinted(
    a_raw: &[CMat],
    hint_left: Option<&CMat>,
    hint_gamma: Option<&CMat>,
) -> Result<UniformMps> {
    let d = a_raw.len();
    if d == 0 {
        return Err(MpsError::Shape("empty physical index".into()));
    }
    let dim = a_raw[0].nrows();
    for m in a_raw {
        linalg::check_finite(m)?;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(MpsError::Shape("site tensor bond indices must be square and uniform".into()));
        }
    }

    // Leading transfer eigenvalue and left fixed point of the raw tensor.
    let raw = a_raw.to_vec();
    let tol = 1e-14 * (dim as f64);
    let (eta, l) = dominant_fixed_point(|v| lapply(&raw, &raw, v), dim, tol, 100_000, hint_left)?;
    let scale = C64::new(1.0 / eta.sqrt(), 0.0);
    let a_scaled: Vec<CMat> = raw.iter().map(|m| m.mapv(|z| z * scale)).collect();

    // Gauge with l = X†X: A ← X A X⁻¹ is left-canonical.
    let (w, v) = hermitian_eig(&l)?;
    let wmax = w.iter().cloned().fold(0.0_f64, f64::max);
    let rank = w.iter().filter(|&&x| x > RANK_TOL * wmax).count();
    if rank < dim {
        return Err(MpsError::RankDeficientGauge { rank, dim });
    }
    let mut x = dagger(&v);
    let mut xinv = v.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.max(0.0).sqrt();
        x.row_mut(i).mapv_inplace(|z| z * s);
        xinv.column_mut(i).mapv_inplace(|z| z / s);
    }
    let a: Vec<CMat> = a_scaled.iter().map(|m| x.dot(m).dot(&xinv)).collect();

    // Second gauge pass: the first pass leaves a residual of the size of the
    // fixed-point solver error; starting the solve from the identity (already
    // near the answer) tightens Σ A†A = 1 to machine precision.
    let (eta2, l2) = dominant_fixed_point(|v| lapply(&a, &a, v), dim, tol, 100_000, None)?;
    let scale2 = C64::new(1.0 / eta2.sqrt(), 0.0);
    let a2: Vec<CMat> = a.iter().map(|m| m.mapv(|z| z * scale2)).collect();
    let (w2, v2) = hermitian_eig(&l2)?;
    let w2max = w2.iter().cloned().fold(0.0_f64, f64::max);
    if w2.iter().filter(|&&x| x > RANK_TOL * w2max).count() < dim {
        return Err(MpsError::RankDeficientGauge { rank, dim });
    }
    let mut x2 = dagger(&v2);
    let mut x2inv = v2.clone();
    for (i, &wi) in w2.iter().enumerate() {
        let s = wi.max(0.0).sqrt();
        x2.row_mut(i).mapv_inplace(|z| z * s);
        x2inv.column_mut(i).mapv_inplace(|z| z / s);
    }
    let a: Vec<CMat> = a2.iter().map(|m| x2.dot(m).dot(&x2inv)).collect();

    // Right fixed point of the canonical tensor, normalized to unit trace.
    let (_, mut gamma) = dominant_fixed_point(|v| rapply(&a, &a, v), dim, tol, 100_000, hint_gamma)?;
    let tr = gamma.diag().sum();
    gamma = gamma.mapv(|z| z / tr);

    let lambda2 = subleading_modulus(&a, &gamma);
    if lambda2 >= 1.0 - 1e-8 {
        return Err(MpsError::NonInjective { lambda2 });
    }
    let xi = if lambda2 < 1e-14 { 0.0 } else { -1.0 / lambda2.ln() };

    Ok(UniformMps { phys: d, bond: dim, site: a, gamma, xi })
}

/// Leading transfer eigenvalues of a canonical state, sorted by modulus
/// (descending). The first entry is 1 for a normalized state.
pub fn transfer_spectrum(mps: &UniformMps, count: usize) -> Result<Vec<C64>> {
    let n = mps.bond * mps.bond;
    if count > n {
        return Err(MpsError::Shape(format!("requested {count} > D² = {n} eigenvalues")));
    }
    let t = mps.transfer();
    let mut eigs: Vec<C64> = if n <= 2500 {
        general_eig(&t.dense_right())?.to_vec()
    } else {
        let seed = Array1::from_shape_fn(n, |i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos()));
        arnoldi_ritz(
            |v| {
                let m = CMat::from_shape_vec((mps.bond, mps.bond), v.to_vec()).unwrap();
                Array1::from_iter(t.apply_right(&m).into_iter())
            },
            n,
            (count + 10).min(n),
            &seed,
        )
    };
    eigs.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    eigs.truncate(count);
    Ok(eigs)
}

// ───────────────────────────── tangent basis ─────────────────────────────

/// The m = D²(d−1) orthonormal tangent modes B_μ at one site.
///
/// B_μ for μ = (q, c) is Ṽ E_{qc} Γ^{−1/2} where Ṽ is the orthogonal
/// completion of the left-canonical isometry A. This realizes both the left
/// gauge Σ_s A^s† B_μ^s = 0 and orthonormality Tr(Σ_s B_μ^s† B_ν^s Γ) = δ_{μν}.
pub struct TangentBasis {
    pub modes: usize,
    pub phys: usize,
    pub bond: usize,
    /// Ṽ: (d·D) × (D(d−1)), rows indexed (s·D + a)
    pub complement: CMat,
    pub gamma_sqrt: CMat,
    pub gamma_inv_sqrt: CMat,
}

impl TangentBasis {
    /// The tensor B_μ as d bond matrices. Mode index μ = q·D + c.
    pub fn tensor(&self, mu: usize) -> Vec<CMat> {
        let (d, dim) = (self.phys, self.bond);
        let q = mu / dim;
        let c = mu % dim;
        let mut out = vec![CMat::zeros((dim, dim)); d];
        for s in 0..d {
            for a in 0..dim {
                let v = self.complement[(s * dim + a, q)];
                for b in 0..dim {
                    out[s][(a, b)] = v * self.gamma_inv_sqrt[(c, b)];
                }
            }
        }
        out
    }

    /// All modes materialized; intended for small bond dimensions.
    pub fn materialized(&self) -> Vec<Vec<CMat>> {
        (0..self.modes).map(|mu| self.tensor(mu)).collect()
    }

    /// Coefficients Tr(B_μ† X Γ) for a one-site insertion X, batched over μ.
    pub fn project(&self, insertion: &[CMat]) -> CVec {
        let (d, dim) = (self.phys, self.bond);
        // stack X as (dD)×D then Ṽ† X Γ^{1/2}, flattened (q, c) row-major
        let mut xs = CMat::zeros((d * dim, dim));
        for s in 0..d {
            for a in 0..dim {
                for b in 0..dim {
                    xs[(s * dim + a, b)] = insertion[s][(a, b)];
                }
            }
        }
        let coef = dagger(&self.complement).dot(&xs).dot(&self.gamma_sqrt);
        Array1::from_iter(coef.into_iter())
    }

    /// Σ_s Tr(B_μ† W^s) without the Γ weight, batched over μ; used when the
    /// right environment is already folded into W.
    pub fn project_raw(&self, w: &[CMat]) -> CVec {
        let (d, dim) = (self.phys, self.bond);
        let mut ws = CMat::zeros((d * dim, dim));
        for s in 0..d {
            for a in 0..dim {
                for b in 0..dim {
                    ws[(s * dim + a, b)] = w[s][(a, b)];
                }
            }
        }
        let coef = dagger(&self.complement).dot(&ws).dot(&self.gamma_inv_sqrt);
        Array1::from_iter(coef.into_iter())
    }

    /// Σ_μ c_μ B_μ as a one-site tensor.
    pub fn insertion_from_coeffs(&self, coeffs: &CVec) -> Vec<CMat> {
        let (d, dim) = (self.phys, self.bond);
        let c = CMat::from_shape_vec((self.modes / dim, dim), coeffs.to_vec()).unwrap();
        let block = self.complement.dot(&c).dot(&self.gamma_inv_sqrt);
        (0..d)
            .map(|s| {
                CMat::from_shape_fn((dim, dim), |(a, b)| block[(s * dim + a, b)])
            })
            .collect()
    }
}

/// Build the tangent basis of a canonical state.
pub fn tangent_basis(mps: &UniformMps) -> Result<TangentBasis> {
    let (d, dim) = (mps.phys, mps.bond);
    let mut iso = CMat::zeros((d * dim, dim));
    for s in 0..d {
        for a in 0..dim {
            for b in 0..dim {
                iso[(s * dim + a, b)] = mps.site[s][(a, b)];
            }
        }
    }
    // Orthogonal complement via the projector 1 − Ã Ã†; its unit eigenvalues
    // span the complement of the isometry's range.
    let proj = identity(d * dim) - iso.dot(&dagger(&iso));
    let (w, v) = hermitian_eig(&proj)?;
    let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.5).collect();
    if keep.len() != dim * (d - 1) {
        return Err(MpsError::Shape(format!(
            "isometry completion found {} directions, expected {}",
            keep.len(),
            dim * (d - 1)
        )));
    }
    let mut complement = CMat::zeros((d * dim, keep.len()));
    for (j, &i) in keep.iter().enumerate() {
        complement.column_mut(j).assign(&v.column(i));
    }
    let (gamma_sqrt, gamma_inv_sqrt) = psd_sqrt_pinv_sqrt(&mps.gamma, RANK_TOL)?;
    Ok(TangentBasis {
        modes: dim * dim * (d - 1),
        phys: d,
        bond: dim,
        complement,
        gamma_sqrt,
        gamma_inv_sqrt,
    })
}

// ──────────────────────────── geometric sums ─────────────────────────────

/// Regularized Σ_{n≥0} T^n v for the left action of the reference transfer
/// map, on the complement of the leading eigenspace.
///
/// With `center_first` the component along the fixed point (coefficient
/// Tr(vΓ)) is removed before summing; otherwise v must already be centered.
pub fn geometric_sum(mps: &UniformMps, v: &CMat, center_first: bool) -> Result<CMat> {
    let dim = mps.bond;
    let vnorm = frobenius(v).max(1e-300);
    let c = close(v, &mps.gamma);
    let vc = if center_first {
        v - &identity(dim).mapv(|z| z * c)
    } else {
        if c.norm() > 1e-8 * vnorm {
            return Err(MpsError::Shape(format!(
                "geometric_sum input not centered: |Tr(vΓ)| = {:.3e}",
                c.norm()
            )));
        }
        v.clone()
    };
    let scale = frobenius(&vc).max(1e-300);

    let lambda2 = mps.lambda2();
    let mut x = CMat::zeros((dim, dim));
    let mut term = vc.clone();
    let max_iter = if lambda2 < 1e-14 {
        4
    } else {
        (200.0 + 60.0 / (1.0 - lambda2)).min(2e6) as usize
    };
    for _ in 0..max_iter {
        x = &x + &term;
        term = mps.tleft(&term);
        // keep the iteration on the deflated subspace
        let drift = close(&term, &mps.gamma);
        term = &term - &identity(dim).mapv(|z| z * drift);
        if frobenius(&term) < 1e-14 * scale {
            break;
        }
    }
    let residual = frobenius(&(&(&x - &mps.tleft(&x)) - &vc)) / scale;
    if residual > 1e-10 {
        return Err(MpsError::GeometricSum { residual });
    }
    Ok(x)
}

/// Regularized Σ_{n≥0} T^n v for the right action r → Σ_s A^s r A^s†, on the
/// complement of the leading eigenspace (component along Γ removed, with the
/// trace functional as the dual).
pub fn geometric_sum_right(mps: &UniformMps, v: &CMat, center_first: bool) -> Result<CMat> {
    let dim = mps.bond;
    let vnorm = frobenius(v).max(1e-300);
    let c: C64 = v.diag().sum();
    let vc = if center_first {
        v - &mps.gamma.mapv(|z| z * c)
    } else {
        if c.norm() > 1e-8 * vnorm {
            return Err(MpsError::Shape(format!(
                "geometric_sum_right input not centered: |Tr v| = {:.3e}",
                c.norm()
            )));
        }
        v.clone()
    };
    let scale = frobenius(&vc).max(1e-300);
    let lambda2 = mps.lambda2();
    let mut x = CMat::zeros((dim, dim));
    let mut term = vc.clone();
    let max_iter = if lambda2 < 1e-14 {
        4
    } else {
        (200.0 + 60.0 / (1.0 - lambda2)).min(2e6) as usize
    };
    let t = mps.transfer();
    for _ in 0..max_iter {
        x = &x + &term;
        term = t.apply_right(&term);
        let drift: C64 = term.diag().sum();
        term = &term - &mps.gamma.mapv(|z| z * drift);
        if frobenius(&term) < 1e-14 * scale {
            break;
        }
    }
    let residual = frobenius(&(&(&x - &t.apply_right(&x)) - &vc)) / scale;
    if residual > 1e-10 {
        return Err(MpsError::GeometricSum { residual });
    }
    Ok(x)
}

// ─────────────────────────── finite embeddings ───────────────────────────

/// Dense embedding of an n-site window of the uniform state, with the exact
/// left (identity) and right (Γ) environments kept as open bond indices.
/// `derivs` lists (site, mode) pairs replaced by tangent tensors B_μ.
///
/// The result has shape (D, d^n, D): (left bond, physical, right bond).
/// Inner products must contract the left bonds with δ and the right bonds
/// with Γ (see [`embed_overlap`]), which reproduces thermodynamic-limit
/// values exactly for any derivative placement.
pub fn finite_chain_embed(
    mps: &UniformMps,
    basis: &TangentBasis,
    n: usize,
    derivs: &[(usize, usize)],
) -> Result<Array3<C64>> {
    let (d, dim) = (mps.phys, mps.bond);
    let total = d.checked_pow(n as u32).ok_or(MpsError::ChainTooLarge(usize::MAX))?;
    if total * dim * dim > 4_000_000 {
        return Err(MpsError::ChainTooLarge(total));
    }
    let mut seen = std::collections::HashSet::new();
    for &(site, _) in derivs {
        if site >= n {
            return Err(MpsError::Shape(format!("derivative site {site} outside 0..{n}")));
        }
        if !seen.insert(site) {
            return Err(MpsError::DuplicateSite(site));
        }
    }
    let mut state = Array3::<C64>::zeros((dim, 1, dim));
    for a in 0..dim {
        state[(a, 0, a)] = ONE;
    }
    for site in 0..n {
        let tensor: Vec<CMat> = match derivs.iter().find(|&&(i, _)| i == site) {
            Some(&(_, mu)) => basis.tensor(mu),
            None => mps.site.clone(),
        };
        let cur = state.dim().1;
        let mut next = Array3::<C64>::zeros((dim, cur * d, dim));
        for a in 0..dim {
            for idx in 0..cur {
                for s in 0..d {
                    for c in 0..dim {
                        let amp = state[(a, idx, c)];
                        if amp == ZERO {
                            continue;
                        }
                        for b in 0..dim {
                            next[(a, idx * d + s, b)] += amp * tensor[s][(c, b)];
                        }
                    }
                }
            }
        }
        state = next;
    }
    Ok(state)
}

/// ⟨a|b⟩ with the exact boundary metric: δ on the left bonds, Γ on the right.
pub fn embed_overlap(a: &Array3<C64>, b: &Array3<C64>, gamma: &CMat) -> C64 {
    let (dl, n, dr) = a.dim();
    assert_eq!(b.dim(), (dl, n, dr));
    let mut acc = ZERO;
    for l in 0..dl {
        for idx in 0..n {
            for r in 0..dr {
                for rbar in 0..dr {
                    acc += a[(l, idx, rbar)].conj() * b[(l, idx, r)] * gamma[(r, rbar)];
                }
            }
        }
    }
    acc
}

/// Apply a two-site operator on (bond, bond+1) of an embedded chain.
pub fn embed_apply_bond(h: &CMat, d: usize, n: usize, bond: usize, psi: &Array3<C64>) -> Array3<C64> {
    let (dl, total, dr) = psi.dim();
    assert!(bond + 1 < n);
    let right_stride = d.pow((n - 2 - bond) as u32);
    let mut out = Array3::<C64>::zeros((dl, total, dr));
    for l in 0..dl {
        for idx in 0..total {
            let s = (idx / right_stride / d) % d;
            let t = (idx / right_stride) % d;
            let base = idx - (s * d + t) * right_stride;
            for sp in 0..d {
                for tp in 0..d {
                    let c = h[(sp * d + tp, s * d + t)];
                    if c == ZERO {
                        continue;
                    }
                    let target = base + (sp * d + tp) * right_stride;
                    for r in 0..dr {
                        out[(l, target, r)] += c * psi[(l, idx, r)];
                    }
                }
            }
        }
    }
    out
}

// ─────────────────────────────── text i/o ────────────────────────────────

/// Write the site tensor in the flat text format: header `d D`, then d·D·D
/// lines of `re im` in (s, a, b) lexicographic order, 17 significant digits.
pub fn save_tensor(mps: &UniformMps, path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", mps.phys, mps.bond));
    for s in 0..mps.phys {
        for a in 0..mps.bond {
            for b in 0..mps.bond {
                let z = mps.site[s][(a, b)];
                out.push_str(&format!("{:.16e} {:.16e}\n", z.re, z.im));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a tensor written by [`save_tensor`] and re-canonicalize it.
pub fn load_tensor(path: &std::path::Path) -> Result<UniformMps> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| MpsError::Parse("missing header".into()))?;
    let mut it = header.split_whitespace();
    let d: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MpsError::Parse("bad physical dimension".into()))?;
    let dim: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MpsError::Parse("bad bond dimension".into()))?;
    let mut tensors = vec![CMat::zeros((dim, dim)); d];
    for s in 0..d {
        for a in 0..dim {
            for b in 0..dim {
                let line = lines
                    .next()
                    .ok_or_else(|| MpsError::Parse("truncated tensor file".into()))?;
                let mut parts = line.split_whitespace();
                let re: f64 = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| MpsError::Parse(format!("bad entry at ({s},{a},{b})")))?;
                let im: f64 = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| MpsError::Parse(format!("bad entry at ({s},{a},{b})")))?;
                tensors[s][(a, b)] = C64::new(re, im);
            }
        }
    }
    canonicalize(&tensors)
}

/// Random complex Gaussian-ish site tensor for tests and initialization.
pub fn random_tensor(d: usize, dim: usize, seed: u64) -> Vec<CMat> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || {
        // Box-Muller from uniform draws
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    (0..d)
        .map(|_| CMat::from_shape_fn((dim, dim), |_| C64::new(normal(), normal())))
        .collect()
}

// Re-export for downstream modules building two-layer objects.
pub fn stack_rows(tensor: &[CMat]) -> CMat {
    let d = tensor.len();
    let dim = tensor[0].nrows();
    let mut out = CMat::zeros((d * dim, dim));
    for s in 0..d {
        for a in 0..dim {
            for b in 0..dim {
                out[(s * dim + a, b)] = tensor[s][(a, b)];
            }
        }
    }
    out
}

pub fn unstack_rows(block: &CMat, d: usize, dim: usize) -> Vec<CMat> {
    (0..d)
        .map(|s| CMat::from_shape_fn((dim, dim), |(a, b)| block[(s * dim + a, b)]))
        .collect()
}

/// Read off the second and later transfer eigenvalues for validation work.
pub fn transfer_eigenvalues_dense(mps: &UniformMps) -> Result<Vec<C64>> {
    transfer_spectrum(mps, mps.bond * mps.bond)
}

#[allow(unused_imports)]
use ndarray::s;
