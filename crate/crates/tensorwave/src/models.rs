//! Spin operators, the bilinear-biquadratic and staggered-Heisenberg
//! Hamiltonian densities, and closed-form reference states.
//!
//! Staggered fields are handled exclusively by a sublattice rotation (a spin
//! flip about x on every other site), so a one-site translation-invariant
//! density suffices everywhere downstream. Single-site field terms are folded
//! half-left, half-right into the two-site density.

use crate::linalg::{dagger, hermitian_eig, identity, kron, CMat};
use crate::mps::{canonicalize, MpsError, UniformMps};
use num_complex::Complex64 as C64;

/// A translation-invariant spin chain defined by its two-site density.
#[derive(Clone)]
pub struct SpinModel {
    /// local physical dimension
    pub phys: usize,
    /// d²×d² Hermitian density acting on two adjacent sites,
    /// basis |s t⟩ ↦ index s·d + t
    pub hdensity: CMat,
    pub name: String,
    pub params: Vec<(String, f64)>,
}

impl SpinModel {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    /// Density with a multiple of the identity removed.
    pub fn centered(&self, shift: f64) -> CMat {
        let n = self.hdensity.nrows();
        &self.hdensity - &identity(n).mapv(|z| z * shift)
    }
}

/// Spin matrices for a (2s+1)-dimensional representation, basis ordered by
/// decreasing magnetization m = s, s−1, …, −s. Satisfy [Sx, Sy] = i Sz and
/// Sx² + Sy² + Sz² = s(s+1)·1.
pub fn spin_matrices(dim: usize) -> (CMat, CMat, CMat) {
    assert!(dim >= 2, "spin representation needs dimension ≥ 2");
    let s = (dim as f64 - 1.0) / 2.0;
    let mut sz = CMat::zeros((dim, dim));
    let mut sp = CMat::zeros((dim, dim));
    for i in 0..dim {
        let m = s - i as f64;
        sz[(i, i)] = C64::new(m, 0.0);
        if i > 0 {
            // ⟨m+1|S⁺|m⟩ with m the magnetization of column i
            let val = (s * (s + 1.0) - m * (m + 1.0)).sqrt();
            sp[(i - 1, i)] = C64::new(val, 0.0);
        }
    }
    let sm = dagger(&sp);
    let sx = (&sp + &sm).mapv(|z| 0.5 * z);
    let sy = (&sp - &sm).mapv(|z| z * C64::new(0.0, -0.5));
    (sx, sy, sz)
}

fn heisenberg_coupling(dim: usize) -> CMat {
    let (sx, sy, sz) = spin_matrices(dim);
    kron(&sx, &sx) + kron(&sy, &sy) + kron(&sz, &sz)
}

/// Sublattice-rotated exchange Sx Sx − Sy Sy − Sz Sz (flip about x on odd sites).
fn rotated_coupling(dim: usize) -> CMat {
    let (sx, sy, sz) = spin_matrices(dim);
    kron(&sx, &sx) - kron(&sy, &sy) - kron(&sz, &sz)
}

/// Isotropic bilinear-biquadratic spin-1 chain, density S⃗·S⃗ + p (S⃗·S⃗)².
pub fn blbq(p: f64) -> SpinModel {
    let ss = heisenberg_coupling(3);
    let h = &ss + &ss.dot(&ss).mapv(|z| z * p);
    SpinModel { phys: 3, hdensity: h, name: "blbq".into(), params: vec![("p".into(), p)] }
}

/// BLBQ density in the sublattice-rotated frame, for staggered (Néel-like)
/// product references on a one-site unit cell.
pub fn blbq_staggered(p: f64) -> SpinModel {
    let ss = rotated_coupling(3);
    let h = &ss + &ss.dot(&ss).mapv(|z| z * p);
    SpinModel { phys: 3, hdensity: h, name: "blbq_stag".into(), params: vec![("p".into(), p)] }
}

/// Spin-1/2 Heisenberg chain with staggered field h, given in the rotated
/// frame where the field is uniform: Sx Sx − Sy Sy − Sz Sz + (h/2)(Sz⊗1 + 1⊗Sz).
pub fn heisenberg_staggered(h: f64) -> SpinModel {
    let (_, _, sz) = spin_matrices(2);
    let eye = identity(2);
    let field = (kron(&sz, &eye) + kron(&eye, &sz)).mapv(|z| z * (0.5 * h));
    let hd = rotated_coupling(2) + field;
    SpinModel { phys: 2, hdensity: hd, name: "heis_stag".into(), params: vec![("h".into(), h)] }
}

/// The unitary implementing the sublattice flip (rotation by π about x) on
/// one site of dimension `dim`.
pub fn sublattice_flip(dim: usize) -> CMat {
    let (sx, _, _) = spin_matrices(dim);
    // exp(iπ Sx) via the eigendecomposition of Sx
    let (w, v) = hermitian_eig(&sx).expect("Sx is Hermitian");
    let mut phase = CMat::zeros((dim, dim));
    for (i, &x) in w.iter().enumerate() {
        phase[(i, i)] = C64::new(0.0, std::f64::consts::PI * x).exp();
    }
    v.dot(&phase).dot(&dagger(&v))
}

/// Model lookup used by run configurations.
pub fn by_name(name: &str, params: &[(String, f64)]) -> Option<SpinModel> {
    let get = |key: &str, default: f64| {
        params.iter().find(|(k, _)| k == key).map(|&(_, v)| v).unwrap_or(default)
    };
    match name {
        "blbq" => Some(blbq(get("p", 0.0))),
        "blbq_stag" => Some(blbq_staggered(get("p", 0.0))),
        "heis_stag" => Some(heisenberg_staggered(get("h", 0.0))),
        _ => None,
    }
}

/// Exact AKLT site tensor (m = +1, 0, −1 ordering), already left-canonical.
pub fn aklt_site_tensor() -> Vec<CMat> {
    let r = |x: f64| C64::new(x, 0.0);
    let s23 = (2.0_f64 / 3.0).sqrt();
    let s13 = (1.0_f64 / 3.0).sqrt();
    vec![
        ndarray::array![[r(0.0), r(s23)], [r(0.0), r(0.0)]],
        ndarray::array![[r(-s13), r(0.0)], [r(0.0), r(s13)]],
        ndarray::array![[r(0.0), r(0.0)], [r(-s23), r(0.0)]],
    ]
}

/// The AKLT ground state as a canonical D = 2 uniform MPS.
pub fn aklt_state() -> Result<UniformMps, MpsError> {
    canonicalize(&aklt_site_tensor())
}

/// D = 1 product reference |m = +1⟩ per site in the rotated frame.
pub fn neel_state() -> Result<UniformMps, MpsError> {
    let mut t = vec![CMat::zeros((1, 1)); 3];
    t[0][(0, 0)] = C64::new(1.0, 0.0);
    canonicalize(&t)
}

/// Spin-1/2 polarized product state |↑⟩, the rotated Néel reference.
pub fn neel_state_half() -> Result<UniformMps, MpsError> {
    let mut t = vec![CMat::zeros((1, 1)); 2];
    t[0][(0, 0)] = C64::new(1.0, 0.0);
    canonicalize(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius;
    use crate::mps::transfer_spectrum;

    fn commutator(a: &CMat, b: &CMat) -> CMat {
        a.dot(b) - b.dot(a)
    }

    #[test]
    fn spin_algebra_and_casimir() {
        for dim in 2..=5 {
            let s = (dim as f64 - 1.0) / 2.0;
            let (sx, sy, sz) = spin_matrices(dim);
            let i = C64::new(0.0, 1.0);
            let c1 = commutator(&sx, &sy) - sz.mapv(|z| z * i);
            let c2 = commutator(&sy, &sz) - sx.mapv(|z| z * i);
            let c3 = commutator(&sz, &sx) - sy.mapv(|z| z * i);
            assert!(frobenius(&c1) < 1e-12 && frobenius(&c2) < 1e-12 && frobenius(&c3) < 1e-12);
            let cas = sx.dot(&sx) + sy.dot(&sy) + sz.dot(&sz);
            let want = identity(dim).mapv(|z| z * (s * (s + 1.0)));
            assert!(frobenius(&(&cas - &want)) < 1e-12, "casimir at dim {dim}");
        }
        // spin-1/2 Casimir (3/4)·1
        let (sx, sy, sz) = spin_matrices(2);
        let cas = sx.dot(&sx) + sy.dot(&sy) + sz.dot(&sz);
        assert!((cas[(0, 0)].re - 0.75).abs() < 1e-14);
        let _ = sz;
    }

    #[test]
    fn blbq_heisenberg_point_spectrum() {
        let m = blbq(0.0);
        let (w, _) = hermitian_eig(&m.hdensity).unwrap();
        let want = [-2.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        for (g, e) in w.iter().zip(want.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn blbq_aklt_projector_structure() {
        let m = blbq(1.0 / 3.0);
        // h + (2/3)·1 is PSD with a 4-dimensional kernel
        let shifted = &m.hdensity + &identity(9).mapv(|z| z * (2.0 / 3.0));
        let (w, _) = hermitian_eig(&shifted).unwrap();
        let kernel = w.iter().filter(|&&x| x.abs() < 1e-10).count();
        assert_eq!(kernel, 4);
        assert!(w.iter().all(|&x| x > -1e-12));
        // h = 2P₂ − (2/3)·1 with P₂ = (C+2)(C+1)/6, C = S⃗·S⃗
        let c = heisenberg_coupling(3);
        let p2 = (&c + &identity(9).mapv(|z| z * 2.0))
            .dot(&(&c + &identity(9)))
            .mapv(|z| z / 6.0);
        let rebuilt = p2.mapv(|z| z * 2.0) - identity(9).mapv(|z| z * (2.0 / 3.0));
        assert!(frobenius(&(&rebuilt - &m.hdensity)) < 1e-12);
    }

    #[test]
    fn heis_stag_unitary_equivalence() {
        // h = 0: spectrum unchanged from the plain Heisenberg density
        let m0 = heisenberg_staggered(0.0);
        let (w, _) = hermitian_eig(&m0.hdensity).unwrap();
        let want = [-0.75, 0.25, 0.25, 0.25];
        for (g, e) in w.iter().zip(want.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
        // h = 0.2: rotated two-site ground energy equals the original
        // staggered two-site ground energy
        let h = 0.2;
        let m = heisenberg_staggered(h);
        let (w_rot, _) = hermitian_eig(&m.hdensity).unwrap();
        let (_, _, sz) = spin_matrices(2);
        let eye = identity(2);
        let staggered = heisenberg_coupling(2)
            + (kron(&sz, &eye) - kron(&eye, &sz)).mapv(|z| z * (0.5 * h));
        let (w_orig, _) = hermitian_eig(&staggered).unwrap();
        assert!((w_rot[0] - w_orig[0]).abs() < 1e-12);
    }

    #[test]
    fn sublattice_flip_involutive_on_densities() {
        for dim in [2, 3] {
            let r = sublattice_flip(dim);
            let rr = r.dot(&r);
            // R² is a global phase; conjugating twice restores any operator.
            let (sx, sy, sz) = spin_matrices(dim);
            for op in [&sx, &sy, &sz] {
                let twice = rr.dot(op).dot(&dagger(&rr));
                assert!(frobenius(&(&twice - op)) < 1e-12);
            }
            // R maps Sz → −Sz, Sy → −Sy, Sx → Sx
            let flip_z = r.dot(&sz).dot(&dagger(&r));
            assert!(frobenius(&(&flip_z + &sz)) < 1e-12);
            let flip_y = r.dot(&sy).dot(&dagger(&r));
            assert!(frobenius(&(&flip_y + &sy)) < 1e-12);
            let flip_x = r.dot(&sx).dot(&dagger(&r));
            assert!(frobenius(&(&flip_x - &sx)) < 1e-12);
        }
    }

    #[test]
    fn rotated_blbq_matches_conjugated_original() {
        let p = 0.37;
        let plain = blbq(p);
        let rot = blbq_staggered(p);
        let r = sublattice_flip(3);
        let u = kron(&identity(3), &r);
        let conj = u.dot(&plain.hdensity).dot(&dagger(&u));
        assert!(frobenius(&(&conj - &rot.hdensity)) < 1e-12);
    }

    #[test]
    fn neel_product_expectations() {
        // ⟨1,1| rotated density |1,1⟩: −1 + 2p (the biquadratic term has
        // expectation 2 in the Néel pair, not 1).
        for p in [0.0, 0.3, 0.7] {
            let m = blbq_staggered(p);
            let e = m.hdensity[(0, 0)].re; // |1,1⟩ is the first basis state
            assert!((e - (-1.0 + 2.0 * p)).abs() < 1e-12, "p = {p}: e = {e}");
        }
    }

    #[test]
    fn reference_states() {
        let aklt = aklt_state().unwrap();
        let spec = transfer_spectrum(&aklt, 4).unwrap();
        assert!((spec[0].re - 1.0).abs() < 1e-10);
        for k in 1..4 {
            assert!((spec[k].re + 1.0 / 3.0).abs() < 1e-10);
        }
        let neel = neel_state().unwrap();
        assert_eq!(neel.bond, 1);
        assert_eq!(neel.xi, 0.0);
    }

    #[test]
    fn densities_are_hermitian() {
        for m in [blbq(0.633), blbq_staggered(0.21), heisenberg_staggered(0.2)] {
            assert!(frobenius(&(&m.hdensity - &dagger(&m.hdensity))) == 0.0, "{}", m.name);
        }
    }
}
