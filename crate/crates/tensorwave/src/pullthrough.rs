//! The pull-through algebra: the exact one-site split of an operator
//! insertion into tangent deposits plus a bond matrix moved one site to the
//! right, the derivative expansion of single-site operators, and the
//! quasi-local bosonic image of a local operator truncated at quadratic
//! order.
//!
//! Insertions are one-site objects X (a Vec over the physical index of D×D
//! bond matrices). The workhorse identity, exact whenever Γ is full rank:
//!
//!   X = Σ_μ Tr(B_μ† X Γ) B_μ + A · (Σ_s A^s† X^s)
//!
//! The first family deposits a tangent tensor and ends the pulled line; the
//! second moves the line one site right. Applied at a site already carrying a
//! derivative B_ν, the same identity describes the derivative being rotated
//! (a†a) or consumed with the line carrying on.

use crate::linalg::{dagger, frobenius, CMat, CVec};
use crate::mps::{TangentBasis, UniformMps};
use ndarray::Array1;
use num_complex::Complex64 as C64;
use std::collections::BTreeMap;

const ZERO: C64 = C64::new(0.0, 0.0);

/// One-site insertion: d bond matrices.
pub type Insertion = Vec<CMat>;

/// Which tensor sits at the site being pulled through.
#[derive(Clone, Copy)]
pub enum SiteTensor {
    Reference,
    Mode(usize),
}

/// Apply a single-site operator (d×d, ⟨s|o|s′⟩) to a site tensor.
pub fn op_on(op: &CMat, tensor: &[CMat]) -> Insertion {
    let d = tensor.len();
    let dim = tensor[0].nrows();
    (0..d)
        .map(|s| {
            let mut acc = CMat::zeros((dim, dim));
            for sp in 0..d {
                let c = op[(s, sp)];
                if c != ZERO {
                    acc = acc + tensor[sp].mapv(|z| z * c);
                }
            }
            acc
        })
        .collect()
}

/// Left-multiply an insertion by a bond matrix.
pub fn bond_times(n: &CMat, x: &[CMat]) -> Insertion {
    x.iter().map(|m| n.dot(m)).collect()
}

/// Σ_s A^s† X^s — the pulled bond matrix.
pub fn pull(mps: &UniformMps, x: &[CMat]) -> CMat {
    let mut acc = CMat::zeros((mps.bond, mps.bond));
    for (a, xs) in mps.site.iter().zip(x.iter()) {
        acc = acc + dagger(a).dot(xs);
    }
    acc
}

/// One bare-site travel step of a pulled line: N → Σ_s A^s† N A^s.
pub fn travel(mps: &UniformMps, n: &CMat) -> CMat {
    mps.tleft(n)
}

/// Vacuum amplitude of a pulled line: Tr(N Γ). Invariant under travel.
pub fn vac(mps: &UniformMps, n: &CMat) -> C64 {
    n.dot(&mps.gamma).diag().sum()
}

/// One pull-through step: split M applied to the chosen site tensor into
/// tangent coefficients and the pulled bond matrix.
///
/// `m_op` acts on (physical ⊗ left bond), rows indexed s·D + a; an operator
/// acting on the physical leg alone embeds as kron(h, 1_D).
pub fn pull_through_step(
    mps: &UniformMps,
    basis: &TangentBasis,
    m_op: &CMat,
    site: SiteTensor,
) -> (CVec, CMat) {
    let (d, dim) = (mps.phys, mps.bond);
    let tensor: Insertion = match site {
        SiteTensor::Reference => mps.site.clone(),
        SiteTensor::Mode(mu) => basis.tensor(mu),
    };
    // X = M · tensor, contracted over the (s, a) input block
    let mut x = vec![CMat::zeros((dim, dim)); d];
    for s in 0..d {
        for a in 0..dim {
            for sp in 0..d {
                for ap in 0..dim {
                    let c = m_op[(s * dim + a, sp * dim + ap)];
                    if c != ZERO {
                        for b in 0..dim {
                            x[s][(a, b)] += c * tensor[sp][(ap, b)];
                        }
                    }
                }
            }
        }
    }
    let coeffs = basis.project(&x);
    let pulled = pull(mps, &x);
    (coeffs, pulled)
}

/// Verify the defining identity X = Σ_μ x_μ B_μ + A·pulled for an insertion.
pub fn split_residual(
    mps: &UniformMps,
    basis: &TangentBasis,
    x: &[CMat],
    coeffs: &CVec,
    pulled: &CMat,
) -> f64 {
    let tangent = basis.insertion_from_coeffs(coeffs);
    let mut res = 0.0_f64;
    for s in 0..mps.phys {
        let rebuilt = &tangent[s] + &mps.site[s].dot(pulled);
        res += frobenius(&(&rebuilt - &x[s])).powi(2);
    }
    res.sqrt()
}

/// Derivative expansion of a centered single-site operator h applied to the
/// reference state: h|Ψ⟩ = ⟨h⟩|Ψ⟩ + Σ_{i≥0} x_μ^{(i)} |∂_μ^{(i)}Ψ⟩.
///
/// Returns the coefficient sequence and the relative norm of the pulled tail
/// at the horizon (the caller warns if it exceeds 1e-8).
pub fn operator_expand(
    mps: &UniformMps,
    basis: &TangentBasis,
    h: &CMat,
    horizon: usize,
) -> (Vec<CVec>, f64) {
    let ha = op_on(h, &mps.site);
    let mut coeffs = vec![basis.project(&ha)];
    let mut line = pull(mps, &ha);
    let scale = frobenius(&line).max(1e-300);
    let mut tail = 1.0;
    for _ in 1..=horizon {
        let insertion = bond_times(&line, &mps.site);
        coeffs.push(basis.project(&insertion));
        line = travel(mps, &line);
        tail = frobenius(&line) / scale;
        if tail < 1e-12 {
            break;
        }
    }
    (coeffs, tail)
}

// ───────────────────────── quadratic bosonic image ─────────────────────────

/// Normal-ordered polynomial in (a†, a) over (site offset, mode) pairs,
/// truncated at quadratic degree.
#[derive(Clone)]
pub struct BosonPolynomial {
    pub modes: usize,
    pub horizon: usize,
    pub constant: C64,
    /// coefficient of a†_μ^{(i)}
    pub create: BTreeMap<usize, CVec>,
    /// coefficient of a_ν^{(i)}
    pub annih: BTreeMap<usize, CVec>,
    /// coefficient of a†_μ^{(i)} a_ν^{(j)}, stored as (i, j) → m×m matrix
    pub hop: BTreeMap<(usize, usize), CMat>,
    /// coefficient of a†_μ^{(i)} a†_ν^{(j)}, i < j
    pub pair_create: BTreeMap<(usize, usize), CMat>,
    /// coefficient of a_μ^{(i)} a_ν^{(j)}, i < j
    pub pair_annih: BTreeMap<(usize, usize), CMat>,
    /// relative pulled-line tail norm at the horizon
    pub tail: f64,
}

impl BosonPolynomial {
    pub fn empty(modes: usize, horizon: usize) -> Self {
        BosonPolynomial {
            modes,
            horizon,
            constant: ZERO,
            create: BTreeMap::new(),
            annih: BTreeMap::new(),
            hop: BTreeMap::new(),
            pair_create: BTreeMap::new(),
            pair_annih: BTreeMap::new(),
            tail: 0.0,
        }
    }

    fn hop_mut(&mut self, key: (usize, usize)) -> &mut CMat {
        let m = self.modes;
        self.hop.entry(key).or_insert_with(|| CMat::zeros((m, m)))
    }

    /// ⟨1_μ^{(i)} | P | 1_ν^{(j)}⟩ in the plain bosonic inner product.
    pub fn one_boson_element(&self, bra: (usize, usize), ket: (usize, usize)) -> C64 {
        let mut out = ZERO;
        if bra == ket {
            out += self.constant;
        }
        if let Some(q) = self.hop.get(&(bra.0, ket.0)) {
            out += q[(bra.1, ket.1)];
        }
        out
    }

    /// ⟨1_μ^{(i)} | G · P | 1_ν^{(j)}⟩: the Gram-weighted sandwich that equals
    /// the physical matrix element ⟨∂_μ^{(i)}Ψ|h|∂_ν^{(j)}Ψ⟩. Offsets are
    /// relative to the operator insertion site and may be negative; `mx[x−1]`
    /// holds the mixed overlaps M^(x).
    ///
    /// The creation deposits of P turn the ket boson into an anchored pair;
    /// their overlap against the single-boson bra is the M-sector of the Gram
    /// operator, exactly the terms a plain bosonic inner product misses.
    pub fn gram_weighted_one_boson_element(
        &self,
        bra: (i64, usize),
        ket: (i64, usize),
        mx: &[CMat],
    ) -> C64 {
        let (i, mu) = bra;
        let (j, nu) = ket;
        let m = self.modes;
        let mut out = ZERO;
        if i == j && mu == nu {
            out += self.constant;
        }
        if i >= 0 && j >= 0 {
            if let Some(q) = self.hop.get(&(i as usize, j as usize)) {
                out += q[(mu, nu)];
            }
        }
        // deposits a†_κ^{(k)} on the spectator ν^{(j)} form the pair (k, j);
        // the anchored overlap against ⟨∂_μ^{(i)}| requires i = min(k, j)
        for (k, cv) in &self.create {
            let k = *k as i64;
            if k == j {
                continue; // single occupancy: the expansion never deposits on j
            }
            let (lo, hi) = (k.min(j), k.max(j));
            if i != lo {
                continue;
            }
            let sep = (hi - lo) as usize;
            if sep == 0 || sep > mx.len() {
                continue;
            }
            let mblock = &mx[sep - 1];
            for ka in 0..m {
                let (p, q2) = if k < j { (ka, nu) } else { (nu, ka) };
                out += mblock[(mu, p * m + q2)] * cv[ka];
            }
        }
        out
    }

    /// ⟨GS | P | GS⟩
    pub fn vacuum_expectation(&self) -> C64 {
        self.constant
    }

    /// Normal-ordered product of two quadratic-truncated polynomials,
    /// truncated at quadratic degree again. Contractions use [a, a†] = δ.
    pub fn compose(&self, other: &BosonPolynomial) -> BosonPolynomial {
        let m = self.modes;
        let mut out = BosonPolynomial::empty(m, self.horizon.max(other.horizon));
        out.tail = self.tail.max(other.tail);
        out.constant = self.constant * other.constant;

        // scalar × linear and linear × scalar
        for (i, v) in &other.create {
            let w = v.mapv(|z| z * self.constant);
            out.create.entry(*i).and_modify(|c| *c = &*c + &w).or_insert(w);
        }
        for (i, v) in &other.annih {
            let w = v.mapv(|z| z * self.constant);
            out.annih.entry(*i).and_modify(|c| *c = &*c + &w).or_insert(w);
        }
        for (i, v) in &self.create {
            let w = v.mapv(|z| z * other.constant);
            out.create.entry(*i).and_modify(|c| *c = &*c + &w).or_insert(w);
        }
        for (i, v) in &self.annih {
            let w = v.mapv(|z| z * other.constant);
            out.annih.entry(*i).and_modify(|c| *c = &*c + &w).or_insert(w);
        }

        // scalar × quadratic
        fn add_scaled(dst: &mut BTreeMap<(usize, usize), CMat>, src: &BTreeMap<(usize, usize), CMat>, scale: C64) {
            for (k, q) in src {
                let w = q.mapv(|z| z * scale);
                dst.entry(*k).and_modify(|c| *c = &*c + &w).or_insert(w);
            }
        }
        add_scaled(&mut out.hop, &self.hop, other.constant);
        add_scaled(&mut out.hop, &other.hop, self.constant);
        add_scaled(&mut out.pair_create, &self.pair_create, other.constant);
        add_scaled(&mut out.pair_create, &other.pair_create, self.constant);
        add_scaled(&mut out.pair_annih, &self.pair_annih, other.constant);
        add_scaled(&mut out.pair_annih, &other.pair_annih, self.constant);

        // create × create → pair creation (symmetrized into i < j storage)
        for (i, v) in &self.create {
            for (j, w) in &other.create {
                add_pair(&mut out.pair_create, m, *i, v, *j, w);
            }
        }
        // annih × annih → pair annihilation
        for (i, v) in &self.annih {
            for (j, w) in &other.annih {
                add_pair(&mut out.pair_annih, m, *i, v, *j, w);
            }
        }
        // create(i) × annih(j): already normal ordered → hop
        for (i, v) in &self.create {
            for (j, w) in &other.annih {
                let q = out.hop_mut((*i, *j));
                for mu in 0..m {
                    for nu in 0..m {
                        q[(mu, nu)] += v[mu] * w[nu];
                    }
                }
            }
        }
        // annih(i) × create(j): a a† = a† a + δ
        for (i, v) in &self.annih {
            for (j, w) in &other.create {
                let q = out.hop_mut((*j, *i));
                for mu in 0..m {
                    for nu in 0..m {
                        q[(nu, mu)] += w[nu] * v[mu];
                    }
                }
                if i == j {
                    let dot: C64 = (0..m).map(|mu| v[mu] * w[mu]).sum();
                    out.constant += dot;
                }
            }
        }
        // hop × hop contraction: (a†_μ a_ν)^{(i,j)} (a†_κ a_λ)^{(k,l)}
        //   → δ_{jk} δ_{νκ} a†_μ^{(i)} a_λ^{(l)} plus quartic (dropped)
        let hop_pairs: Vec<_> = self
            .hop
            .iter()
            .flat_map(|(k1, q1)| other.hop.iter().map(move |(k2, q2)| (*k1, q1, *k2, q2)))
            .collect();
        for ((i, j), q1, (k, l), q2) in hop_pairs {
            if j == k {
                let prod = q1.dot(q2);
                let q = out.hop_mut((i, l));
                *q = &*q + &prod;
            }
        }
        // hop × create: (a†_μ a_ν)(a†_κ) → δ_{νκ} a†_μ (+ cubic dropped)
        for ((i, j), q) in &self.hop {
            for (k, w) in &other.create {
                if j == k {
                    let v = q.dot(w);
                    out.create.entry(*i).and_modify(|c| *c = &*c + &v).or_insert(v);
                }
            }
        }
        // annih × hop: (a_ν)(a†_κ a_λ) → δ_{νκ} a_λ (+ cubic dropped)
        for (i, v) in &self.annih {
            for ((k, l), q) in &other.hop {
                if i == k {
                    let w = q.t().dot(v);
                    let w = Array1::from_iter(w.into_iter());
                    out.annih.entry(*l).and_modify(|c| *c = &*c + &w).or_insert(w);
                }
            }
        }
        // annih × pair_create: a_μ^{(i)} a†a†^{(k,l)} → δ contractions to create
        for (i, v) in &self.annih {
            for ((k, l), q) in &other.pair_create {
                if i == k {
                    let w = q.t().dot(v);
                    let w = Array1::from_iter(w.into_iter());
                    out.create.entry(*l).and_modify(|c| *c = &*c + &w).or_insert(w);
                }
                if i == l {
                    let w = q.dot(v);
                    out.create.entry(*k).and_modify(|c| *c = &*c + &w).or_insert(w);
                }
            }
        }
        // pair_annih × create: aa^{(i,j)} a†^{(k)} → δ contractions to annih
        for ((i, j), q) in &self.pair_annih {
            for (k, w) in &other.create {
                if *j == *k {
                    let v = q.dot(w);
                    out.annih.entry(*i).and_modify(|c| *c = &*c + &v).or_insert(v);
                }
                if *i == *k {
                    let v = q.t().dot(w);
                    let v = Array1::from_iter(v.into_iter());
                    out.annih.entry(*j).and_modify(|c| *c = &*c + &v).or_insert(v);
                }
            }
        }
        out
    }
}

fn add_pair(store: &mut BTreeMap<(usize, usize), CMat>, m: usize, i: usize, v: &CVec, j: usize, w: &CVec) {
    // bosonic symmetry: store (min, max); same-site pairs symmetrize in place
    let (key, flip) = if i <= j { ((i, j), false) } else { ((j, i), true) };
    let q = store.entry(key).or_insert_with(|| CMat::zeros((m, m)));
    for mu in 0..m {
        for nu in 0..m {
            if flip {
                q[(nu, mu)] += v[mu] * w[nu];
            } else {
                q[(mu, nu)] += v[mu] * w[nu];
            }
        }
    }
}

/// Quasi-local bosonic image of a centered single-site operator h at offset
/// 0, truncated at quadratic degree and the given horizon.
///
/// Four families per visited site: on-site rotation a†a, terminal deposit a†,
/// pass-through of a bare site, and pass-through of a derivative site (the
/// derivative is consumed and may be re-deposited further right).
pub fn boson_map_local(
    mps: &UniformMps,
    basis: &TangentBasis,
    h: &CMat,
    horizon: usize,
) -> BosonPolynomial {
    let m = basis.modes;
    let mut poly = BosonPolynomial::empty(m, horizon);
    let modes: Vec<Insertion> = (0..m).map(|mu| basis.tensor(mu)).collect();

    // site 0 with the operator in place
    let ha = op_on(h, &mps.site);
    poly.constant = vac(mps, &pull(mps, &ha));
    poly.create.insert(0, basis.project(&ha));
    // on-site rotation: ⟨∂_μ^{(0)}|h|∂_ν^{(0)}⟩
    let mut rot = CMat::zeros((m, m));
    let hb: Vec<Insertion> = (0..m).map(|nu| op_on(h, &modes[nu])).collect();
    for (nu, hbn) in hb.iter().enumerate() {
        let col = basis.project(hbn);
        for mu in 0..m {
            rot[(mu, nu)] = col[mu];
        }
    }
    poly.hop.insert((0, 0), rot);

    // the line pulled past a bare site 0
    let line0 = pull(mps, &ha);
    expand_line(mps, basis, &modes, line0, 0, C64::new(1.0, 0.0), &mut poly, None);

    // the line created by consuming a derivative at site 0: h acting on B_ν
    for (nu, hbn) in hb.iter().enumerate() {
        let k = pull(mps, hbn);
        expand_line(mps, basis, &modes, k, 0, C64::new(1.0, 0.0), &mut poly, Some(nu));
    }
    poly
}

/// Walk a pulled line from `from + 1` to the horizon, depositing the four
/// families at each site. `consumed` carries the mode index annihilated at
/// `from` when the line was created by a derivative pass-through.
#[allow(clippy::too_many_arguments)]
fn expand_line(
    mps: &UniformMps,
    basis: &TangentBasis,
    modes: &[Insertion],
    line: CMat,
    from: usize,
    weight: C64,
    poly: &mut BosonPolynomial,
    consumed: Option<usize>,
) {
    let m = basis.modes;
    let scale = frobenius(&line).max(1e-300);
    let mut n = line;
    // vacuum completion of the line contributes at the consumption site
    if let Some(nu) = consumed {
        let amp = vac(mps, &n) * weight;
        let entry = poly
            .annih
            .entry(from)
            .or_insert_with(|| Array1::zeros(m));
        entry[nu] += amp;
    }
    for site in from + 1..=poly.horizon {
        let bare = bond_times(&n, &mps.site);
        let deposits = basis.project(&bare).mapv(|z| z * weight);
        match consumed {
            None => {
                let entry = poly
                    .create
                    .entry(site)
                    .or_insert_with(|| Array1::zeros(m));
                for mu in 0..m {
                    entry[mu] += deposits[mu];
                }
            }
            Some(nu) => {
                let q = poly.hop_mut((site, from));
                for mu in 0..m {
                    q[(mu, nu)] += deposits[mu];
                }
            }
        }
        // pass through a derivative at this site
        for (chi, mode) in modes.iter().enumerate() {
            let withb = bond_times(&n, mode);
            match consumed {
                None => {
                    // rotation of the derivative at `site` by the traveling line
                    let col = basis.project(&withb).mapv(|z| z * weight);
                    let q = poly.hop_mut((site, site));
                    for mu in 0..m {
                        q[(mu, chi)] += col[mu];
                    }
                    // consume it; the new line may terminate (a_χ) or
                    // re-deposit further right (a†_μ^{(j)} a_χ^{(site)})
                    let k = pull(mps, &withb);
                    if frobenius(&k) > 1e-13 * scale {
                        expand_line(mps, basis, modes, k, site, weight, poly, Some(chi));
                    }
                }
                Some(nu) => {
                    // second consumption: double annihilation, keep the
                    // vacuum completion only (re-deposits are cubic)
                    let k = pull(mps, &withb);
                    let amp = vac(mps, &k) * weight;
                    if amp != ZERO {
                        add_pair_scalar(&mut poly.pair_annih, m, site, chi, from, nu, amp);
                    }
                    // rotation of the later derivative with one already
                    // consumed is cubic (a† a a); dropped.
                }
            }
        }
        n = travel(mps, &n);
        let t = frobenius(&n) / scale;
        if t < 1e-12 {
            poly.tail = poly.tail.max(t);
            return;
        }
        if site == poly.horizon {
            poly.tail = poly.tail.max(t);
        }
    }
}

fn add_pair_scalar(
    store: &mut BTreeMap<(usize, usize), CMat>,
    m: usize,
    i: usize,
    mu: usize,
    j: usize,
    nu: usize,
    amp: C64,
) {
    let (key, row, col) = if i <= j { ((i, j), mu, nu) } else { ((j, i), nu, mu) };
    let q = store.entry(key).or_insert_with(|| CMat::zeros((m, m)));
    q[(row, col)] += amp;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, kron};
    use crate::models::{aklt_state, spin_matrices};
    use crate::mps::{
        canonicalize, embed_overlap, finite_chain_embed, random_tensor, tangent_basis,
    };
    use ndarray::Array3;

    fn aklt_setup() -> (UniformMps, TangentBasis) {
        let mps = aklt_state().unwrap();
        let basis = tangent_basis(&mps).unwrap();
        (mps, basis)
    }

    fn centered_sz(mps: &UniformMps) -> CMat {
        let (_, _, sz) = spin_matrices(mps.phys);
        // AKLT: ⟨Sz⟩ = 0 already; center anyway
        let mut l = CMat::zeros((mps.bond, mps.bond));
        for s in 0..mps.phys {
            for sp in 0..mps.phys {
                if sz[(s, sp)] != ZERO {
                    l = l + dagger(&mps.site[s]).dot(&mps.site[sp]).mapv(|z| z * sz[(s, sp)]);
                }
            }
        }
        let mean = l.dot(&mps.gamma).diag().sum();
        &sz - &identity(mps.phys).mapv(|z| z * mean)
    }

    #[test]
    fn pull_through_identity_is_trivial() {
        let (mps, basis) = aklt_setup();
        let eye = identity(mps.phys * mps.bond);
        let (x, pulled) = pull_through_step(&mps, &basis, &eye, SiteTensor::Reference);
        assert!(x.iter().all(|z| z.norm() < 1e-12));
        assert!(frobenius(&(&pulled - &identity(mps.bond))) < 1e-12);
    }

    #[test]
    fn pull_through_exact_split() {
        let (mps, basis) = aklt_setup();
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = mps.phys * mps.bond;
        let m_op = CMat::from_shape_fn((n, n), |_| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        for site in [SiteTensor::Reference, SiteTensor::Mode(3)] {
            let (x, pulled) = pull_through_step(&mps, &basis, &m_op, site);
            let tensor = match site {
                SiteTensor::Reference => mps.site.clone(),
                SiteTensor::Mode(mu) => basis.tensor(mu),
            };
            // rebuild the insertion M·tensor
            let mut ins = vec![CMat::zeros((mps.bond, mps.bond)); mps.phys];
            for s in 0..mps.phys {
                for a in 0..mps.bond {
                    for sp in 0..mps.phys {
                        for ap in 0..mps.bond {
                            let c = m_op[(s * mps.bond + a, sp * mps.bond + ap)];
                            for b in 0..mps.bond {
                                ins[s][(a, b)] += c * tensor[sp][(ap, b)];
                            }
                        }
                    }
                }
            }
            let res = split_residual(&mps, &basis, &ins, &x, &pulled);
            assert!(res < 1e-12, "split residual {res}");
        }
    }

    #[test]
    fn pulled_line_decays_at_transfer_rate() {
        let (mps, basis) = aklt_setup();
        let hz = centered_sz(&mps);
        let m_op = kron(&hz, &identity(mps.bond));
        let (_, mut pulled) = pull_through_step(&mps, &basis, &m_op, SiteTensor::Reference);
        let n0 = frobenius(&pulled);
        for n in 1..=6 {
            pulled = travel(&mps, &pulled);
            let bound = n0 * (1.0_f64 / 3.0).powi(n) * 1.01;
            assert!(frobenius(&pulled) <= bound, "step {n}: {} > {bound}", frobenius(&pulled));
        }
    }

    #[test]
    fn operator_expand_zero_and_reconstruction() {
        let (mps, basis) = aklt_setup();
        let zero = CMat::zeros((3, 3));
        let (coeffs, _) = operator_expand(&mps, &basis, &zero, 6);
        assert!(coeffs.iter().all(|c| c.iter().all(|z| z.norm() < 1e-14)));

        // h|Ψ⟩ reconstruction on a dense embedding, insertion at site 3 of 10
        let hz = centered_sz(&mps);
        let n = 10;
        let insert_at = 3;
        let (coeffs, tail) = operator_expand(&mps, &basis, &hz, n - insert_at);
        assert!(tail < 2.0 * (1.0_f64 / 3.0).powi((n - insert_at) as i32));
        let psi = finite_chain_embed(&mps, &basis, n, &[]).unwrap();
        let dense = apply_site_op(&mps, &hz, n, insert_at, &psi);
        // expansion reconstruction: Σ_i x_μ^{(i)} |∂_μ^{(i)}⟩ embedded, plus
        // the leftover pulled line on the open right edge bond
        let mut rebuilt = Array3::<C64>::zeros(psi.dim());
        for (i, cv) in coeffs.iter().enumerate() {
            let site = insert_at + i;
            if site >= n {
                break;
            }
            for mu in 0..basis.modes {
                if cv[mu].norm() < 1e-16 {
                    continue;
                }
                let part = finite_chain_embed(&mps, &basis, n, &[(site, mu)]).unwrap();
                rebuilt = rebuilt + part.mapv(|z| z * cv[mu]);
            }
        }
        let mut line = pull(&mps, &op_on(&hz, &mps.site));
        for _ in 0..n - insert_at - 1 {
            line = travel(&mps, &line);
        }
        let (dl, total, dr) = psi.dim();
        for l in 0..dl {
            for idx in 0..total {
                for b in 0..dr {
                    for c in 0..dr {
                        rebuilt[(l, idx, b)] += psi[(l, idx, c)] * line[(c, b)];
                    }
                }
            }
        }
        let diff = &dense - &rebuilt;
        let err = embed_overlap(&diff, &diff, &mps.gamma).re.sqrt();
        assert!(err < 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn operator_expand_decay_ratio_matches_lambda2() {
        let (mps, basis) = aklt_setup();
        let hz = centered_sz(&mps);
        let (coeffs, _) = operator_expand(&mps, &basis, &hz, 9);
        let norms: Vec<f64> = coeffs
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        for i in 3..norms.len() - 1 {
            if norms[i] > 1e-10 {
                let ratio = norms[i + 1] / norms[i];
                assert!((ratio - 1.0 / 3.0).abs() < 0.05, "ratio {ratio} at {i}");
            }
        }
    }

    fn apply_site_op(
        mps: &UniformMps,
        op: &CMat,
        n: usize,
        at: usize,
        psi: &Array3<C64>,
    ) -> Array3<C64> {
        let (dl, total, dr) = psi.dim();
        let mut out = Array3::<C64>::zeros((dl, total, dr));
        let right = mps.phys.pow((n - 1 - at) as u32);
        for l in 0..dl {
            for idx in 0..total {
                let s = (idx / right) % mps.phys;
                for sp in 0..mps.phys {
                    let c = op[(sp, s)];
                    if c != ZERO {
                        let target = (idx as i64 + (sp as i64 - s as i64) * right as i64) as usize;
                        for r in 0..dr {
                            out[(l, target, r)] += c * psi[(l, idx, r)];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn boson_map_reproduces_dense_matrix_elements() {
        let (mps, basis) = aklt_setup();
        let hz = centered_sz(&mps);
        let poly = boson_map_local(&mps, &basis, &hz, 8);
        assert!(poly.vacuum_expectation().norm() < 1e-12);
        // on-site rotation block is Hermitian for Hermitian h
        let q00 = poly.hop.get(&(0, 0)).unwrap();
        assert!(frobenius(&(q00 - &dagger(q00))) < 1e-10);

        let n = 11;
        let h_at = 4;
        let mx: Vec<CMat> = (1..=6)
            .map(|x| crate::gram::overlap_m(&mps, &basis, x).unwrap())
            .collect();
        // bra/ket derivative placements spanning |i−j| ≤ 4 and both signs of
        // the offset from the operator site
        let cases = [
            (4usize, 4usize),
            (5, 4),
            (4, 5),
            (6, 4),
            (4, 8),
            (8, 4),
            (2, 2),
            (2, 4),
            (6, 2),
            (3, 3),
        ];
        for (i, j) in cases {
            for mu in [0usize, 3, 6] {
                for nu in [1usize, 5] {
                    let bra = finite_chain_embed(&mps, &basis, n, &[(i, mu)]).unwrap();
                    let ket0 = finite_chain_embed(&mps, &basis, n, &[(j, nu)]).unwrap();
                    let ket = apply_site_op(&mps, &hz, n, h_at, &ket0);
                    let dense = embed_overlap(&bra, &ket, &mps.gamma);
                    let pred = poly.gram_weighted_one_boson_element(
                        (i as i64 - h_at as i64, mu),
                        (j as i64 - h_at as i64, nu),
                        &mx,
                    );
                    assert!(
                        (dense - pred).norm() < 1e-6,
                        "(i,j,μ,ν) = ({i},{j},{mu},{nu}): dense {dense} vs poly {pred}"
                    );
                }
            }
        }
    }

    #[test]
    fn compose_contraction_rules() {
        // two single-mode polynomials: P = a†_0 + a_0, Q = a†_0 a_0
        let mut p = BosonPolynomial::empty(1, 2);
        p.create.insert(0, Array1::from_elem(1, C64::new(1.0, 0.0)));
        p.annih.insert(0, Array1::from_elem(1, C64::new(1.0, 0.0)));
        let mut q = BosonPolynomial::empty(1, 2);
        q.hop.insert((0, 0), CMat::from_elem((1, 1), C64::new(1.0, 0.0)));
        // P·P = a†a† + aa + a†a + (a a†) = pair_c + pair_a + 2 a†a + 1
        let pp = p.compose(&p);
        assert!((pp.constant - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((pp.hop[&(0, 0)][(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-14);
        assert!((pp.pair_create[&(0, 0)][(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((pp.pair_annih[&(0, 0)][(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
        // P·Q = a†·a†a (cubic, dropped) + a·a†a = a†aa + a (kept linear part)
        let pq = p.compose(&q);
        assert!((pq.annih[&0][0] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(pq.create.get(&0).map_or(true, |v| v[0].norm() < 1e-14));
        // Q·P: a†a·a† = a† + cubic; a†a·a dropped
        let qp = q.compose(&p);
        assert!((qp.create[&0][0] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn random_state_split_exactness() {
        let mps = canonicalize(&random_tensor(3, 2, 33)).unwrap();
        let basis = tangent_basis(&mps).unwrap();
        let hz = {
            let (_, _, sz) = spin_matrices(3);
            sz
        };
        let ha = op_on(&hz, &mps.site);
        let coeffs = basis.project(&ha);
        let pulled = pull(&mps, &ha);
        let res = split_residual(&mps, &basis, &ha, &coeffs, &pulled);
        assert!(res < 1e-12);
    }
}
