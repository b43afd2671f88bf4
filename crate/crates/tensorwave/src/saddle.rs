//! Energy density and tangent-space gradient on the uniform-MPS manifold,
//! the gradient-descent saddle search, and cached large-D reference energies.

use crate::linalg::{identity, CMat, CVec};
use crate::models::SpinModel;
use crate::mps::{
    canonicalize_hinted, close, geometric_sum, lapply_op2, random_tensor, tangent_basis,
    MpsError, TangentBasis, UniformMps,
};
use num_complex::Complex64 as C64;
use sha2::{Digest, Sha256};

#[derive(Clone)]
pub struct SaddleReport {
    pub mps: UniformMps,
    pub energy_density: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
pub struct SaddleOpts {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SaddleOpts {
    fn default() -> Self {
        SaddleOpts { seed: 7, max_iter: 20_000, tol: 1e-8 }
    }
}

/// Left environment after applying the centered density once: Σ h̄·A†A†·1·A·A.
fn bond_env(h: &CMat, mps: &UniformMps) -> CMat {
    let a = &mps.site;
    lapply_op2(h, (a, a), (a, a), &identity(mps.bond))
}

/// ⟨h⟩ per bond with the identity left environment and Γ on the right.
pub fn energy_density(mps: &UniformMps, model: &SpinModel) -> Result<f64, MpsError> {
    if model.phys != mps.phys {
        return Err(MpsError::Shape(format!(
            "model acts on d = {}, state has d = {}",
            model.phys, mps.phys
        )));
    }
    let e = close(&bond_env(&model.hdensity, mps), &mps.gamma);
    if e.im.abs() > 1e-8 {
        return Err(MpsError::Shape(format!(
            "non-Hermitian contraction: energy imaginary part {:.3e}",
            e.im
        )));
    }
    Ok(e.re)
}

/// Per-site tangent gradient h_μ = ⟨∂_μ Ψ|H̄|Ψ⟩ with the density centered.
///
/// Only three position classes survive the left gauge: the geometric-sum
/// tail of bonds strictly left of the derivative, and the two bonds touching
/// it. Bonds strictly to the right annihilate against Σ_s A^s† B_μ^s = 0.
pub fn gradient(
    mps: &UniformMps,
    basis: &TangentBasis,
    model: &SpinModel,
) -> Result<CVec, MpsError> {
    let e0 = energy_density(mps, model)?;
    let h = model.centered(e0);
    let a = &mps.site;
    let d = mps.phys;
    let dim = mps.bond;

    let tail = geometric_sum(mps, &bond_env(&h, mps), true)?;

    // W^s collects, per bra physical index, everything that closes against
    // Tr(B_μ^s† W^s); see TangentBasis::project_raw.
    let mut w: Vec<CMat> = (0..d).map(|s| tail.dot(&a[s]).dot(&mps.gamma)).collect();

    // h̄ on (−1, 0): bra (A, B_μ), ket (A, A)
    for tp in 0..d {
        for sp in 0..d {
            let mut acc = CMat::zeros((dim, dim));
            for s in 0..d {
                let left = crate::linalg::dagger(&a[sp]).dot(&a[s]);
                for t in 0..d {
                    let c = h[(sp * d + tp, s * d + t)];
                    if c != C64::new(0.0, 0.0) {
                        acc = acc + left.dot(&a[t]).mapv(|z| z * c);
                    }
                }
            }
            w[tp] = &w[tp] + &acc.dot(&mps.gamma);
        }
    }

    // h̄ on (0, 1): bra (B_μ, A), ket (A, A); Γ closes past the second site.
    for sp in 0..d {
        let mut acc = CMat::zeros((dim, dim));
        for tp in 0..d {
            for s in 0..d {
                for t in 0..d {
                    let c = h[(sp * d + tp, s * d + t)];
                    if c != C64::new(0.0, 0.0) {
                        acc = acc
                            + a[s]
                                .dot(&a[t])
                                .dot(&mps.gamma)
                                .dot(&crate::linalg::dagger(&a[tp]))
                                .mapv(|z| z * c);
                    }
                }
            }
        }
        w[sp] = &w[sp] + &acc;
    }

    Ok(basis.project_raw(&w))
}

fn grad_inf_norm(g: &CVec) -> f64 {
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn grad_sq_norm(g: &CVec) -> f64 {
    g.iter().map(|z| z.norm_sqr()).sum()
}

/// Tangent gradient descent with backtracking line search.
///
/// Starting tensors come from `init` (padded with small noise when the bond
/// dimension grows) or from a seeded complex Gaussian draw.
pub fn find_saddle(
    model: &SpinModel,
    bond: usize,
    opts: SaddleOpts,
    init: Option<&UniformMps>,
) -> Result<SaddleReport, MpsError> {
    let d = model.phys;
    let raw: Vec<CMat> = match init {
        Some(prev) => embed_tensor(&prev.site, bond, opts.seed),
        None => random_tensor(d, bond, opts.seed),
    };

    let mut mps = canonicalize_hinted(&raw, None, None)?;
    let mut energy = energy_density(&mps, model)?;
    let mut step = 0.05;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut prev_grad_norm = f64::INFINITY;

    for it in 0..opts.max_iter {
        iterations = it;
        let basis = tangent_basis(&mps)?;
        let g = gradient(&mps, &basis, model)?;
        grad_norm = grad_inf_norm(&g);
        if grad_norm < opts.tol {
            return Ok(SaddleReport {
                mps,
                energy_density: energy,
                grad_norm,
                iterations,
                converged: true,
            });
        }
        let gsq = grad_sq_norm(&g);
        let direction = basis.insertion_from_coeffs(&g);
        let trial_at = |eta: f64| -> Vec<CMat> {
            mps.site
                .iter()
                .zip(direction.iter())
                .map(|(a, b)| a - &b.mapv(|z| z * eta))
                .collect()
        };

        // Once the Armijo decrease drops below the resolution of the energy
        // evaluation, line searching is meaningless; switch to plain gradient
        // flow with step feedback from the gradient norm itself.
        let armijo_floor = 1e-13 * (1.0 + energy.abs());
        if 1e-4 * step * gsq <= armijo_floor {
            if grad_norm > prev_grad_norm {
                step = (step * 0.5).max(1e-10);
            } else {
                step = (step * 1.05).min(0.5);
            }
            match canonicalize_hinted(&trial_at(step), None, Some(&mps.gamma)) {
                Ok(trial_mps) => {
                    energy = energy_density(&trial_mps, model)?;
                    mps = trial_mps;
                    prev_grad_norm = grad_norm;
                    continue;
                }
                Err(_) => {
                    step *= 0.25;
                    prev_grad_norm = grad_norm;
                    continue;
                }
            }
        }

        let mut accepted = false;
        for _ in 0..60 {
            match canonicalize_hinted(&trial_at(step), None, Some(&mps.gamma)) {
                Ok(trial_mps) => {
                    let trial_energy = energy_density(&trial_mps, model)?;
                    if trial_energy <= energy - 1e-4 * step * gsq {
                        mps = trial_mps;
                        energy = trial_energy;
                        step = (step * 1.4).min(1.0);
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        prev_grad_norm = grad_norm;
        if !accepted {
            break;
        }
    }

    Ok(SaddleReport { mps, energy_density: energy, grad_norm, iterations, converged: false })
}

/// Pad a lower bond dimension tensor into a larger one, seeding the new
/// directions at 1e-3 of the existing scale so the nesting bound holds.
fn embed_tensor(site: &[CMat], bond: usize, seed: u64) -> Vec<CMat> {
    let d = site.len();
    let old = site[0].nrows();
    if old == bond {
        return site.to_vec();
    }
    assert!(bond > old, "embedding requires a larger bond dimension");
    let noise = random_tensor(d, bond, seed ^ 0x9e37_79b9);
    (0..d)
        .map(|s| {
            let mut m = noise[s].mapv(|z| z * 1e-3);
            for a in 0..old {
                for b in 0..old {
                    m[(a, b)] = site[s][(a, b)];
                }
            }
            m
        })
        .collect()
}

/// Variational reference energy at a large bond dimension, grown through a
/// ladder of warm-started optimizations and cached on disk.
pub fn reference_energy(
    model: &SpinModel,
    bond_ref: usize,
    tol: f64,
    cache_dir: Option<&std::path::Path>,
) -> Result<f64, MpsError> {
    let key = cache_key(model, bond_ref, tol);
    if let Some(dir) = cache_dir {
        let path = dir.join(format!("ref-{key}.txt"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Some(first) = text.lines().next() {
                if let Ok(e) = first.trim().parse::<f64>() {
                    return Ok(e);
                }
            }
        }
    }
    let mut ladder: Vec<usize> = Vec::new();
    let mut dcur = 2.min(bond_ref);
    while dcur < bond_ref {
        ladder.push(dcur);
        dcur = (dcur * 2).min(bond_ref);
    }
    ladder.push(bond_ref);

    let mut prev: Option<UniformMps> = None;
    let mut report = None;
    for (i, &dstep) in ladder.iter().enumerate() {
        let step_tol = if dstep == bond_ref { tol } else { (tol * 100.0).max(1e-6) };
        let opts = SaddleOpts { seed: 7 + i as u64, max_iter: 20_000, tol: step_tol };
        let r = find_saddle(model, dstep, opts, prev.as_ref())?;
        prev = Some(r.mps.clone());
        report = Some(r);
    }
    let report = report.expect("ladder is nonempty");
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("ref-{key}.txt"));
        let tensor_path = dir.join(format!("ref-{key}-tensor.txt"));
        crate::mps::save_tensor(&report.mps, &tensor_path)?;
        std::fs::write(
            &path,
            format!(
                "{:.16e}\ngrad_norm {:.3e}\nconverged {}\n",
                report.energy_density, report.grad_norm, report.converged
            ),
        )?;
    }
    Ok(report.energy_density)
}

fn cache_key(model: &SpinModel, bond: usize, tol: f64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.name.as_bytes());
    for (k, v) in &model.params {
        hasher.update(k.as_bytes());
        hasher.update(v.to_le_bytes());
    }
    hasher.update(bond.to_le_bytes());
    hasher.update(tol.to_le_bytes());
    let digest = hasher.finalize();
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}
