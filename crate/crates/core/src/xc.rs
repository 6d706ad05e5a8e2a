//! Many-body corrections fed back from the RDMs into the Kohn–Sham problem:
//! density correction, local exchange-correlation potential, exchange-correlation
//! energy and the corrected (orbital-dependent) Hamiltonian.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{laplacian, Field, FieldKind, InteractionKernel};
use crate::integrals::DerivativeKernels;
use crate::ks::{external_and_hartree_energy, hartree_potential, kinetic_energy, ks_hamiltonian_matrix, KsState};
use crate::rdm::RdmPair;
use crate::zm::ZmOrbitalSet;

/// Largest `|Tr ρ₁ − N|` accepted by [`delta_rho`].
pub const TRACE_TOL: f64 = 1e-6;
/// Imaginary parts of `v_xc^loc` up to this (relative) size are dropped.
pub const IMAGINARY_TOL: f64 = 1e-8;
/// Default abort threshold on the relative Hermitization deviation.
///
/// The kinetic correction restricted to the basis is `t ρᵀ`, which is only
/// Hermitian when `[t, ρᵀ] = 0`, so a sizeable deviation is expected for any
/// correlated state. Only a deviation comparable to the correction itself is
/// treated as a failure.
pub const DEFAULT_HERMITICITY_ABORT: f64 = 0.5;

fn check_trace(rho1: &DMatrix<C64>, n: usize) -> Result<()> {
    let tr = rho1.trace();
    if (tr.re - n as f64).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::TraceMismatch {
            trace: tr.re,
            n: n as f64,
        });
    }
    Ok(())
}

fn check_modes(rho1: &DMatrix<C64>, basis: &ZmOrbitalSet) -> Result<()> {
    if rho1.nrows() != basis.m() || rho1.ncols() != basis.m() {
        return Err(Error::DimensionMismatch(format!(
            "rho1 is {:?}, basis has {} orbitals",
            rho1.shape(),
            basis.m()
        )));
    }
    Ok(())
}

/// `Δρ(r) = (2/N) Σ_{i<j} Re(ρ_ij e^{i(ξ_j − ξ_i)})`.
pub fn delta_rho(rho1: &DMatrix<C64>, basis: &ZmOrbitalSet) -> Result<Field> {
    check_modes(rho1, basis)?;
    check_trace(rho1, basis.n_electrons)?;
    let m = basis.m();
    let g = basis.grid().len();
    let mut out = vec![0.0; g];
    for i in 0..m {
        for j in i + 1..m {
            let r = rho1[(i, j)];
            if r == C64::new(0.0, 0.0) {
                continue;
            }
            let k = basis.k_diff(j, i);
            for (p, o) in out.iter_mut().enumerate() {
                *o += (r * C64::from_polar(1.0, basis.phase.phase_at(k, p))).re;
            }
        }
    }
    let scale = 2.0 / basis.n_electrons as f64;
    Field::from_real(*basis.grid(), FieldKind::Generic, out.into_iter().map(|x| x * scale).collect())
}

/// `(1 + Δρ) ρ^KS`.
pub fn many_body_density(rho1: &DMatrix<C64>, basis: &ZmOrbitalSet) -> Result<Field> {
    let d = delta_rho(rho1, basis)?;
    let vals: Vec<f64> = basis
        .source_density
        .values()
        .iter()
        .zip(d.values())
        .map(|(r, d)| (1.0 + d.re) * r.re)
        .collect();
    Field::from_real(*basis.grid(), FieldKind::Generic, vals)
}

/// `Σ_ij ρ_ij φ_i*(r) φ_j(r)` straight from the orbitals.
pub fn density_from_orbitals(rho1: &DMatrix<C64>, basis: &ZmOrbitalSet) -> Result<Field> {
    check_modes(rho1, basis)?;
    let m = basis.m();
    let mut out = vec![C64::new(0.0, 0.0); basis.grid().len()];
    for i in 0..m {
        for j in 0..m {
            let r = rho1[(i, j)];
            for (o, (a, b)) in out
                .iter_mut()
                .zip(basis.orbitals[i].values().iter().zip(basis.orbitals[j].values()))
            {
                *o += r * a.conj() * b;
            }
        }
    }
    Field::new(*basis.grid(), FieldKind::Generic, out)
}

/// `E_xc = ℰ − T_KS − E_ext − E_H` with a precomputed Hartree potential.
pub fn exchange_correlation_energy_with(many_body_e: f64, ks: &KsState, v_ext1: &Field, v_h: &Field) -> Result<f64> {
    let t = kinetic_energy(ks)?;
    let (e_ext, e_h) = external_and_hartree_energy(&ks.density, v_ext1, v_h)?;
    Ok(many_body_e - t - e_ext - e_h)
}

/// `E_xc = ℰ − T_KS − E_ext − E_H`.
pub fn exchange_correlation_energy(
    many_body_e: f64,
    ks: &KsState,
    v_ext1: &Field,
    kernel: &InteractionKernel,
) -> Result<f64> {
    let v_h = hartree_potential(&ks.density, kernel)?;
    exchange_correlation_energy_with(many_body_e, ks, v_ext1, &v_h)
}

/// Local exchange-correlation potential
/// `Σ_{i≠j} ρ_ij δv_ij/δρ + ½ Σ' Γ_ijkl δv_ijkl/δρ − v_H/N`,
/// where `Σ'` runs over every index set except `i = j` together with `k = l`
/// (those terms sum to `v_H(1 − 1/N)` and are folded into the last term).
pub fn vxc_local(rdms: &RdmPair, kernels: &DerivativeKernels, v_h: &Field, v_ext1: &Field) -> Result<Field> {
    if rdms.basis_id != kernels.basis_id() {
        return Err(Error::ProvenanceMismatch {
            kernels: kernels.basis_id(),
            rdms: rdms.basis_id,
        });
    }
    let m = kernels.m();
    if rdms.m() != m {
        return Err(Error::DimensionMismatch(format!("RDMs for {} modes, kernels for {m}", rdms.m())));
    }
    check_trace(&rdms.rho1, kernels.n_electrons())?;
    let grid = *kernels.phase().grid();
    grid.ensure_same(v_h.grid())?;
    grid.ensure_same(v_ext1.grid())?;
    let g = grid.len();
    let n = kernels.n_electrons() as f64;
    let zero = C64::new(0.0, 0.0);
    let diff = |j: usize, i: usize| kernels.k_diff(j, i).expect("mode index within range");

    // one-body part, grouped by wavevector difference
    let mut ext_coeff: BTreeMap<[i32; 3], C64> = BTreeMap::new();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                *ext_coeff.entry(diff(j, i)).or_insert(zero) += rdms.rho1[(i, j)];
            }
        }
    }
    let v1: Vec<C64> = v_ext1.values().iter().map(|v| C64::from(v.re)).collect();
    let mut total = vec![zero; g];
    for (d, c) in &ext_coeff {
        for (t, x) in total.iter_mut().zip(kernels.density_phase_derivative(*d, &v1)) {
            *t += c * x / n;
        }
    }

    // two-body part: Σ' ½(Γ_ijkl + Γ_klij) 𝕍_ijkl, grouped by k_ji
    let mut sources: BTreeMap<[i32; 3], Vec<C64>> = BTreeMap::new();
    for i in 0..m {
        for j in 0..m {
            let d1 = diff(j, i);
            for k in 0..m {
                for l in 0..m {
                    if i == j && k == l {
                        continue;
                    }
                    let gamma = 0.5 * (rdms.gamma2.get(i, j, k, l) + rdms.gamma2.get(k, l, i, j));
                    if gamma == zero {
                        continue;
                    }
                    let d2 = diff(l, k);
                    let gl = kernels
                        .kernel_contraction(d2)
                        .ok_or_else(|| Error::InvalidArgument(format!("no kernel contraction for {d2:?}")))?;
                    let acc = sources.entry(d1).or_insert_with(|| vec![zero; g]);
                    for (a, x) in acc.iter_mut().zip(gl) {
                        *a += gamma * x;
                    }
                }
            }
        }
    }
    for (d, a) in &sources {
        for (t, x) in total.iter_mut().zip(kernels.density_phase_derivative(*d, a)) {
            *t += x / (n * n);
        }
    }
    for (t, h) in total.iter_mut().zip(v_h.values()) {
        *t -= h.re / n;
    }

    let scale = total.iter().map(|x| x.re.abs()).fold(1.0, f64::max);
    let residue = total.iter().map(|x| x.im.abs()).fold(0.0, f64::max);
    if residue > IMAGINARY_TOL * scale {
        return Err(Error::ImaginaryResidue(residue));
    }
    Field::from_real(grid, FieldKind::Potential, total.iter().map(|x| x.re).collect())
}

/// Local potentials entering the corrected Hamiltonian.
#[derive(Debug, Clone)]
pub struct KsIngredients {
    pub v_ext1: Field,
    pub v_hartree: Field,
}

/// `C = I − ρ₁`, the weights of the non-local kinetic correction.
pub fn kinetic_correction(rho1: &DMatrix<C64>) -> DMatrix<C64> {
    DMatrix::identity(rho1.nrows(), rho1.ncols()) - rho1
}

/// `Ĥψ = −½∇²ψ + ½ Σ_mj (δ_mj − ρ_mj) ⟨φ_m|ψ⟩ ∇²φ_j + (v_ext + v_H + v_xc^loc) ψ`.
///
/// On the span of the basis this is `−½ Σ_mj ρ_mj ⟨φ_m|ψ⟩ ∇²φ_j + …`; off the
/// span it keeps the ordinary kinetic operator.
pub fn apply_corrected_hamiltonian(
    psi: &Field,
    ingredients: &KsIngredients,
    basis: &ZmOrbitalSet,
    rho1: &DMatrix<C64>,
    vxc_loc: &Field,
) -> Result<Field> {
    check_modes(rho1, basis)?;
    let grid = *basis.grid();
    for f in [psi, &ingredients.v_ext1, &ingredients.v_hartree, vxc_loc] {
        grid.ensure_same(f.grid())?;
    }
    let c = kinetic_correction(rho1);
    let m = basis.m();
    let lap_psi = laplacian(psi)?;
    let mut out: Vec<C64> = lap_psi.values().iter().map(|x| -0.5 * x).collect();
    let overlaps: Vec<C64> = basis.orbitals.iter().map(|o| o.inner(psi)).collect::<Result<_>>()?;
    for j in 0..m {
        let coeff: C64 = (0..m).map(|mm| c[(mm, j)] * overlaps[mm]).sum::<C64>() * 0.5;
        if coeff == C64::new(0.0, 0.0) {
            continue;
        }
        let lap = laplacian(&basis.orbitals[j])?;
        for (o, l) in out.iter_mut().zip(lap.values()) {
            *o += coeff * l;
        }
    }
    for (p, o) in out.iter_mut().enumerate() {
        let v = ingredients.v_ext1.values()[p].re + ingredients.v_hartree.values()[p].re + vxc_loc.values()[p].re;
        *o += v * psi.values()[p];
    }
    Field::new(grid, FieldKind::Generic, out)
}

/// Dense corrected Hamiltonian over the interior grid points.
#[derive(Debug, Clone)]
pub struct CorrectedHamiltonian {
    /// Hermitized full matrix.
    pub matrix: DMatrix<C64>,
    /// Hermitized non-local kinetic correction alone.
    pub nonlocal: DMatrix<C64>,
    /// `max |H − H†| / 2` before Hermitization.
    pub deviation: f64,
    /// `deviation` over the largest entry of the raw non-local correction.
    pub relative_deviation: f64,
}

/// Raw (un-Hermitized) non-local kinetic correction over interior points:
/// `K_pq = ½ Σ_mj C_mj ∇²φ_j(p) φ_m*(q) Δv`.
pub fn kinetic_correction_matrix(basis: &ZmOrbitalSet, rho1: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    check_modes(rho1, basis)?;
    let grid = basis.grid();
    let interior = grid.interior();
    let n_int = interior.len();
    let m = basis.m();
    let dv = grid.cell_volume();
    let mut lap_phi = DMatrix::<C64>::zeros(n_int, m);
    let mut phi_adj = DMatrix::<C64>::zeros(m, n_int);
    for j in 0..m {
        let lap = laplacian(&basis.orbitals[j])?;
        for (r, &idx) in interior.iter().enumerate() {
            lap_phi[(r, j)] = lap.values()[idx];
            phi_adj[(j, r)] = basis.orbitals[j].values()[idx].conj() * dv;
        }
    }
    let c = kinetic_correction(rho1);
    Ok(lap_phi * c.transpose() * phi_adj * C64::from(0.5))
}

/// Matrix of [`apply_corrected_hamiltonian`] over interior points, before
/// Hermitization.
pub fn corrected_hamiltonian_raw(
    ingredients: &KsIngredients,
    basis: &ZmOrbitalSet,
    rho1: &DMatrix<C64>,
    vxc_loc: &Field,
) -> Result<DMatrix<C64>> {
    let v_eff = ingredients.v_ext1.add(&ingredients.v_hartree)?.add(vxc_loc)?;
    let v_eff = v_eff.with_kind(FieldKind::Potential)?;
    Ok(ks_hamiltonian_matrix(&v_eff)? + kinetic_correction_matrix(basis, rho1)?)
}

/// Hermitized corrected Hamiltonian; fails when the relative Hermitization
/// deviation exceeds `abort`.
pub fn corrected_hamiltonian_matrix(
    ingredients: &KsIngredients,
    basis: &ZmOrbitalSet,
    rho1: &DMatrix<C64>,
    vxc_loc: &Field,
    abort: f64,
) -> Result<CorrectedHamiltonian> {
    let raw_k = kinetic_correction_matrix(basis, rho1)?;
    let deviation = crate::linalg::hermitian_deviation(&raw_k) / 2.0;
    let scale = raw_k.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let relative_deviation = if scale > 0.0 { deviation / scale } else { 0.0 };
    log::info!("corrected Hamiltonian Hermitization deviation {deviation:.3e} (relative {relative_deviation:.3e})");
    if relative_deviation > abort {
        return Err(Error::HermitizationDeviation {
            deviation: relative_deviation,
            threshold: abort,
        });
    }
    let nonlocal = crate::linalg::hermitize(&raw_k);
    let v_eff = ingredients.v_ext1.add(&ingredients.v_hartree)?.add(vxc_loc)?;
    let matrix = ks_hamiltonian_matrix(&v_eff.with_kind(FieldKind::Potential)?)? + &nonlocal;
    Ok(CorrectedHamiltonian {
        matrix,
        nonlocal,
        deviation,
        relative_deviation,
    })
}

/// Everything the next outer iteration needs from one set of RDMs.
#[derive(Debug, Clone)]
pub struct CorrectionBundle {
    pub delta_rho: Field,
    pub many_body_density: Field,
    pub vxc_loc: Field,
    pub kinetic_correction: DMatrix<C64>,
    pub e_xc: f64,
}

impl CorrectionBundle {
    pub fn max_abs_delta_rho(&self) -> f64 {
        self.delta_rho.values().iter().map(|x| x.re.abs()).fold(0.0, f64::max)
    }
}

/// Assemble the correction bundle from one set of RDMs.
pub fn build_correction(
    rdms: &RdmPair,
    basis: &ZmOrbitalSet,
    kernels: &DerivativeKernels,
    ks: &KsState,
    ingredients: &KsIngredients,
    many_body_e: f64,
) -> Result<CorrectionBundle> {
    let delta = delta_rho(&rdms.rho1, basis)?;
    let mb = many_body_density(&rdms.rho1, basis)?;
    let vxc = vxc_local(rdms, kernels, &ingredients.v_hartree, &ingredients.v_ext1)?;
    let e_xc = exchange_correlation_energy_with(many_body_e, ks, &ingredients.v_ext1, &ingredients.v_hartree)?;
    Ok(CorrectionBundle {
        delta_rho: delta,
        many_body_density: mb,
        vxc_loc: vxc,
        kinetic_correction: kinetic_correction(&rdms.rho1),
        e_xc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fci::solve_ground;
    use crate::grid::{Grid, KernelMatrix};
    use crate::integrals::{build_tensors, TensorOptions};
    use crate::integrals::Tensor4;
    use crate::ks::{solve_ks, KsState};
    use crate::zm::{auto_wavevectors, ZmOptions};
    use rand::{Rng, SeedableRng};

    struct Setup {
        ks: KsState,
        basis: ZmOrbitalSet,
        kernels: DerivativeKernels,
        tensors: crate::integrals::HamiltonianTensors,
        v1: Field,
        vh: Field,
        kmat: KernelMatrix,
    }

    fn setup(points: usize, opts: &ZmOptions) -> Setup {
        let g = Grid::line(-8.0, 8.0, points).unwrap();
        let v1 = Field::from_real_fn(g, FieldKind::Potential, |r| -2.0 / (r[0] * r[0] + 1.0).sqrt()).unwrap();
        let ks = KsState::from_spectrum(solve_ks(&v1, &g, 2).unwrap(), 2).unwrap();
        let basis = ZmOrbitalSet::build(&ks.density, &auto_wavevectors(4, 1), 2, opts).unwrap();
        let kmat = KernelMatrix::build(&g, &InteractionKernel::soft_coulomb_1d(1.0)).unwrap();
        let (tensors, kernels) = build_tensors(&basis, &v1, &kmat, &TensorOptions::default()).unwrap();
        let vh = crate::ks::hartree_with(&kmat, &ks.density).unwrap();
        Setup {
            ks,
            basis,
            kernels,
            tensors,
            v1,
            vh,
            kmat,
        }
    }

    fn random_rho1(m: usize, n: f64, seed: u64) -> DMatrix<C64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, m, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut h = (&a + a.adjoint()).scale(0.5);
        let shift = (n - h.trace().re) / m as f64;
        for i in 0..m {
            h[(i, i)] += shift;
        }
        h
    }

    fn determinant(m: usize, occ: &[usize], basis_id: u64) -> RdmPair {
        let mut rho = DMatrix::<C64>::zeros(m, m);
        for &i in occ {
            rho[(i, i)] = C64::from(1.0);
        }
        let mut g = Tensor4::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        g.set(i, j, k, l, rho[(i, j)] * rho[(k, l)] - rho[(i, l)] * rho[(k, j)]);
                    }
                }
            }
        }
        RdmPair::new(rho, g, basis_id).unwrap()
    }

    #[test]
    fn determinant_has_no_density_correction() {
        let s = setup(161, &ZmOptions::default());
        let r = determinant(4, &[0, 1], s.basis.basis_id());
        let d = delta_rho(&r.rho1, &s.basis).unwrap();
        assert!(d.max_abs() == 0.0);
        let mb = many_body_density(&r.rho1, &s.basis).unwrap();
        assert_eq!(mb.real_parts(), s.basis.source_density.real_parts());
    }

    #[test]
    fn density_routes_agree() {
        let s = setup(161, &ZmOptions::default());
        for seed in 0..5 {
            let rho1 = random_rho1(4, 2.0, seed);
            let a = density_from_orbitals(&rho1, &s.basis).unwrap();
            let b = many_body_density(&rho1, &s.basis).unwrap();
            let scale = a.max_abs();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).norm() <= 1e-10 * scale);
                assert!(x.im.abs() <= 1e-14 * scale);
            }
        }
        assert!(matches!(
            delta_rho(&random_rho1(4, 3.0, 1), &s.basis),
            Err(Error::TraceMismatch { .. })
        ));
    }

    #[test]
    fn many_body_density_normalization_tracks_gram_error() {
        let s = setup(401, &ZmOptions::default());
        let rho1 = solve_ground(&s.tensors, 2, 100).unwrap().rdms.rho1;
        let mb = many_body_density(&rho1, &s.basis).unwrap();
        let excess = (mb.integrate().re - 2.0).abs();
        let bound: f64 = 2.0 * rho1.iter().map(|x| x.norm()).sum::<f64>() * s.basis.gram_error().unwrap();
        assert!(excess <= bound + 1e-12, "{excess} vs {bound}");
    }

    #[test]
    fn diagonal_pair_terms_give_hartree_fraction() {
        let s = setup(161, &ZmOptions::default());
        let r = determinant(4, &[0, 1], s.basis.basis_id());
        let n = 2.0;
        let mut acc = vec![C64::new(0.0, 0.0); s.basis.grid().len()];
        for i in 0..4 {
            for k in 0..4 {
                let f = s.kernels.dvee_kernel(i, i, k, k).unwrap();
                for (a, x) in acc.iter_mut().zip(f.values()) {
                    *a += 0.5 * r.gamma2.get(i, i, k, k) * x;
                }
            }
        }
        for (a, h) in acc.iter().zip(s.vh.values()) {
            assert!((a.re - h.re * n * (n - 1.0) / (n * n)).abs() <= 1e-12 * h.re.abs().max(1e-300));
        }
    }

    #[test]
    fn determinant_vxc_is_exchange_minus_self_hartree() {
        let s = setup(161, &ZmOptions::default());
        let r = determinant(4, &[0, 1], s.basis.basis_id());
        let v = vxc_local(&r, &s.kernels, &s.vh, &s.v1).unwrap();
        // only Γ_ijji = −1 (i≠j occupied) survive besides the pair-diagonal terms
        let mut expect: Vec<f64> = s.vh.values().iter().map(|h| -h.re / 2.0).collect();
        for (i, j) in [(0, 1), (1, 0)] {
            let d = s.kernels.dvee_kernel(i, j, j, i).unwrap();
            for (e, x) in expect.iter_mut().zip(d.values()) {
                *e -= 0.5 * x.re;
            }
        }
        for (a, b) in v.values().iter().zip(&expect) {
            assert!((a.re - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_diagonal_only_gives_minus_hartree_over_n() {
        let s = setup(161, &ZmOptions::default());
        let mut r = determinant(4, &[0, 1], s.basis.basis_id());
        r.gamma2 = Tensor4::zeros(4);
        for (i, k) in [(0, 1), (1, 0)] {
            r.gamma2.set(i, i, k, k, C64::from(1.0));
        }
        let v = vxc_local(&r, &s.kernels, &s.vh, &s.v1).unwrap();
        for (a, h) in v.values().iter().zip(s.vh.values()) {
            assert_eq!(a.re, -h.re / 2.0);
        }
    }

    #[test]
    fn vxc_is_linear_in_off_diagonal_gamma() {
        let s = setup(161, &ZmOptions::default());
        let fci = solve_ground(&s.tensors, 2, 100).unwrap();
        let base = vxc_local(&fci.rdms, &s.kernels, &s.vh, &s.v1).unwrap();
        let mut scaled = fci.rdms.clone();
        let m = 4;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        if !(i == j && k == l) {
                            scaled.gamma2.set(i, j, k, l, scaled.gamma2.get(i, j, k, l) * 3.0);
                        }
                    }
                }
            }
        }
        let mut none = fci.rdms.clone();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        if !(i == j && k == l) {
                            none.gamma2.set(i, j, k, l, C64::from(0.0));
                        }
                    }
                }
            }
        }
        let v3 = vxc_local(&scaled, &s.kernels, &s.vh, &s.v1).unwrap();
        let v0 = vxc_local(&none, &s.kernels, &s.vh, &s.v1).unwrap();
        for ((a, b), c) in base.values().iter().zip(v3.values()).zip(v0.values()) {
            assert!((3.0 * (a - c) - (b - c)).norm() < 1e-10);
        }
    }

    #[test]
    fn vxc_matches_finite_difference_of_energy_functional() {
        let opts = ZmOptions {
            normalization_tol: None,
            ..Default::default()
        };
        let s = setup(97, &opts);
        let rdms = solve_ground(&s.tensors, 2, 100).unwrap().rdms;
        let v = vxc_local(&rdms, &s.kernels, &s.vh, &s.v1).unwrap();
        let g = *s.basis.grid();
        let w = g.weights();
        let wv = s.basis.wavevectors.clone();
        let potential_energy = |rho: &Field| -> f64 {
            let b = ZmOrbitalSet::build(rho, &wv, 2, &opts).unwrap();
            let (t, _) = build_tensors(&b, &s.v1, &s.kmat, &TensorOptions::default()).unwrap();
            let mut e = C64::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    e += rdms.rho1[(i, j)] * t.v_ext[(i, j)];
                }
            }
            for (a, b) in t.v_ee.as_slice().iter().zip(rdms.gamma2.as_slice()) {
                e += 0.5 * a * b;
            }
            e.re
        };
        let rho0 = s.ks.density.real_parts();
        let eps = 1e-5 * rho0.iter().cloned().fold(0.0, f64::max);
        for &p in &[30usize, 41, 48, 55, 66] {
            let shifted = |d: f64| {
                let mut r = rho0.clone();
                r[p] += d;
                potential_energy(&Field::density(g, r).unwrap())
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps * w[p]);
            let an = v.values()[p].re + s.v1.values()[p].re + s.vh.values()[p].re;
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "cell {p}: {fd} vs {an}");
        }
    }

    #[test]
    fn provenance_is_checked() {
        let s = setup(97, &ZmOptions::default());
        let r = determinant(4, &[0, 1], s.basis.basis_id() ^ 1);
        assert!(matches!(
            vxc_local(&r, &s.kernels, &s.vh, &s.v1),
            Err(Error::ProvenanceMismatch { .. })
        ));
    }

    #[test]
    fn xc_energy_definition() {
        let s = setup(161, &ZmOptions::default());
        let t = kinetic_energy(&s.ks).unwrap();
        let (e1, eh) = external_and_hartree_energy(&s.ks.density, &s.v1, &s.vh).unwrap();
        let e = exchange_correlation_energy(t + e1 + eh, &s.ks, &s.v1, &InteractionKernel::soft_coulomb_1d(1.0)).unwrap();
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn identity_rdm_gives_kohn_sham_matrix() {
        let s = setup(121, &ZmOptions::default());
        let seed = Field::from_real_fn(*s.basis.grid(), FieldKind::Potential, |r| -0.3 * (-r[0] * r[0]).exp()).unwrap();
        let ing = KsIngredients {
            v_ext1: s.v1.clone(),
            v_hartree: s.vh.clone(),
        };
        let id = DMatrix::<C64>::identity(4, 4);
        let h = corrected_hamiltonian_matrix(&ing, &s.basis, &id, &seed, DEFAULT_HERMITICITY_ABORT).unwrap();
        let ks = ks_hamiltonian_matrix(&s.v1.add(&s.vh).unwrap().add(&seed).unwrap()).unwrap();
        assert!(crate::linalg::max_abs_diff(&h.matrix, &ks) <= 1e-10);
        assert_eq!(h.deviation, 0.0);
    }

    #[test]
    fn kinetic_term_on_a_basis_orbital() {
        let s = setup(321, &ZmOptions::default());
        let rho1 = solve_ground(&s.tensors, 2, 100).unwrap().rdms.rho1;
        let zero = Field::zeros(*s.basis.grid(), FieldKind::Potential);
        let ing = KsIngredients {
            v_ext1: zero.clone(),
            v_hartree: zero.clone(),
        };
        let gram = s.basis.gram().unwrap();
        let c = kinetic_correction(&rho1);
        let laps: Vec<Field> = s.basis.orbitals.iter().map(|o| laplacian(o).unwrap()).collect();
        for mm in 0..4 {
            let got = apply_corrected_hamiltonian(&s.basis.orbitals[mm], &ing, &s.basis, &rho1, &zero).unwrap();
            // −½∇²φ_m + ½ Σ_j (Σ_m' C_m'j S_m'm) ∇²φ_j; with S = I this is −½ Σ_j ρ_mj ∇²φ_j
            let mut exact: Vec<C64> = laps[mm].values().iter().map(|l| -0.5 * l).collect();
            let mut ideal = vec![C64::new(0.0, 0.0); exact.len()];
            for j in 0..4 {
                let w: C64 = (0..4).map(|k| c[(k, j)] * gram[(k, mm)]).sum();
                for ((e, i), l) in exact.iter_mut().zip(ideal.iter_mut()).zip(laps[j].values()) {
                    *e += 0.5 * w * l;
                    *i += -0.5 * rho1[(mm, j)] * l;
                }
            }
            let scale = exact.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let dist = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(dist(got.values(), &exact) <= 1e-12 * scale);
            let lap_max = laps.iter().map(|l| l.max_abs()).fold(0.0, f64::max);
            let bound = 0.5 * 4.0 * 4.0 * c.iter().map(|x| x.norm()).fold(0.0, f64::max) * s.basis.gram_error().unwrap() * lap_max;
            assert!(dist(&exact, &ideal) <= bound);
        }
    }

    #[test]
    fn matrix_matches_operator_on_basis_span() {
        let s = setup(161, &ZmOptions::default());
        let rho1 = solve_ground(&s.tensors, 2, 100).unwrap().rdms.rho1;
        let ing = KsIngredients {
            v_ext1: s.v1.clone(),
            v_hartree: s.vh.clone(),
        };
        let vloc = Field::from_real_fn(*s.basis.grid(), FieldKind::Potential, |r| 0.1 * r[0].cos()).unwrap();
        let raw = corrected_hamiltonian_raw(&ing, &s.basis, &rho1, &vloc).unwrap();
        let coeffs = [C64::new(0.3, -0.1), C64::new(-0.5, 0.2), C64::new(0.1, 0.7), C64::new(0.25, 0.0)];
        let psi = s.basis.orbitals.iter().zip(coeffs).fold(Field::zeros(*s.basis.grid(), FieldKind::Generic), |acc, (o, c)| {
            acc.combine(C64::from(1.0), o, c).unwrap()
        });
        let op = apply_corrected_hamiltonian(&psi, &ing, &s.basis, &rho1, &vloc).unwrap();
        let interior = s.basis.grid().interior();
        let v: Vec<C64> = interior.iter().map(|&i| psi.values()[i]).collect();
        let hv = &raw * nalgebra::DVector::from_vec(v);
        for (r, &idx) in interior.iter().enumerate() {
            assert!((hv[r] - op.values()[idx]).norm() < 1e-10);
        }
    }

    #[test]
    fn hermitization_deviation_is_reported_and_enforced() {
        let s = setup(161, &ZmOptions::default());
        let rho1 = solve_ground(&s.tensors, 2, 100).unwrap().rdms.rho1;
        let ing = KsIngredients {
            v_ext1: s.v1.clone(),
            v_hartree: s.vh.clone(),
        };
        let zero = Field::zeros(*s.basis.grid(), FieldKind::Potential);
        let h = corrected_hamiltonian_matrix(&ing, &s.basis, &rho1, &zero, f64::INFINITY).unwrap();
        assert_eq!(crate::linalg::hermitian_deviation(&h.matrix), 0.0);
        assert!(h.deviation > 0.0 && h.relative_deviation < DEFAULT_HERMITICITY_ABORT);
        assert!(matches!(
            corrected_hamiltonian_matrix(&ing, &s.basis, &rho1, &zero, h.relative_deviation / 2.0),
            Err(Error::HermitizationDeviation { .. })
        ));
    }

    fn span_matrix(s: &Setup, rho1: &DMatrix<C64>) -> DMatrix<C64> {
        let ing = KsIngredients {
            v_ext1: s.v1.clone(),
            v_hartree: s.vh.clone(),
        };
        let vloc = Field::from_real_fn(*s.basis.grid(), FieldKind::Potential, |r| 0.2 * r[0].sin()).unwrap();
        let images: Vec<Field> = s
            .basis
            .orbitals
            .iter()
            .map(|o| apply_corrected_hamiltonian(o, &ing, &s.basis, rho1, &vloc).unwrap())
            .collect();
        DMatrix::from_fn(4, 4, |a, b| s.basis.orbitals[a].inner(&images[b]).unwrap())
    }

    #[test]
    fn span_hermiticity_defect_is_the_kinetic_commutator() {
        let s = setup(401, &ZmOptions::default());
        let gram = s.basis.gram_error().unwrap();
        let t = &s.tensors.t;
        let tol = 5.0 * gram * t.iter().map(|x| x.norm()).fold(0.0, f64::max);

        // a correlated state: ⟨φ_a|Ĥφ_b⟩ − conj⟨φ_b|Ĥφ_a⟩ = [t, ρᵀ]
        let rho1 = solve_ground(&s.tensors, 2, 100).unwrap().rdms.rho1;
        let a = span_matrix(&s, &rho1);
        let defect = &a - a.adjoint();
        let comm = t * rho1.transpose() - rho1.transpose() * t;
        assert!(crate::linalg::max_abs_diff(&defect, &comm) <= tol);
        assert!(comm.iter().map(|x| x.norm()).fold(0.0, f64::max) > 100.0 * tol);

        // a state whose ρᵀ commutes with t is Hermitian on the span
        let uniform = DMatrix::<C64>::identity(4, 4).scale(0.5);
        let a = span_matrix(&s, &uniform);
        assert!(crate::linalg::hermitian_deviation(&a) <= tol);
    }
}
