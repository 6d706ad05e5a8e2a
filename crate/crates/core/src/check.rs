//! Invariant suite behind `hyxc check`: basis orthonormality, finite-difference
//! checks of the functional derivatives, fermionic algebra, RDM identities and
//! the determinant limit of the correction.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::driver::Setup;
use crate::error::Result;
use crate::fci::{enumerate_basis, hamiltonian_matrix, solve_ground};
use crate::grid::{Field, FieldKind, KernelMatrix};
use crate::integrals::{build_tensors, HamiltonianTensors, TensorOptions};
use crate::ks::{ks_hamiltonian_matrix, XcTerm};
use crate::linalg::max_abs_diff;
use crate::rdm::energy_from_rdms;
use crate::second_quant::{build_qubit_hamiltonian, jordan_wigner, QubitOperator};
use crate::xc::{corrected_hamiltonian_matrix, delta_rho, KsIngredients};
use crate::zm::{build_phase_with, phase_functional_derivative, AxisOrder, ZmOptions, ZmOrbitalSet};

/// Gram error accepted by the suite for configured grids.
pub const GRAM_TOL: f64 = 1e-3;
/// Relative error accepted for finite-difference derivative checks.
pub const FD_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        CheckResult {
            name,
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn rel(fd: C64, an: C64) -> f64 {
    (fd - an).norm() / fd.norm().max(an.norm()).max(1e-12)
}

/// `count` distinct interior cells where the density exceeds 1% of its peak,
/// drawn from a seeded stream.
pub fn sample_cells(rho: &Field, count: usize, seed: u64) -> Vec<usize> {
    let peak = rho.max_abs();
    let grid = rho.grid();
    let mut cells: Vec<usize> = grid
        .interior()
        .into_iter()
        .filter(|&p| rho.values()[p].re > 0.01 * peak)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    cells.truncate(count);
    cells.sort_unstable();
    cells
}

fn fd_step(rho: &Field) -> f64 {
    f64::EPSILON.cbrt() * rho.max_abs()
}

fn perturbed(rho: &Field, cell: usize, delta: f64) -> Result<Field> {
    let mut r = rho.real_parts();
    r[cell] += delta;
    Field::density(*rho.grid(), r)
}

/// Largest relative error of the phase functional derivative against central
/// differences of the phase, over `cells` (perturbed) × `at` (evaluated).
pub fn fd_phase_error(rho: &Field, n: usize, k: [i32; 3], axes: AxisOrder, cells: &[usize], at: &[usize]) -> Result<f64> {
    let phase = build_phase_with(rho, n, axes)?;
    let w = rho.grid().weights();
    let eps = fd_step(rho);
    let mut worst: f64 = 0.0;
    for &s in cells {
        let fp = build_phase_with(&perturbed(rho, s, eps)?, n, axes)?;
        let fm = build_phase_with(&perturbed(rho, s, -eps)?, n, axes)?;
        for &p in at {
            let fd = (fp.phase_at(k, p) - fm.phase_at(k, p)) / (2.0 * eps);
            let an = phase_functional_derivative(&phase, k, rho.grid().point(p))?.cell_value(s) * w[s];
            worst = worst.max(rel(C64::from(fd), C64::from(an)));
        }
    }
    Ok(worst)
}

/// Largest relative errors `(external, electron–electron)` of the derivative
/// kernels against central differences of the matrix elements.
pub fn fd_kernel_errors(
    basis: &ZmOrbitalSet,
    v_ext1: &Field,
    kmat: &KernelMatrix,
    opts: &ZmOptions,
    cells: &[usize],
) -> Result<(f64, f64)> {
    let rho = &basis.source_density;
    let m = basis.m();
    let (_, kernels) = build_tensors(basis, v_ext1, kmat, &TensorOptions::default())?;
    let w = rho.grid().weights();
    let eps = fd_step(rho);
    let no_norm = ZmOptions {
        normalization_tol: None,
        ..*opts
    };
    let tensors_at = |s: usize, d: f64| -> Result<HamiltonianTensors> {
        let b = ZmOrbitalSet::build(&perturbed(rho, s, d)?, &basis.wavevectors, basis.n_electrons, &no_norm)?;
        Ok(build_tensors(&b, v_ext1, kmat, &TensorOptions::default())?.0)
    };
    let (mut e_ext, mut e_ee): (f64, f64) = (0.0, 0.0);
    let quads = [(0, 1, 1, 0), (0, 1, 2, 3), (1, 0, 0, 1), (0, 0, 1, 1), (2, 1, 0, 3)];
    for &s in cells {
        let (tp, tm) = (tensors_at(s, eps)?, tensors_at(s, -eps)?);
        for i in 0..m {
            for j in 0..m {
                let fd = (tp.v_ext[(i, j)] - tm.v_ext[(i, j)]) / (2.0 * eps);
                let an = kernels.dvext_kernel(i, j)?.values()[s] * w[s];
                e_ext = e_ext.max(rel(fd, an));
            }
        }
        for &(i, j, k, l) in quads.iter().filter(|q| q.0.max(q.1).max(q.2).max(q.3) < m) {
            let fd = (tp.v_ee.get(i, j, k, l) - tm.v_ee.get(i, j, k, l)) / (2.0 * eps);
            let an = kernels.dvee_kernel(i, j, k, l)?.values()[s] * w[s];
            e_ee = e_ee.max(rel(fd, an));
        }
    }
    Ok((e_ext, e_ee))
}

/// Largest deviation of `dvee_kernel(i,i,k,k)` from `(2/N²) v_H`, relative to
/// the largest `|v_H|`.
pub fn diagonal_kernel_error(basis: &ZmOrbitalSet, v_ext1: &Field, kmat: &KernelMatrix) -> Result<f64> {
    let (_, kernels) = build_tensors(basis, v_ext1, kmat, &TensorOptions::default())?;
    let vh = crate::ks::hartree_with(kmat, &basis.source_density)?;
    let n = basis.n_electrons as f64;
    let scale = vh.max_abs();
    let mut worst: f64 = 0.0;
    for i in 0..basis.m() {
        for k in 0..basis.m() {
            let d = kernels.dvee_kernel(i, i, k, k)?;
            for (a, h) in d.values().iter().zip(vh.values()) {
                worst = worst.max((a - 2.0 / (n * n) * h).norm() / scale);
            }
        }
    }
    Ok(worst)
}

fn max_coeff(op: &QubitOperator) -> f64 {
    op.terms().map(|t| t.coeff.norm()).fold(0.0, f64::max)
}

/// Largest coefficient of `{a_p, a_q}` and `{a_p, a_q†} − δ_pq` over all mode
/// pairs, before small terms are dropped.
pub fn car_error(m: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let one = C64::new(1.0, 0.0);
    for p in 0..m {
        for q in 0..m {
            let (ap, aq) = (jordan_wigner(p, false, m)?, jordan_wigner(q, false, m)?);
            let aqd = aq.adjoint();
            let anti = |x: &QubitOperator, y: &QubitOperator| -> Result<QubitOperator> {
                let mut s = x.mul(y)?;
                s.add_scaled(&y.mul(x)?, one)?;
                Ok(s)
            };
            worst = worst.max(max_coeff(&anti(&ap, &aq)?));
            let mut mixed = anti(&ap, &aqd)?;
            if p == q {
                mixed.add_scaled(&QubitOperator::identity(m), -one)?;
            }
            worst = worst.max(max_coeff(&mixed));
        }
    }
    Ok(worst)
}

/// Largest entry difference between the N-sector block of the dense
/// Jordan–Wigner Hamiltonian and the occupation-basis matrix.
pub fn jw_fci_error(tensors: &HamiltonianTensors, n: usize) -> Result<f64> {
    let basis = enumerate_basis(tensors.m(), n, crate::fci::DEFAULT_BASIS_CAP as u128)?;
    let dense = build_qubit_hamiltonian(tensors)?.to_dense()?;
    let sector = DMatrix::from_fn(basis.len(), basis.len(), |b, a| {
        dense[(basis[b].bits() as usize, basis[a].bits() as usize)]
    });
    Ok(max_abs_diff(&sector, &hamiltonian_matrix(tensors, &basis)?))
}

/// Run the suite on the system described by `setup`.
pub fn run_checks(setup: &Setup) -> Result<Vec<CheckResult>> {
    let c = &setup.config;
    let n = c.system.electrons;
    let mut out = Vec::new();

    let scf = setup.dft(&XcTerm::Model(c.outer.seed_xc), None)?;
    out.push(CheckResult {
        name: "ks.scf_residual",
        value: scf.residual(),
        tolerance: c.outer.scf.tol,
        passed: scf.converged,
    });
    let rho = &scf.state.density;
    let basis = setup.basis(rho)?;
    out.push(CheckResult::at_most("zm.gram_error", basis.gram_error()?, GRAM_TOL));
    out.push(CheckResult::at_most("zm.constraint_error", basis.constraint_error(), 1e-12));

    let cells = sample_cells(rho, 5, 0);
    let opts = c.zm_options()?;
    let k_probe = basis.wavevectors.iter().copied().find(|k| *k != [0, 0, 0]).unwrap_or([1, 0, 0]);
    let at: Vec<usize> = sample_cells(rho, 5, 1);
    out.push(CheckResult::at_most(
        "zm.phase_derivative_fd",
        fd_phase_error(rho, n, k_probe, opts.axes, &cells, &at)?,
        FD_TOL,
    ));
    let (e_ext, e_ee) = fd_kernel_errors(&basis, &setup.v_ext, &setup.kmat, &opts, &cells)?;
    out.push(CheckResult::at_most("integrals.dvext_fd", e_ext, FD_TOL));
    out.push(CheckResult::at_most("integrals.dvee_fd", e_ee, FD_TOL));
    out.push(CheckResult::at_most(
        "integrals.dvee_diagonal",
        diagonal_kernel_error(&basis, &setup.v_ext, &setup.kmat)?,
        1e-6,
    ));

    let (tensors, _) = setup.tensors(&basis)?;
    out.push(CheckResult::at_most("integrals.symmetry", tensors.symmetry_error(), 1e-10));
    out.push(CheckResult::at_most("second_quant.car", car_error(basis.m().min(6))?, 1e-14));
    if basis.m() <= 8 {
        out.push(CheckResult::at_most("second_quant.jw_vs_fci", jw_fci_error(&tensors, n)?, 1e-10));
    }

    let fci = solve_ground(&tensors, n, c.outer.fci_cap as u128)?;
    let d = fci.rdms.diagnostics(n);
    out.push(CheckResult::at_most("rdm.trace", d.trace_error.abs(), 1e-10));
    out.push(CheckResult::at_most("rdm.pair_trace", d.pair_trace_error.abs(), 1e-10));
    out.push(CheckResult::at_most(
        "rdm.energy_trace",
        (energy_from_rdms(&fci.rdms, &tensors)? - fci.ground_energy).abs(),
        1e-10,
    ));

    let mut diag = DMatrix::<C64>::zeros(basis.m(), basis.m());
    for i in 0..n {
        diag[(i, i)] = C64::from(1.0);
    }
    out.push(CheckResult::at_most("xc.determinant_delta_rho", delta_rho(&diag, &basis)?.max_abs(), 1e-14));
    let ingredients = KsIngredients {
        v_ext1: setup.v_ext.clone(),
        v_hartree: scf.v_hartree.clone(),
    };
    let identity = DMatrix::<C64>::identity(basis.m(), basis.m());
    let corrected = corrected_hamiltonian_matrix(&ingredients, &basis, &identity, &scf.v_xc, f64::INFINITY)?;
    let v_eff = setup.v_ext.add(&scf.v_hartree)?.add(&scf.v_xc)?.with_kind(FieldKind::Potential)?;
    out.push(CheckResult::at_most(
        "xc.identity_reduction",
        max_abs_diff(&corrected.matrix, &ks_hamiltonian_matrix(&v_eff)?),
        1e-10,
    ));
    Ok(out)
}
