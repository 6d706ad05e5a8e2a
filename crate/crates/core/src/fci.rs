//! Exact diagonalization in the fixed-particle-number occupation basis.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrals::{HamiltonianTensors, Tensor4};
use crate::rdm::RdmPair;
use crate::second_quant::{count_configurations, OccupationVector, MAX_MODES};

pub const DEFAULT_BASIS_CAP: u128 = 1_000_000;

/// `a_p|n⟩`, with sign `(−1)^{Σ_{q<p} n_q}`.
#[inline]
pub fn annihilate(bits: u64, p: usize) -> Option<(f64, u64)> {
    if bits >> p & 1 == 0 {
        return None;
    }
    Some((parity(bits, p), bits & !(1 << p)))
}

/// `a_p†|n⟩`, with sign `(−1)^{Σ_{q<p} n_q}`.
#[inline]
pub fn create(bits: u64, p: usize) -> Option<(f64, u64)> {
    if bits >> p & 1 == 1 {
        return None;
    }
    Some((parity(bits, p), bits | 1 << p))
}

#[inline]
fn parity(bits: u64, p: usize) -> f64 {
    if (bits & ((1u64 << p) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `a_i† a_j |n⟩`.
#[inline]
fn hop(bits: u64, i: usize, j: usize) -> Option<(f64, u64)> {
    let (s1, b) = annihilate(bits, j)?;
    let (s2, b) = create(b, i)?;
    Some((s1 * s2, b))
}

/// `a_i† a_k† a_l a_j |n⟩`.
#[inline]
fn pair_hop(bits: u64, i: usize, j: usize, k: usize, l: usize) -> Option<(f64, u64)> {
    let (s1, b) = annihilate(bits, j)?;
    let (s2, b) = annihilate(b, l)?;
    let (s3, b) = create(b, k)?;
    let (s4, b) = create(b, i)?;
    Some((s1 * s2 * s3 * s4, b))
}

/// All `C(m, n)` occupation vectors, lexicographic in the occupied-mode lists
/// (so `(3, 1)` gives `100, 010, 001`).
pub fn enumerate_basis(m: usize, n: usize, cap: u128) -> Result<Vec<OccupationVector>> {
    if m > MAX_MODES {
        return Err(Error::InvalidArgument(format!("{m} modes exceeds {MAX_MODES}")));
    }
    let size = count_configurations(m, n)?;
    let size_u = u128::try_from(&size).unwrap_or(u128::MAX);
    if size_u > cap {
        return Err(Error::CombinatorialCap { size: size_u, cap });
    }
    let mut out = Vec::with_capacity(size_u as usize);
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let bits = idx.iter().fold(0u64, |b, &i| b | 1 << i);
        out.push(OccupationVector::new(bits, m)?);
        // advance to the next combination
        let mut p = n;
        while p > 0 && idx[p - 1] == m - n + p - 1 {
            p -= 1;
        }
        if p == 0 {
            break;
        }
        idx[p - 1] += 1;
        for q in p..n {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

fn index_map(basis: &[OccupationVector]) -> HashMap<u64, usize> {
    basis.iter().enumerate().map(|(i, v)| (v.bits(), i)).collect()
}

/// `⟨β|H|α⟩` by direct operator application on bit strings.
pub fn hamiltonian_matrix(tensors: &HamiltonianTensors, basis: &[OccupationVector]) -> Result<DMatrix<C64>> {
    let m = tensors.m();
    if let Some(v) = basis.iter().find(|v| v.m() != m) {
        return Err(Error::DimensionMismatch(format!("basis vector {v} for {m} modes")));
    }
    let h = tensors.one_body();
    let herm = crate::linalg::hermitian_deviation(&h);
    if herm > 1e-10 * h.iter().map(|x| x.norm()).fold(1.0, f64::max) {
        return Err(Error::NotHermitian {
            what: "one-body tensor",
            deviation: herm,
        });
    }
    let index = index_map(basis);
    let p = basis.len();
    let columns: Vec<Vec<(usize, C64)>> = basis
        .par_iter()
        .map(|alpha| {
            let b = alpha.bits();
            let mut col = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    if let Some((s, b2)) = hop(b, i, j) {
                        col.push((index[&b2], h[(i, j)] * s));
                    }
                }
            }
            for i in 0..m {
                for k in 0..m {
                    if i == k {
                        continue;
                    }
                    for j in 0..m {
                        for l in 0..m {
                            if j == l {
                                continue;
                            }
                            if let Some((s, b2)) = pair_hop(b, i, j, k, l) {
                                col.push((index[&b2], tensors.v_ee.get(i, j, k, l) * (0.5 * s)));
                            }
                        }
                    }
                }
            }
            col
        })
        .collect();
    let mut out = DMatrix::zeros(p, p);
    for (a, col) in columns.into_iter().enumerate() {
        for (b, v) in col {
            out[(b, a)] += v;
        }
    }
    Ok(out)
}

/// RDMs of `Σ_α c_α |n^α⟩` by direct operator application.
pub fn rdms_from_coefficients(m: usize, basis: &[OccupationVector], coeffs: &[C64]) -> Result<RdmPair> {
    if basis.len() != coeffs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} basis states",
            coeffs.len(),
            basis.len()
        )));
    }
    let index = index_map(basis);
    let mut rho = DMatrix::<C64>::zeros(m, m);
    let mut gamma = Tensor4::zeros(m);
    for (alpha, c) in basis.iter().zip(coeffs) {
        if c.norm() == 0.0 {
            continue;
        }
        let b = alpha.bits();
        for i in 0..m {
            for j in 0..m {
                if let Some((s, b2)) = hop(b, i, j) {
                    rho[(i, j)] += coeffs[index[&b2]].conj() * c * s;
                }
                for k in 0..m {
                    for l in 0..m {
                        if let Some((s, b2)) = pair_hop(b, i, j, k, l) {
                            let v = gamma.get(i, j, k, l) + coeffs[index[&b2]].conj() * c * s;
                            gamma.set(i, j, k, l, v);
                        }
                    }
                }
            }
        }
    }
    let mut out = RdmPair::new(rho, gamma, 0)?;
    out.symmetrize();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FciSolution {
    pub basis: Vec<OccupationVector>,
    pub ground_energy: f64,
    pub coefficients: Vec<C64>,
    pub rdms: RdmPair,
    /// Full N-sector spectrum, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Lowest eigenpair of the `n`-particle Hamiltonian and its RDMs.
pub fn solve_ground(tensors: &HamiltonianTensors, n: usize, cap: u128) -> Result<FciSolution> {
    let m = tensors.m();
    let basis = enumerate_basis(m, n, cap)?;
    let h = hamiltonian_matrix(tensors, &basis)?;
    let (vals, vecs) = crate::linalg::eigh(crate::linalg::hermitize(&h))?;
    let coefficients: Vec<C64> = vecs.column(0).iter().copied().collect();
    let mut rdms = rdms_from_coefficients(m, &basis, &coefficients)?;
    rdms.basis_id = tensors.basis_id;
    Ok(FciSolution {
        basis,
        ground_energy: vals[0],
        coefficients,
        rdms,
        eigenvalues: vals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdm::energy_from_rdms;
    use crate::second_quant::build_qubit_hamiltonian;
    use rand::SeedableRng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn basis_enumeration() {
        let b: Vec<String> = enumerate_basis(3, 1, 10).unwrap().iter().map(|v| v.to_string()).collect();
        assert_eq!(b, ["100", "010", "001"]);
        assert_eq!(enumerate_basis(4, 2, 10).unwrap().len(), 6);
        let z = enumerate_basis(2, 0, 10).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].to_string(), "00");
        assert!(matches!(enumerate_basis(20, 10, 1000), Err(Error::CombinatorialCap { .. })));
        let b = enumerate_basis(6, 3, 100).unwrap();
        assert!(b.windows(2).all(|w| w[0].to_string() > w[1].to_string()));
    }

    #[test]
    fn hopping_sign() {
        let mut t = HamiltonianTensors::zeros(2);
        t.t[(0, 1)] = c(0.3);
        t.t[(1, 0)] = c(0.3);
        let basis = enumerate_basis(2, 1, 10).unwrap();
        let h = hamiltonian_matrix(&t, &basis).unwrap();
        assert_eq!(h[(0, 1)], c(0.3));
        assert_eq!(h[(1, 0)], c(0.3));
    }

    #[test]
    fn small_closed_forms() {
        let mut t = HamiltonianTensors::zeros(2);
        t.t[(0, 0)] = c(-1.0);
        t.t[(1, 1)] = c(1.0);
        assert!((solve_ground(&t, 1, 10).unwrap().ground_energy + 1.0).abs() < 1e-14);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = HamiltonianTensors::random(2, &mut rng);
        let v = &t.v_ee;
        let h = t.one_body();
        let exact = (h[(0, 0)] + h[(1, 1)] + 0.5 * (v.get(0, 0, 1, 1) + v.get(1, 1, 0, 0) - v.get(0, 1, 1, 0) - v.get(1, 0, 0, 1))).re;
        let sol = solve_ground(&t, 2, 10).unwrap();
        assert!((sol.ground_energy - exact).abs() < 1e-12);
        assert!((energy_from_rdms(&sol.rdms, &t).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn diagonal_hamiltonian() {
        let mut t = HamiltonianTensors::zeros(4);
        for i in 0..4 {
            t.t[(i, i)] = c(i as f64 * 0.7 - 1.0);
        }
        let basis = enumerate_basis(4, 2, 100).unwrap();
        let h = hamiltonian_matrix(&t, &basis).unwrap();
        for (a, v) in basis.iter().enumerate() {
            let e: f64 = (0..4).filter(|&i| v.occupied(i)).map(|i| i as f64 * 0.7 - 1.0).sum();
            for b in 0..basis.len() {
                assert_eq!(h[(b, a)], if a == b { c(e) } else { c(0.0) });
            }
        }
    }

    /// N-sector block of the Jordan–Wigner dense matrix.
    fn jw_sector(t: &HamiltonianTensors, basis: &[OccupationVector]) -> DMatrix<C64> {
        let d = build_qubit_hamiltonian(t).unwrap().to_dense().unwrap();
        DMatrix::from_fn(basis.len(), basis.len(), |b, a| {
            d[(basis[b].bits() as usize, basis[a].bits() as usize)]
        })
    }

    #[test]
    fn matches_jordan_wigner_matrix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for m in 2..=4 {
            let t = HamiltonianTensors::random(m, &mut rng);
            for n in 0..=m {
                let basis = enumerate_basis(m, n, 100).unwrap();
                let h = hamiltonian_matrix(&t, &basis).unwrap();
                assert!(crate::linalg::hermitian_deviation(&h) < 1e-12);
                assert!(crate::linalg::max_abs_diff(&h, &jw_sector(&t, &basis)) < 1e-10);
            }
        }
    }

    #[test]
    fn spectra_match_jordan_wigner_up_to_six_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for (m, n) in [(5, 2), (6, 3)] {
            let t = HamiltonianTensors::random(m, &mut rng);
            let sol = solve_ground(&t, n, 1000).unwrap();
            let (jw, _) = crate::linalg::eigh(crate::linalg::hermitize(&jw_sector(&t, &sol.basis))).unwrap();
            for (a, b) in sol.eigenvalues.iter().zip(&jw) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ground_state_rdms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = HamiltonianTensors::random(5, &mut rng);
        let sol = solve_ground(&t, 3, 1000).unwrap();
        let norm: f64 = sol.coefficients.iter().map(|c| c.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        sol.rdms.check(3, 1e-10).unwrap();
        assert!((energy_from_rdms(&sol.rdms, &t).unwrap() - sol.ground_energy).abs() < 1e-10);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn ground_state_invariants(seed in 0u64..10_000, m in 2usize..5, n_frac in 0.0f64..1.0) {
            let n = 1 + ((m - 1) as f64 * n_frac) as usize;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = HamiltonianTensors::random(m, &mut rng);
            let sol = solve_ground(&t, n, DEFAULT_BASIS_CAP).unwrap();
            let h = hamiltonian_matrix(&t, &sol.basis).unwrap();
            for i in 0..h.nrows() {
                proptest::prop_assert!(sol.ground_energy <= h[(i, i)].re + 1e-10);
            }
            proptest::prop_assert!((sol.rdms.trace().re - n as f64).abs() < 1e-10);
            proptest::prop_assert!((sol.rdms.pair_trace().re - (n * (n - 1)) as f64).abs() < 1e-10);
            let e = energy_from_rdms(&sol.rdms, &t).unwrap();
            proptest::prop_assert!((e - sol.ground_energy).abs() < 1e-10);
        }
    }
}
