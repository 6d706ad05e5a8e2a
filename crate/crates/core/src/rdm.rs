//! One- and two-body reduced density matrices and the energy trace formula.
//!
//! `ρ_ij = ⟨a_i†a_j⟩` and `Γ_ijkl = ⟨a_i†a_k†a_l a_j⟩`.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrals::{HamiltonianTensors, Tensor4};
use crate::second_quant::RdmEntry;

#[derive(Debug, Clone, PartialEq)]
pub struct RdmPair {
    pub rho1: DMatrix<C64>,
    pub gamma2: Tensor4,
    /// Fingerprint of the basis the RDMs were measured in; 0 if unknown.
    pub basis_id: u64,
}

/// Worst violations of the RDM invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdmDiagnostics {
    pub hermiticity: f64,
    pub antisymmetry: f64,
    /// `Tr ρ − N`.
    pub trace_error: f64,
    /// `Σ_ik Γ_iikk − N(N−1)`.
    pub pair_trace_error: f64,
}

impl RdmDiagnostics {
    pub fn max(&self) -> f64 {
        self.hermiticity
            .max(self.antisymmetry)
            .max(self.trace_error.abs())
            .max(self.pair_trace_error.abs())
    }
}

impl RdmPair {
    pub fn new(rho1: DMatrix<C64>, gamma2: Tensor4, basis_id: u64) -> Result<Self> {
        if rho1.nrows() != rho1.ncols() || rho1.nrows() != gamma2.m() {
            return Err(Error::DimensionMismatch(format!(
                "rho1 {:?} with gamma2 of size {}",
                rho1.shape(),
                gamma2.m()
            )));
        }
        Ok(RdmPair {
            rho1,
            gamma2,
            basis_id,
        })
    }

    pub fn m(&self) -> usize {
        self.rho1.nrows()
    }

    /// Rebuild the full RDMs from measured independent entries.
    pub fn from_entries(m: usize, entries: &[(RdmEntry, f64)]) -> Result<Self> {
        let mut rho = DMatrix::<C64>::zeros(m, m);
        let mut gamma = Tensor4::zeros(m);
        for &(entry, value) in entries {
            match entry {
                RdmEntry::RhoRe(i, j) => {
                    rho[(i, j)].re = value;
                    rho[(j, i)].re = value;
                }
                RdmEntry::RhoIm(i, j) => {
                    rho[(i, j)].im = value;
                    rho[(j, i)].im = -value;
                }
                RdmEntry::GammaRe(i, j, k, l) | RdmEntry::GammaIm(i, j, k, l) => {
                    let is_re = matches!(entry, RdmEntry::GammaRe(..));
                    // (i,k) creates, (j,l) annihilates; the Hermitian partner swaps them
                    for (a, b, c, d, conj) in [(i, j, k, l, false), (j, i, l, k, true)] {
                        let v = if is_re { value } else if conj { -value } else { value };
                        for (p, q, r, s, sign) in [
                            (a, b, c, d, 1.0),
                            (c, b, a, d, -1.0),
                            (a, d, c, b, -1.0),
                            (c, d, a, b, 1.0),
                        ] {
                            let mut x = gamma.get(p, q, r, s);
                            if is_re {
                                x.re = sign * v;
                            } else {
                                x.im = sign * v;
                            }
                            gamma.set(p, q, r, s, x);
                        }
                    }
                }
            }
        }
        let mut out = RdmPair::new(rho, gamma, 0)?;
        out.symmetrize();
        Ok(out)
    }

    /// Project onto exact Hermiticity and fermionic antisymmetry.
    pub fn symmetrize(&mut self) {
        let m = self.m();
        self.rho1 = crate::linalg::hermitize(&self.rho1);
        let g = &self.gamma2;
        let mut a = Tensor4::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let v = g.get(i, j, k, l) - g.get(k, j, i, l) - g.get(i, l, k, j) + g.get(k, l, i, j);
                        a.set(i, j, k, l, v * 0.25);
                    }
                }
            }
        }
        let mut h = Tensor4::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        h.set(i, j, k, l, 0.5 * (a.get(i, j, k, l) + a.get(j, i, l, k).conj()));
                    }
                }
            }
        }
        self.gamma2 = h;
    }

    pub fn trace(&self) -> C64 {
        self.rho1.trace()
    }

    /// `Σ_ik Γ_iikk`.
    pub fn pair_trace(&self) -> C64 {
        let m = self.m();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..m {
            for k in 0..m {
                s += self.gamma2.get(i, i, k, k);
            }
        }
        s
    }

    pub fn diagnostics(&self, n_electrons: usize) -> RdmDiagnostics {
        let m = self.m();
        let n = n_electrons as f64;
        let g = &self.gamma2;
        let mut anti: f64 = 0.0;
        let mut herm = crate::linalg::hermitian_deviation(&self.rho1);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let v = g.get(i, j, k, l);
                        anti = anti.max((v + g.get(k, j, i, l)).norm()).max((v + g.get(i, l, k, j)).norm());
                        herm = herm.max((v - g.get(j, i, l, k).conj()).norm());
                    }
                }
            }
        }
        let tr = self.trace();
        let pt = self.pair_trace();
        RdmDiagnostics {
            hermiticity: herm.max(tr.im.abs()).max(pt.im.abs()),
            antisymmetry: anti,
            trace_error: tr.re - n,
            pair_trace_error: pt.re - n * (n - 1.0),
        }
    }

    /// Fail unless every invariant holds to `tol`.
    pub fn check(&self, n_electrons: usize, tol: f64) -> Result<RdmDiagnostics> {
        let d = self.diagnostics(n_electrons);
        if d.trace_error.abs() > tol {
            return Err(Error::TraceMismatch {
                trace: self.trace().re,
                n: n_electrons as f64,
            });
        }
        if d.max() > tol {
            return Err(Error::InvalidArgument(format!("RDM invariants violated: {d:?}")));
        }
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        let pack = |v: &mut dyn Iterator<Item = C64>| v.map(|c| [c.re, c.im]).collect::<Vec<_>>();
        let file = RdmFile {
            m: self.m(),
            basis_id: self.basis_id,
            rho1: pack(&mut crate::integrals::matrix_to_row_major(&self.rho1).into_iter()),
            gamma2: pack(&mut self.gamma2.as_slice().iter().copied()),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: RdmFile = serde_json::from_str(text)?;
        let unpack = |v: Vec<[f64; 2]>| v.into_iter().map(|[a, b]| C64::new(a, b)).collect::<Vec<_>>();
        let rho = crate::integrals::matrix_from_row_major(f.m, &unpack(f.rho1))?;
        RdmPair::new(rho, Tensor4::from_vec(f.m, unpack(f.gamma2))?, f.basis_id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, producer: &'static str) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingDump {
                path: path.to_path_buf(),
                producer,
            });
        }
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Serialize, Deserialize)]
struct RdmFile {
    m: usize,
    basis_id: u64,
    rho1: Vec<[f64; 2]>,
    gamma2: Vec<[f64; 2]>,
}

/// `Σ(t + v_ext)_ij ρ_ij + ½ Σ v_ijkl Γ_ijkl`, complex before taking the real part.
pub fn energy_from_rdms_complex(rdms: &RdmPair, tensors: &HamiltonianTensors) -> Result<C64> {
    let m = tensors.m();
    if rdms.m() != m {
        return Err(Error::DimensionMismatch(format!("RDMs for {} modes, tensors for {m}", rdms.m())));
    }
    let h = tensors.one_body();
    let mut e = C64::new(0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            e += h[(i, j)] * rdms.rho1[(i, j)];
        }
    }
    let two: C64 = tensors
        .v_ee
        .as_slice()
        .iter()
        .zip(rdms.gamma2.as_slice())
        .map(|(v, g)| v * g)
        .sum();
    Ok(e + 0.5 * two)
}

/// Energy trace formula; the imaginary part is discarded after a check.
pub fn energy_from_rdms(rdms: &RdmPair, tensors: &HamiltonianTensors) -> Result<f64> {
    let e = energy_from_rdms_complex(rdms, tensors)?;
    if e.im.abs() > 1e-10 * e.re.abs().max(1.0) {
        log::warn!("energy trace has imaginary part {:e}", e.im);
    }
    Ok(e.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn determinant_1100() -> RdmPair {
        // Wick: Γ_ijkl = ρ_ij ρ_kl − ρ_il ρ_kj for a determinant
        let m = 4;
        let mut rho = DMatrix::<C64>::zeros(m, m);
        rho[(0, 0)] = C64::from(1.0);
        rho[(1, 1)] = C64::from(1.0);
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
        RdmPair::new(rho, g, 0).unwrap()
    }

    #[test]
    fn determinant_invariants() {
        let r = determinant_1100();
        assert_eq!(r.gamma2.get(0, 0, 1, 1), C64::from(1.0));
        assert_eq!(r.gamma2.get(0, 1, 1, 0), C64::from(-1.0));
        let d = r.check(2, 1e-14).unwrap();
        assert_eq!(d.max(), 0.0);
        let mut s = r.clone();
        s.symmetrize();
        assert_eq!(s, r);
    }

    #[test]
    fn energy_of_diagonal_occupation() {
        let r = determinant_1100();
        let mut t = HamiltonianTensors::zeros(4);
        for i in 0..4 {
            t.t[(i, i)] = C64::from(i as f64 + 0.5);
        }
        assert!((energy_from_rdms(&r, &t).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(energy_from_rdms(&r, &HamiltonianTensors::zeros(4)).unwrap(), 0.0);
        assert!(energy_from_rdms(&r, &HamiltonianTensors::zeros(3)).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let r = determinant_1100();
        assert_eq!(RdmPair::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
