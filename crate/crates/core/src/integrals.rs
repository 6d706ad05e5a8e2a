//! Second-quantized Hamiltonian tensors in a density-constrained basis and the
//! density functional derivatives of those matrix elements.
//!
//! All matrix elements are written in the density/phase form
//! `ρ(r) e^{iξ_ji(r)}`, so they depend on the orbital indices only through the
//! wavevector differences `k_ji = k_j − k_i`. The electron-electron tensor uses
//! one kernel contraction `g_Δ(r) = ∫ w(r, r′) ρ(r′) e^{iΔ·f(r′)} dr′` per
//! distinct difference `Δ`.
//!
//! Derivative kernels follow the discrete convention of [`crate::zm`]: the
//! value at grid point `s` is the derivative of the discretized matrix element
//! with respect to `ρ_s`, divided by the quadrature weight `w_s`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, FieldKind, InteractionKernel, KernelMatrix};
use crate::zm::{ZmOrbitalSet, ZmPhaseField};

/// Default budget for `M⁴·G` in electron-electron work.
pub const DEFAULT_EE_BUDGET: u128 = 1 << 34;

const I: C64 = C64::new(0.0, 1.0);

/// Dense rank-4 complex tensor, row-major in `(i, j, k, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    m: usize,
    data: Vec<C64>,
}

impl Tensor4 {
    pub fn zeros(m: usize) -> Self {
        Tensor4 {
            m,
            data: vec![C64::new(0.0, 0.0); m.pow(4)],
        }
    }

    pub fn from_vec(m: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != m.pow(4) {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a rank-4 tensor of size {m}",
                data.len()
            )));
        }
        Ok(Tensor4 { m, data })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.m + j) * self.m + k) * self.m + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        self.data[self.offset(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: C64) {
        let o = self.offset(i, j, k, l);
        self.data[o] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// One- and two-body Hamiltonian tensors in hartree.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianTensors {
    pub t: DMatrix<C64>,
    pub v_ext: DMatrix<C64>,
    pub v_ee: Tensor4,
    /// Fingerprint of the basis the tensors were built from; 0 if synthetic.
    pub basis_id: u64,
}

impl HamiltonianTensors {
    pub fn new(t: DMatrix<C64>, v_ext: DMatrix<C64>, v_ee: Tensor4, basis_id: u64) -> Result<Self> {
        let m = t.nrows();
        if t.ncols() != m || v_ext.shape() != (m, m) || v_ee.m() != m {
            return Err(Error::DimensionMismatch(format!(
                "tensor shapes disagree: t {:?}, v_ext {:?}, v_ee {}",
                t.shape(),
                v_ext.shape(),
                v_ee.m()
            )));
        }
        Ok(HamiltonianTensors {
            t,
            v_ext,
            v_ee,
            basis_id,
        })
    }

    pub fn zeros(m: usize) -> Self {
        HamiltonianTensors {
            t: DMatrix::zeros(m, m),
            v_ext: DMatrix::zeros(m, m),
            v_ee: Tensor4::zeros(m),
            basis_id: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.t.nrows()
    }

    /// `t + v_ext`.
    pub fn one_body(&self) -> DMatrix<C64> {
        &self.t + &self.v_ext
    }

    /// Largest violation of Hermiticity and of the two-body index symmetries.
    pub fn symmetry_error(&self) -> f64 {
        let m = self.m();
        let mut e = crate::linalg::hermitian_deviation(&self.t)
            .max(crate::linalg::hermitian_deviation(&self.v_ext));
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let v = self.v_ee.get(i, j, k, l);
                        e = e.max((v - self.v_ee.get(k, l, i, j)).norm());
                        e = e.max((v - self.v_ee.get(j, i, l, k).conj()).norm());
                    }
                }
            }
        }
        e
    }

    /// Fail unless the tensors describe a Hermitian Hamiltonian to `tol`.
    pub fn check_hermitian(&self, tol: f64) -> Result<()> {
        let m = self.m();
        let one = crate::linalg::hermitian_deviation(&self.one_body());
        if one > tol {
            return Err(Error::NotHermitian {
                what: "one-body tensor",
                deviation: one,
            });
        }
        let mut dev: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        dev = dev.max((self.v_ee.get(i, j, k, l) - self.v_ee.get(j, i, l, k).conj()).norm());
                    }
                }
            }
        }
        if dev > tol {
            return Err(Error::NotHermitian {
                what: "two-body tensor",
                deviation: dev,
            });
        }
        Ok(())
    }

    /// Random tensors with every symmetry of a physical Hamiltonian.
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let mut c = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut herm = || {
            let a = DMatrix::from_fn(m, m, |_, _| c());
            (&a + a.adjoint()).scale(0.5)
        };
        let t = herm();
        let v_ext = herm();
        let mut c = || C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let x: Vec<C64> = (0..m.pow(4)).map(|_| c()).collect();
        let idx = |i: usize, j: usize, k: usize, l: usize| ((i * m + j) * m + k) * m + l;
        let mut v = Tensor4::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let s = x[idx(i, j, k, l)]
                            + x[idx(k, l, i, j)]
                            + x[idx(j, i, l, k)].conj()
                            + x[idx(l, k, j, i)].conj();
                        v.set(i, j, k, l, s * 0.25);
                    }
                }
            }
        }
        HamiltonianTensors {
            t,
            v_ext,
            v_ee: v,
            basis_id: 0,
        }
    }
}

/// Symmetric-gradient kinetic matrix `t_kj = ½ Σ_edges c_e conj(∂φ_k) ∂φ_j`.
///
/// Forward differences on every grid edge, weighted by the edge length and the
/// transverse trapezoid weights. For orbitals vanishing on the box faces this
/// equals `⟨φ_k|−½∇²|φ_j⟩` with the finite-difference Laplacian exactly; unlike
/// the Laplacian form it stays accurate for orbitals that do not vanish there.
pub fn kinetic_matrix(basis: &ZmOrbitalSet) -> DMatrix<C64> {
    let grid = basis.grid();
    let m = basis.m();
    let n = grid.points_per_axis();
    let axis_w: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.axis_weights(a)).collect();
    // gradient samples for every orbital: (edge weight, difference quotient)
    let mut weights = Vec::new();
    let mut grads: Vec<Vec<C64>> = vec![Vec::new(); m];
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        for idx in 0..grid.len() {
            let c = grid.unravel(idx);
            if c[axis] + 1 == n {
                continue;
            }
            let mut nb = c;
            nb[axis] += 1;
            let jdx = grid.index(nb);
            let transverse: f64 = (0..grid.dim())
                .filter(|&b| b != axis)
                .map(|b| axis_w[b][c[b]])
                .product();
            weights.push(h * transverse);
            for (o, g) in basis.orbitals.iter().zip(grads.iter_mut()) {
                g.push((o.values()[jdx] - o.values()[idx]) / h);
            }
        }
    }
    let mut t = DMatrix::zeros(m, m);
    for k in 0..m {
        for j in k..m {
            let s: C64 = weights
                .iter()
                .zip(&grads[k])
                .zip(&grads[j])
                .map(|((w, a), b)| a.conj() * b * *w)
                .sum();
            t[(k, j)] = 0.5 * s;
            t[(j, k)] = 0.5 * s.conj();
        }
        t[(k, k)].im = 0.0;
    }
    t
}

fn density_phase_weights(basis: &ZmOrbitalSet, delta: [i32; 3]) -> Vec<C64> {
    let w = basis.grid().weights();
    basis
        .source_density
        .values()
        .iter()
        .zip(&w)
        .enumerate()
        .map(|(p, (r, w))| C64::from_polar(w * r.re, basis.phase.phase_at(delta, p)))
        .collect()
}

/// `v_ij = (1/N) ∫ ρ e^{iξ_ji} v_ext`, density/phase form.
pub fn external_matrix(basis: &ZmOrbitalSet, v_ext1: &Field) -> Result<DMatrix<C64>> {
    basis.grid().ensure_same(v_ext1.grid())?;
    let m = basis.m();
    let n = basis.n_electrons as f64;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let a = density_phase_weights(basis, basis.k_diff(j, i));
            let s: C64 = a.iter().zip(v_ext1.values()).map(|(a, v)| a * v.re).sum::<C64>() / n;
            out[(i, j)] = s;
            out[(j, i)] = s.conj();
        }
        out[(i, i)].im = 0.0;
    }
    Ok(out)
}

/// `v_ij = ⟨φ_i|v_ext|φ_j⟩`, orbital-product form.
pub fn external_matrix_orbital(basis: &ZmOrbitalSet, v_ext1: &Field) -> Result<DMatrix<C64>> {
    let m = basis.m();
    let vphi: Vec<Field> = basis
        .orbitals
        .iter()
        .map(|o| {
            Field::new(
                *o.grid(),
                FieldKind::Generic,
                o.values().iter().zip(v_ext1.values()).map(|(a, v)| a * v.re).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = basis.orbitals[i].inner(&vphi[j])?;
        }
    }
    Ok(out)
}

/// Distinct wavevector differences `k_j − k_i` over all pairs, sorted.
fn distinct_deltas(basis: &ZmOrbitalSet) -> Vec<[i32; 3]> {
    let m = basis.m();
    let mut set = std::collections::BTreeSet::new();
    for i in 0..m {
        for j in 0..m {
            set.insert(basis.k_diff(j, i));
        }
    }
    set.into_iter().collect()
}

fn ee_guard(m: usize, g: usize, budget: u128) -> Result<()> {
    let required = (m as u128).pow(4) * g as u128;
    if required > budget {
        return Err(Error::ResourceGuard {
            what: "electron-electron tensor (M^4 * grid points)",
            required,
            budget,
        });
    }
    Ok(())
}

/// Kernel contractions `g_Δ` shared by the electron-electron tensor and its
/// derivative kernels.
#[derive(Debug, Clone)]
struct EeContractions {
    /// `w_p ρ_p e^{iΔ·f_p}` per distinct Δ.
    weighted: BTreeMap<[i32; 3], Vec<C64>>,
    /// `g_Δ(r) = Σ_q W(r, q) w_q ρ_q e^{iΔ·f_q}` per distinct Δ.
    g: BTreeMap<[i32; 3], Vec<C64>>,
}

impl EeContractions {
    fn build(basis: &ZmOrbitalSet, kmat: &KernelMatrix) -> Result<Self> {
        basis.grid().ensure_same(kmat.grid())?;
        let deltas = distinct_deltas(basis);
        let pairs: Vec<([i32; 3], Vec<C64>, Vec<C64>)> = deltas
            .par_iter()
            .map(|&d| {
                let a = density_phase_weights(basis, d);
                let g: Vec<C64> = (0..a.len())
                    .map(|p| kmat.row(p).iter().zip(&a).map(|(w, x)| x * w).sum())
                    .collect();
                (d, a, g)
            })
            .collect();
        let mut weighted = BTreeMap::new();
        let mut g = BTreeMap::new();
        for (d, a, gg) in pairs {
            weighted.insert(d, a);
            g.insert(d, gg);
        }
        Ok(EeContractions { weighted, g })
    }
}

fn ee_from_contractions(basis: &ZmOrbitalSet, c: &EeContractions) -> Tensor4 {
    let m = basis.m();
    let n2 = (basis.n_electrons as f64).powi(2);
    // the element depends only on (k_ji, k_lk)
    let mut cache: BTreeMap<([i32; 3], [i32; 3]), C64> = BTreeMap::new();
    for d1 in c.weighted.keys() {
        for d2 in c.g.keys() {
            let a = &c.weighted[d1];
            let g = &c.g[d2];
            let s: C64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
            cache.insert((*d1, *d2), s / n2);
        }
    }
    let mut v = Tensor4::zeros(m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let key = (basis.k_diff(j, i), basis.k_diff(l, k));
                    v.set(i, j, k, l, cache[&key]);
                }
            }
        }
    }
    // enforce v_ijkl = v_klij to the last bit
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    if (i, j) < (k, l) {
                        let avg = 0.5 * (v.get(i, j, k, l) + v.get(k, l, i, j));
                        v.set(i, j, k, l, avg);
                        v.set(k, l, i, j, avg);
                    }
                }
            }
        }
    }
    v
}

/// `v_ijkl = (1/N²) ∬ ρ(r′)e^{iξ_ji(r′)} w(r′, r″) ρ(r″)e^{iξ_lk(r″)}`.
pub fn ee_tensor(basis: &ZmOrbitalSet, kernel: &InteractionKernel) -> Result<Tensor4> {
    ee_guard(basis.m(), basis.grid().len(), DEFAULT_EE_BUDGET)?;
    let kmat = KernelMatrix::build(basis.grid(), kernel)?;
    let c = EeContractions::build(basis, &kmat)?;
    Ok(ee_from_contractions(basis, &c))
}

/// Direct orbital-product form of the electron-electron tensor, `O(M⁴G²)`.
/// Only meant as a cross-check on small grids.
pub fn ee_tensor_orbital(basis: &ZmOrbitalSet, kernel: &InteractionKernel) -> Result<Tensor4> {
    let kmat = KernelMatrix::build(basis.grid(), kernel)?;
    let w = basis.grid().weights();
    let m = basis.m();
    let g = w.len();
    let pair = |a: usize, b: usize| -> Vec<C64> {
        (0..g)
            .map(|p| basis.orbitals[a].values()[p].conj() * basis.orbitals[b].values()[p] * w[p])
            .collect()
    };
    let mut v = Tensor4::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let pij = pair(i, j);
            let conv = kmat.apply(&pij);
            for k in 0..m {
                for l in 0..m {
                    let pkl = pair(k, l);
                    v.set(i, j, k, l, conv.iter().zip(&pkl).map(|(a, b)| a * b).sum());
                }
            }
        }
    }
    Ok(v)
}

/// Options for [`build_tensors`].
#[derive(Debug, Clone, Copy)]
pub struct TensorOptions {
    pub ee_budget: u128,
}

impl Default for TensorOptions {
    fn default() -> Self {
        TensorOptions {
            ee_budget: DEFAULT_EE_BUDGET,
        }
    }
}

/// Build every Hamiltonian tensor and the derivative kernels in one pass.
pub fn build_tensors(
    basis: &ZmOrbitalSet,
    v_ext1: &Field,
    kmat: &KernelMatrix,
    options: &TensorOptions,
) -> Result<(HamiltonianTensors, DerivativeKernels)> {
    ee_guard(basis.m(), basis.grid().len(), options.ee_budget)?;
    basis.grid().ensure_same(v_ext1.grid())?;
    let contractions = EeContractions::build(basis, kmat)?;
    let v_ee = ee_from_contractions(basis, &contractions);
    let tensors = HamiltonianTensors::new(
        kinetic_matrix(basis),
        external_matrix(basis, v_ext1)?,
        v_ee,
        basis.basis_id(),
    )?;
    let kernels = DerivativeKernels {
        phase: basis.phase.clone(),
        wavevectors: basis.wavevectors.clone(),
        rho: basis.source_density.real_parts(),
        v_ext1: v_ext1.real_parts(),
        n_electrons: basis.n_electrons,
        basis_id: basis.basis_id(),
        g: contractions.g,
    };
    Ok((tensors, kernels))
}

/// Density functional derivatives of the external and electron-electron
/// matrix elements.
#[derive(Debug, Clone)]
pub struct DerivativeKernels {
    phase: ZmPhaseField,
    wavevectors: Vec<[i32; 3]>,
    rho: Vec<f64>,
    v_ext1: Vec<f64>,
    n_electrons: usize,
    basis_id: u64,
    g: BTreeMap<[i32; 3], Vec<C64>>,
}

impl DerivativeKernels {
    /// Kernels for a basis without building the tensors.
    pub fn build(basis: &ZmOrbitalSet, v_ext1: &Field, kernel: &InteractionKernel) -> Result<Self> {
        let kmat = KernelMatrix::build(basis.grid(), kernel)?;
        Ok(build_tensors(basis, v_ext1, &kmat, &TensorOptions::default())?.1)
    }

    pub fn m(&self) -> usize {
        self.wavevectors.len()
    }

    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn phase(&self) -> &ZmPhaseField {
        &self.phase
    }

    /// `k_j − k_i`.
    pub fn k_diff(&self, j: usize, i: usize) -> Result<[i32; 3]> {
        let m = self.m();
        for idx in [i, j] {
            if idx >= m {
                return Err(Error::ModeOutOfRange { mode: idx, m });
            }
        }
        let (a, b) = (self.wavevectors[j], self.wavevectors[i]);
        Ok([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
    }

    /// `g_Δ(r) = ∫ w(r, r′) ρ(r′) e^{iΔ·f(r′)} dr′` for a wavevector difference
    /// occurring in the basis.
    pub fn kernel_contraction(&self, delta: [i32; 3]) -> Option<&[C64]> {
        self.g.get(&delta).map(|v| v.as_slice())
    }

    /// `e^{iΔ·f}` at every grid point.
    pub fn phase_factor(&self, delta: [i32; 3]) -> Vec<C64> {
        (0..self.rho.len())
            .map(|p| C64::from_polar(1.0, self.phase.phase_at(delta, p)))
            .collect()
    }

    /// `a(r) e^{iΔ·f(r)} + i ∫ dr′ ρ(r′) e^{iΔ·f(r′)} a(r′) δ(Δ·f(r′))/δρ(r)`:
    /// derivative of `∫ ρ e^{iΔ·f} a` with respect to `ρ`, for fixed `a`.
    pub fn density_phase_derivative(&self, delta: [i32; 3], a: &[C64]) -> Vec<C64> {
        let e = self.phase_factor(delta);
        let local: Vec<C64> = e.iter().zip(a).map(|(e, a)| e * a).collect();
        if delta == [0, 0, 0] {
            return local;
        }
        let h: Vec<C64> = local.iter().zip(&self.rho).map(|(x, r)| x * *r).collect();
        let adj = self.phase.derivative_adjoint(delta, &h);
        local.iter().zip(adj).map(|(l, f)| l + I * f).collect()
    }

    fn to_field(&self, values: Vec<C64>) -> Result<Field> {
        Field::new(*self.phase.grid(), FieldKind::Generic, values)
    }

    /// `δv_ij^ext/δρ(r)`.
    pub fn dvext_kernel(&self, i: usize, j: usize) -> Result<Field> {
        let d = self.k_diff(j, i)?;
        let a: Vec<C64> = self.v_ext1.iter().map(|&v| C64::from(v)).collect();
        let n = self.n_electrons as f64;
        let vals = self.density_phase_derivative(d, &a);
        self.to_field(vals.into_iter().map(|v| v / n).collect())
    }

    /// One half `𝕍_ijkl(r)` of the electron-electron derivative kernel.
    pub fn vee_half(&self, i: usize, j: usize, k: usize, l: usize) -> Result<Vec<C64>> {
        let d1 = self.k_diff(j, i)?;
        let d2 = self.k_diff(l, k)?;
        let g = self
            .g
            .get(&d2)
            .ok_or_else(|| Error::InvalidArgument(format!("no kernel contraction for {d2:?}")))?;
        let n2 = (self.n_electrons as f64).powi(2);
        Ok(self
            .density_phase_derivative(d1, g)
            .into_iter()
            .map(|v| v / n2)
            .collect())
    }

    /// `δv_ijkl^ee/δρ(r) = 𝕍_ijkl(r) + 𝕍_klij(r)`.
    pub fn dvee_kernel(&self, i: usize, j: usize, k: usize, l: usize) -> Result<Field> {
        let a = self.vee_half(i, j, k, l)?;
        let b = self.vee_half(k, l, i, j)?;
        self.to_field(a.into_iter().zip(b).map(|(x, y)| x + y).collect())
    }
}

const TENSOR_MAGIC: &[u8; 6] = b"HYXCT1";
/// Dtype tag for little-endian complex128.
const DTYPE_C128: u8 = b'z';

/// Write a tensor dump: magic, `M` as u32 LE, dtype tag, row-major payload.
pub fn write_tensor(path: &Path, m: usize, data: &[C64]) -> Result<()> {
    let mut buf = Vec::with_capacity(11 + 16 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.push(DTYPE_C128);
    for v in data {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a tensor dump; returns `M` and the payload.
pub fn read_tensor(path: &Path) -> Result<(usize, Vec<C64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::MalformedDump {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 11 || &bytes[..6] != TENSOR_MAGIC {
        return Err(bad("missing HYXCT1 header"));
    }
    let m = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes[10] != DTYPE_C128 {
        return Err(bad("unsupported dtype tag"));
    }
    let payload = &bytes[11..];
    if payload.len() % 16 != 0 {
        return Err(bad("payload is not a whole number of complex128 values"));
    }
    let data: Vec<C64> = payload
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    if data.len() != m * m && data.len() != m.pow(4) {
        return Err(bad("payload length matches neither M^2 nor M^4"));
    }
    Ok((m, data))
}

pub fn matrix_to_row_major(a: &DMatrix<C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn matrix_from_row_major(m: usize, data: &[C64]) -> Result<DMatrix<C64>> {
    if data.len() != m * m {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {m}x{m} matrix",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(m, m, data))
}

/// Provenance stored next to the binary tensor dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub m: usize,
    pub n_electrons: usize,
    pub basis_id: u64,
}

pub const TENSOR_FILES: [&str; 3] = ["t.bin", "vext.bin", "vee.bin"];
pub const TENSOR_META_FILE: &str = "tensors.json";

/// Write `t.bin`, `vext.bin`, `vee.bin` and `tensors.json` into `dir`.
pub fn write_tensors(dir: &Path, tensors: &HamiltonianTensors, n_electrons: usize) -> Result<()> {
    let m = tensors.m();
    write_tensor(&dir.join(TENSOR_FILES[0]), m, &matrix_to_row_major(&tensors.t))?;
    write_tensor(&dir.join(TENSOR_FILES[1]), m, &matrix_to_row_major(&tensors.v_ext))?;
    write_tensor(&dir.join(TENSOR_FILES[2]), m, tensors.v_ee.as_slice())?;
    let meta = TensorMeta {
        m,
        n_electrons,
        basis_id: tensors.basis_id,
    };
    let path = dir.join(TENSOR_META_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

/// Read the tensor dumps written by [`write_tensors`].
pub fn read_tensors(dir: &Path) -> Result<(HamiltonianTensors, TensorMeta)> {
    let meta_path = dir.join(TENSOR_META_FILE);
    let missing = |p: &Path| Error::MissingDump {
        path: p.to_path_buf(),
        producer: "tensors",
    };
    if !meta_path.exists() {
        return Err(missing(&meta_path));
    }
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: TensorMeta = serde_json::from_str(&text)?;
    let mut parts = Vec::new();
    for name in TENSOR_FILES {
        let p = dir.join(name);
        if !p.exists() {
            return Err(missing(&p));
        }
        let (m, data) = read_tensor(&p)?;
        if m != meta.m {
            return Err(Error::MalformedDump {
                path: p,
                reason: format!("M = {m}, metadata says {}", meta.m),
            });
        }
        parts.push(data);
    }
    let m = meta.m;
    let t = matrix_from_row_major(m, &parts[0])?;
    let v_ext = matrix_from_row_major(m, &parts[1])?;
    let v_ee = Tensor4::from_vec(m, parts.pop().unwrap())?;
    Ok((HamiltonianTensors::new(t, v_ext, v_ee, meta.basis_id)?, meta))
}
