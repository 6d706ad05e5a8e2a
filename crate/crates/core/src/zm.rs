//! Density-constrained orthonormal orbitals `φᵢ = √(ρ/N)·exp(i kᵢ·f(r))`.
//!
//! The shared phase field `f` is built from cumulative trapezoidal integrals of
//! the density, its planar and linear projections. The three components of `f`
//! are indexed by *role* (outer, middle, inner integration axis); the default
//! assignment of roles to Cartesian axes is `x, y, z`.
//!
//! Functional derivatives are discrete: `D(p, s) = (∂ξ(r_p)/∂ρ_s) / w_s`, the
//! exact derivative of the discretized phase with respect to the density at
//! grid point `s`, divided by that point's quadrature weight. Contracting with
//! quadrature therefore reproduces finite differences of the discrete phase to
//! rounding error. Delta functions in the continuum expression become
//! `1/w` factors on the matching grid slice, and the step function becomes the
//! trapezoid weight ratio, which is `1` below the diagonal and `½` on it.

use std::f64::consts::PI;
use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{write_field, Field, FieldKind, Grid};

/// Floor applied to planar and linear densities before dividing by them.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Tolerance on `∫ρ − N` accepted when building orbitals.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// `Θ(x)`: 1 for `x ≥ 0`, else 0.
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Assignment of integration roles (outer, middle, inner) to Cartesian axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisOrder(pub [usize; 3]);

impl Default for AxisOrder {
    fn default() -> Self {
        AxisOrder([0, 1, 2])
    }
}

impl AxisOrder {
    pub fn new(axes: [usize; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &a in &axes {
            if a > 2 || seen[a] {
                return Err(Error::InvalidArgument(format!(
                    "axis order {axes:?} is not a permutation of 0, 1, 2"
                )));
            }
            seen[a] = true;
        }
        Ok(AxisOrder(axes))
    }

    /// Parse strings such as `"xyz"` or `"zxy"`.
    pub fn parse(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(Error::InvalidArgument(format!("bad axis order {s:?}")));
        }
        let mut axes = [0; 3];
        for (r, c) in chars.iter().enumerate() {
            axes[r] = match c {
                'x' => 0,
                'y' => 1,
                'z' => 2,
                _ => return Err(Error::InvalidArgument(format!("bad axis order {s:?}"))),
            };
        }
        AxisOrder::new(axes)
    }
}

/// Cumulative trapezoid weight `T(p, q)`: `C_p = Σ_q T(p, q) v_q`.
fn trap_weight(p: usize, q: usize, h: f64) -> f64 {
    if p == 0 || q > p {
        0.0
    } else if q == 0 || q == p {
        0.5 * h
    } else {
        h
    }
}

fn cumtrap(v: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for p in 1..v.len() {
        out[p] = out[p - 1] + 0.5 * h * (v[p - 1] + v[p]);
    }
    out
}

/// `out_q = Σ_p T(p, q) g_p / w_q`, the adjoint of [`cumtrap`] divided by the
/// quadrature weight of `q`.
fn cumtrap_adjoint(g: &[C64], h: f64, w: &[f64]) -> Vec<C64> {
    let n = g.len();
    let mut suffix = vec![C64::new(0.0, 0.0); n + 1];
    for p in (0..n).rev() {
        suffix[p] = suffix[p + 1] + g[p];
    }
    (0..n)
        .map(|q| {
            let s = if q == 0 {
                0.5 * h * suffix[1]
            } else {
                0.5 * h * g[q] + h * suffix[q + 1]
            };
            s / w[q]
        })
        .collect()
}

/// The shared phase field of a density-constrained basis.
#[derive(Debug, Clone)]
pub struct ZmPhaseField {
    grid: Grid,
    axes: AxisOrder,
    n_electrons: usize,
    /// `f` components by role, one value per grid point.
    components: Vec<Vec<f64>>,
    /// Planar density along the outer axis.
    planar: Vec<f64>,
    /// Linear density on the outer×middle plane (3D only), row-major.
    linear: Vec<f64>,
    /// Cumulative integrals behind the middle and inner components (3D only).
    cum_mid: Vec<f64>,
    cum_inner: Vec<f64>,
    clamped: usize,
}

impl ZmPhaseField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn axes(&self) -> AxisOrder {
        self.axes
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    /// `f` component for a role (0 = outer axis).
    pub fn component(&self, role: usize) -> &[f64] {
        &self.components[role]
    }

    pub fn planar_density(&self) -> &[f64] {
        &self.planar
    }

    /// Linear density `ρ̄(outer, middle)`, row-major; empty in 1D.
    pub fn linear_density(&self) -> &[f64] {
        &self.linear
    }

    /// Number of planar/linear density entries raised to [`DENSITY_FLOOR`].
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Grid coordinates of a point, by role.
    fn roles(&self, idx: usize) -> [usize; 3] {
        let c = self.grid.unravel(idx);
        if self.grid.dim() == 1 {
            return c;
        }
        [c[self.axes.0[0]], c[self.axes.0[1]], c[self.axes.0[2]]]
    }

    fn index_of_roles(&self, r: [usize; 3]) -> usize {
        if self.grid.dim() == 1 {
            return r[0];
        }
        let mut c = [0; 3];
        for role in 0..3 {
            c[self.axes.0[role]] = r[role];
        }
        self.grid.index(c)
    }

    fn role_spacing(&self, role: usize) -> f64 {
        self.grid.spacing(self.axes.0[role])
    }

    fn role_weights(&self, role: usize) -> Vec<f64> {
        self.grid.axis_weights(self.axes.0[role])
    }

    /// `k·f(r_p)`.
    pub fn phase_at(&self, k: [i32; 3], p: usize) -> f64 {
        self.components
            .iter()
            .zip(k)
            .map(|(f, kc)| kc as f64 * f[p])
            .sum()
    }

    /// `k·f(r)` at every grid point.
    pub fn phase(&self, k: [i32; 3]) -> Vec<f64> {
        (0..self.grid.len()).map(|p| self.phase_at(k, p)).collect()
    }

    fn planar_denominator(&self, a: usize) -> (f64, bool) {
        clamp(self.planar[a])
    }

    fn linear_denominator(&self, a: usize, b: usize) -> (f64, bool) {
        clamp(self.linear[a * self.grid.points_per_axis() + b])
    }

    /// Discrete derivative `D(p, s)` of `k·f(r_p)` with respect to `ρ(r_s)`.
    pub fn derivative_cell(&self, k: [i32; 3], p: usize, s: usize) -> f64 {
        let rp = self.roles(p);
        let rs = self.roles(s);
        let n = self.n_electrons as f64;
        let wa = self.role_weights(0);
        let mut d = 0.0;
        if k[0] != 0 {
            let t = trap_weight(rp[0], rs[0], self.role_spacing(0)) / wa[rs[0]];
            d += 2.0 * PI * k[0] as f64 / n * t;
        }
        if self.grid.dim() == 1 || rp[0] != rs[0] {
            return d;
        }
        let wb = self.role_weights(1);
        if k[1] != 0 {
            let (den, free) = self.planar_denominator(rs[0]);
            let t = trap_weight(rp[1], rs[1], self.role_spacing(1)) / wb[rs[1]];
            let mut y = t / den;
            if free {
                let cy = self.cum_mid[rp[0] * self.grid.points_per_axis() + rp[1]];
                y -= cy / (den * den);
            }
            d += 2.0 * PI * k[1] as f64 * y / wa[rs[0]];
        }
        if k[2] != 0 && rp[1] == rs[1] {
            let wc = self.role_weights(2);
            let (den, free) = self.linear_denominator(rs[0], rs[1]);
            let t = trap_weight(rp[2], rs[2], self.role_spacing(2)) / wc[rs[2]];
            let mut z = t / den;
            if free {
                z -= self.cum_inner[p] / (den * den);
            }
            d += 2.0 * PI * k[2] as f64 * z / (wa[rs[0]] * wb[rs[1]]);
        }
        d
    }

    /// Adjoint contraction `F(s) = Σ_p w_p g_p D(p, s)`, i.e.
    /// `∫ dr′ g(r′) δ(k·f(r′))/δρ(r)` on the grid.
    pub fn derivative_adjoint(&self, k: [i32; 3], g: &[C64]) -> Vec<C64> {
        let grid = &self.grid;
        let n = grid.points_per_axis();
        let zero = C64::new(0.0, 0.0);
        let mut out = vec![zero; grid.len()];
        if k == [0, 0, 0] {
            return out;
        }
        let w = grid.weights();
        let n_el = self.n_electrons as f64;
        let wa = self.role_weights(0);
        if grid.dim() == 1 {
            if k[0] != 0 {
                let gw: Vec<C64> = g.iter().zip(&w).map(|(g, w)| g * w).collect();
                let r = cumtrap_adjoint(&gw, self.role_spacing(0), &wa);
                let scale = 2.0 * PI * k[0] as f64 / n_el;
                for (o, v) in out.iter_mut().zip(r) {
                    *o = v * scale;
                }
            }
            return out;
        }
        let wb = self.role_weights(1);
        let wc = self.role_weights(2);
        // Reorganize into role-major order once.
        let mut gr = vec![zero; grid.len()];
        let mut perm = vec![0usize; grid.len()];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let idx = self.index_of_roles([a, b, c]);
                    let r = (a * n + b) * n + c;
                    perm[r] = idx;
                    gr[r] = g[idx];
                }
            }
        }
        let mut res = vec![zero; grid.len()];
        if k[0] != 0 {
            let gx: Vec<C64> = (0..n)
                .map(|a| {
                    let mut s = zero;
                    for b in 0..n {
                        for c in 0..n {
                            s += gr[(a * n + b) * n + c] * (wa[a] * wb[b] * wc[c]);
                        }
                    }
                    s
                })
                .collect();
            let r = cumtrap_adjoint(&gx, self.role_spacing(0), &wa);
            let scale = 2.0 * PI * k[0] as f64 / n_el;
            for a in 0..n {
                for bc in 0..n * n {
                    res[a * n * n + bc] += r[a] * scale;
                }
            }
        }
        if k[1] != 0 {
            let scale = 2.0 * PI * k[1] as f64;
            for a in 0..n {
                let gy: Vec<C64> = (0..n)
                    .map(|b| {
                        (0..n)
                            .map(|c| gr[(a * n + b) * n + c] * (wb[b] * wc[c]))
                            .sum()
                    })
                    .collect();
                let (den, free) = self.planar_denominator(a);
                let r = cumtrap_adjoint(&gy, self.role_spacing(1), &wb);
                let quot: C64 = if free {
                    (0..n).map(|b| gy[b] * self.cum_mid[a * n + b]).sum::<C64>() / (den * den)
                } else {
                    zero
                };
                for b in 0..n {
                    let v = (r[b] / den - quot) * scale;
                    for c in 0..n {
                        res[(a * n + b) * n + c] += v;
                    }
                }
            }
        }
        if k[2] != 0 {
            let scale = 2.0 * PI * k[2] as f64;
            for a in 0..n {
                for b in 0..n {
                    let base = (a * n + b) * n;
                    let gz: Vec<C64> = (0..n).map(|c| gr[base + c] * wc[c]).collect();
                    let (den, free) = self.linear_denominator(a, b);
                    let r = cumtrap_adjoint(&gz, self.role_spacing(2), &wc);
                    let quot: C64 = if free {
                        (0..n)
                            .map(|c| gz[c] * self.cum_inner[perm[base + c]])
                            .sum::<C64>()
                            / (den * den)
                    } else {
                        zero
                    };
                    for c in 0..n {
                        res[base + c] += (r[c] / den - quot) * scale;
                    }
                }
            }
        }
        for (r, &idx) in res.into_iter().zip(&perm) {
            out[idx] = r;
        }
        out
    }
}

fn clamp(v: f64) -> (f64, bool) {
    if v < DENSITY_FLOOR {
        (DENSITY_FLOOR, false)
    } else {
        (v, true)
    }
}

/// Build the phase field of a density with the default axis order.
pub fn build_phase(rho: &Field, n_electrons: usize) -> Result<ZmPhaseField> {
    build_phase_with(rho, n_electrons, AxisOrder::default())
}

pub fn build_phase_with(rho: &Field, n_electrons: usize, axes: AxisOrder) -> Result<ZmPhaseField> {
    if rho.kind() != FieldKind::Density {
        return Err(Error::InvalidField(format!(
            "phase needs a density field, got {:?}",
            rho.kind()
        )));
    }
    if n_electrons == 0 {
        return Err(Error::InvalidArgument("phase needs at least one electron".into()));
    }
    let grid = *rho.grid();
    let n = grid.points_per_axis();
    let vals = rho.real_parts();
    let n_el = n_electrons as f64;
    if grid.dim() == 1 {
        let axes = AxisOrder::default();
        let cum = cumtrap(&vals, grid.spacing(0));
        let fx = cum.iter().map(|c| 2.0 * PI * c / n_el).collect();
        return Ok(ZmPhaseField {
            grid,
            axes,
            n_electrons,
            components: vec![fx],
            planar: vals,
            linear: Vec::new(),
            cum_mid: Vec::new(),
            cum_inner: Vec::new(),
            clamped: 0,
        });
    }
    let mut phase = ZmPhaseField {
        grid,
        axes,
        n_electrons,
        components: vec![vec![0.0; grid.len()]; 3],
        planar: vec![0.0; n],
        linear: vec![0.0; n * n],
        cum_mid: vec![0.0; n * n],
        cum_inner: vec![0.0; grid.len()],
        clamped: 0,
    };
    let wb = phase.role_weights(1);
    let wc = phase.role_weights(2);
    let (ha, hb, hc) = (phase.role_spacing(0), phase.role_spacing(1), phase.role_spacing(2));
    let mut line = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for (c, item) in line.iter_mut().enumerate() {
                *item = vals[phase.index_of_roles([a, b, c])];
                s += wc[c] * *item;
            }
            phase.linear[a * n + b] = s;
            let cz = cumtrap(&line, hc);
            for (c, v) in cz.into_iter().enumerate() {
                let idx = phase.index_of_roles([a, b, c]);
                phase.cum_inner[idx] = v;
            }
        }
        phase.planar[a] = (0..n).map(|b| wb[b] * phase.linear[a * n + b]).sum();
        let cy = cumtrap(&phase.linear[a * n..(a + 1) * n], hb);
        phase.cum_mid[a * n..(a + 1) * n].copy_from_slice(&cy);
    }
    let cx = cumtrap(&phase.planar, ha);
    let mut clamped = 0;
    for a in 0..n {
        let (den_a, free_a) = clamp(phase.planar[a]);
        clamped += usize::from(!free_a);
        for b in 0..n {
            let (den_ab, free_ab) = clamp(phase.linear[a * n + b]);
            clamped += usize::from(!free_ab);
            for c in 0..n {
                let idx = phase.index_of_roles([a, b, c]);
                phase.components[0][idx] = 2.0 * PI * cx[a] / n_el;
                phase.components[1][idx] = 2.0 * PI * phase.cum_mid[a * n + b] / den_a;
                phase.components[2][idx] = 2.0 * PI * phase.cum_inner[idx] / den_ab;
            }
        }
    }
    if clamped > 0 {
        info!("phase field: {clamped} planar/linear density entries raised to the floor {DENSITY_FLOOR:e}");
    }
    phase.clamped = clamped;
    Ok(phase)
}

/// `δ(k·f(r′))/δρ(r)` at a fixed grid point `r′`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseDerivative<'a> {
    phase: &'a ZmPhaseField,
    k: [i32; 3],
    at: usize,
}

/// Functional derivative of the phase `k·f(r′)` at the grid point `r_prime`.
pub fn phase_functional_derivative(
    phase: &ZmPhaseField,
    k: [i32; 3],
    r_prime: [f64; 3],
) -> Result<PhaseDerivative<'_>> {
    let at = phase.grid.locate(r_prime)?;
    Ok(PhaseDerivative { phase, k, at })
}

impl<'a> PhaseDerivative<'a> {
    pub fn is_zero(&self) -> bool {
        self.k == [0, 0, 0]
    }

    /// The step-function term `2πkₓ/N · Θ(x′ − x)` at a point `r`, with
    /// `Θ(0) = 1`. Delta-line terms are not included.
    pub fn smooth_value(&self, r: [f64; 3]) -> f64 {
        let axis = self.phase.axes.0[0];
        let xp = self.phase.grid.point(self.at)[axis];
        2.0 * PI * self.k[0] as f64 / self.phase.n_electrons as f64 * heaviside(xp - r[axis])
    }

    /// Full discrete derivative at grid point `s`, delta terms resolved as
    /// `1/w` on the matching slices.
    pub fn cell_value(&self, s: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.phase.derivative_cell(self.k, self.at, s)
    }

    /// `∫ dr D(r′, r) δρ(r)`: first-order change of the phase at `r′`.
    pub fn contract(&self, delta_rho: &Field) -> Result<f64> {
        self.phase.grid.ensure_same(delta_rho.grid())?;
        let w = self.phase.grid.weights();
        Ok((0..w.len())
            .filter(|&s| delta_rho.values()[s].re != 0.0)
            .map(|s| w[s] * delta_rho.values()[s].re * self.cell_value(s))
            .sum())
    }
}

/// Options for [`ZmOrbitalSet::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZmOptions {
    pub axes: AxisOrder,
    /// Maximum accepted `|∫ρ − N|`; `None` skips the check.
    pub normalization_tol: Option<f64>,
}

impl Default for ZmOptions {
    fn default() -> Self {
        ZmOptions {
            axes: AxisOrder::default(),
            normalization_tol: Some(NORMALIZATION_TOL),
        }
    }
}

/// Orbitals of a density-constrained basis.
#[derive(Debug, Clone)]
pub struct ZmOrbitalSet {
    pub orbitals: Vec<Field>,
    pub wavevectors: Vec<[i32; 3]>,
    pub phase: ZmPhaseField,
    pub source_density: Field,
    pub n_electrons: usize,
    basis_id: u64,
}

/// Build orbitals with default options.
pub fn build_orbitals(rho: &Field, wavevectors: &[[i32; 3]], n_electrons: usize) -> Result<ZmOrbitalSet> {
    ZmOrbitalSet::build(rho, wavevectors, n_electrons, &ZmOptions::default())
}

impl ZmOrbitalSet {
    pub fn build(
        rho: &Field,
        wavevectors: &[[i32; 3]],
        n_electrons: usize,
        options: &ZmOptions,
    ) -> Result<Self> {
        for (i, k) in wavevectors.iter().enumerate() {
            if wavevectors[..i].contains(k) {
                return Err(Error::DuplicateWavevector(*k));
            }
            if rho.grid().dim() == 1 && (k[1] != 0 || k[2] != 0) {
                return Err(Error::InvalidArgument(format!(
                    "wavevector {k:?} has transverse components on a 1D grid"
                )));
            }
        }
        if let Some(tol) = options.normalization_tol {
            let total = rho.integrate().re;
            if (total - n_electrons as f64).abs() > tol {
                return Err(Error::DensityNormalization {
                    expected: n_electrons as f64,
                    actual: total,
                    tol,
                });
            }
        }
        let phase = build_phase_with(rho, n_electrons, options.axes)?;
        let grid = *rho.grid();
        let n_el = n_electrons as f64;
        let amp: Vec<f64> = rho.values().iter().map(|v| (v.re.max(0.0) / n_el).sqrt()).collect();
        let orbitals = wavevectors
            .par_iter()
            .map(|&k| {
                let values = (0..grid.len())
                    .map(|p| C64::from_polar(amp[p], phase.phase_at(k, p)))
                    .collect();
                Field::new(grid, FieldKind::Orbital, values)
            })
            .collect::<Result<Vec<_>>>()?;
        let basis_id = fingerprint(rho, wavevectors, n_electrons, options.axes);
        Ok(ZmOrbitalSet {
            orbitals,
            wavevectors: wavevectors.to_vec(),
            phase,
            source_density: rho.clone(),
            n_electrons,
            basis_id,
        })
    }

    pub fn m(&self) -> usize {
        self.orbitals.len()
    }

    pub fn grid(&self) -> &Grid {
        self.source_density.grid()
    }

    /// Fingerprint of the density, wavevectors and axis order.
    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    /// `k_j − k_i`.
    pub fn k_diff(&self, j: usize, i: usize) -> [i32; 3] {
        let (a, b) = (self.wavevectors[j], self.wavevectors[i]);
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    /// `ξ_j(r) − ξ_i(r)` at every grid point.
    pub fn phase_diff(&self, j: usize, i: usize) -> Vec<f64> {
        self.phase.phase(self.k_diff(j, i))
    }

    /// `⟨φᵢ|φⱼ⟩` by quadrature.
    pub fn gram(&self) -> Result<DMatrix<C64>> {
        let m = self.m();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] = self.orbitals[i].inner(&self.orbitals[j])?;
            }
        }
        Ok(g)
    }

    /// `max |⟨φᵢ|φⱼ⟩ − δᵢⱼ|`.
    pub fn gram_error(&self) -> Result<f64> {
        let g = self.gram()?;
        let m = self.m();
        let mut e: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let d = if i == j { 1.0 } else { 0.0 };
                e = e.max((g[(i, j)] - d).norm());
            }
        }
        Ok(e)
    }

    /// `max_i | N|φᵢ|² − ρ |`.
    pub fn constraint_error(&self) -> f64 {
        let n = self.n_electrons as f64;
        self.orbitals
            .iter()
            .flat_map(|o| {
                o.values()
                    .iter()
                    .zip(self.source_density.values())
                    .map(move |(v, r)| (n * v.norm_sqr() - r.re).abs())
            })
            .fold(0.0, f64::max)
    }

    /// `1 − Σᵢ |⟨φᵢ|ψ⟩|²` for each given state: the part of `ψ` outside the span.
    pub fn projection_residuals(&self, states: &[&Field]) -> Result<Vec<f64>> {
        states
            .iter()
            .map(|psi| {
                let norm = psi.inner(psi)?.re;
                let mut captured = 0.0;
                for phi in &self.orbitals {
                    captured += phi.inner(psi)?.norm_sqr();
                }
                Ok(1.0 - captured / norm)
            })
            .collect()
    }

    /// Write one dump per orbital, named `<prefix>_k<kx>_<ky>_<kz>.dat`.
    pub fn write_orbitals(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        for (orb, k) in self.orbitals.iter().zip(&self.wavevectors) {
            let path = dir.join(orbital_file_name(prefix, *k));
            write_field(&path, orb)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn orbital_file_name(prefix: &str, k: [i32; 3]) -> String {
    format!("{prefix}_k{}_{}_{}.dat", k[0], k[1], k[2])
}

fn fingerprint(rho: &Field, wavevectors: &[[i32; 3]], n: usize, axes: AxisOrder) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for v in rho.values() {
        eat(&v.re.to_bits().to_le_bytes());
    }
    for k in wavevectors {
        for c in k {
            eat(&c.to_le_bytes());
        }
    }
    eat(&(n as u64).to_le_bytes());
    for a in axes.0 {
        eat(&(a as u64).to_le_bytes());
    }
    h
}

fn sign_rank(k: i32) -> u32 {
    if k > 0 {
        2 * k as u32 - 1
    } else {
        2 * k.unsigned_abs()
    }
}

/// The first `m` wavevectors in the default order: `0, +1, −1, +2, −2, …`
/// in 1D; in 3D by ascending `|k|²`, then by that per-axis order with later
/// axes more significant, so excitations along x come first.
pub fn auto_wavevectors(m: usize, dim: usize) -> Vec<[i32; 3]> {
    if dim == 1 {
        return (0..m)
            .map(|i| {
                let mag = i.div_ceil(2) as i32;
                let k = if i % 2 == 1 { mag } else { -mag };
                [k, 0, 0]
            })
            .collect();
    }
    let mut kmax = 0i32;
    loop {
        if (2 * kmax + 1).pow(3) as usize >= m {
            let mut all = Vec::new();
            // a full cube of radius 2·kmax+1 contains every vector of the first m shells
            let r = 2 * kmax + 1;
            for x in -r..=r {
                for y in -r..=r {
                    for z in -r..=r {
                        all.push([x, y, z]);
                    }
                }
            }
            all.sort_by_key(|k| {
                (
                    k.iter().map(|c| c * c).sum::<i32>(),
                    sign_rank(k[2]),
                    sign_rank(k[1]),
                    sign_rank(k[0]),
                )
            });
            all.truncate(m);
            return all;
        }
        kmax += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_1d(l: f64, n: usize, n_el: usize) -> Field {
        let g = Grid::line(0.0, l, n).unwrap();
        Field::density(g, vec![n_el as f64 / l; n]).unwrap()
    }

    fn two_peak(n: usize, n_el: usize) -> Field {
        let l = 10.0;
        let g = Grid::line(0.0, l, n).unwrap();
        let raw = Field::from_real_fn(g, FieldKind::Density, |r| {
            let t = PI * r[0] / l;
            t.sin().powi(2) * (1.0 + 0.7 * (2.0 * t).cos())
        })
        .unwrap();
        let s = raw.integrate().re;
        raw.map(FieldKind::Density, |v| v * (n_el as f64 / s)).unwrap()
    }

    #[test]
    fn heaviside_convention() {
        assert_eq!(heaviside(0.0), 1.0);
        assert_eq!(heaviside(-3.2), 0.0);
        assert_eq!(heaviside(1e-300), 1.0);
    }

    #[test]
    fn uniform_phase_is_linear() {
        let rho = uniform_1d(10.0, 101, 2);
        let phase = build_phase(&rho, 2).unwrap();
        for p in 0..101 {
            let x = rho.grid().coord(0, p);
            assert!((phase.component(0)[p] - 2.0 * PI * x / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_endpoints() {
        let rho = two_peak(257, 3);
        let f = build_phase(&rho, 3).unwrap();
        assert_eq!(f.component(0)[0], 0.0);
        assert!((f.component(0)[256] - 2.0 * PI).abs() < 1e-12);
        assert!(f.component(0).windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn separable_3d_phase() {
        let g = Grid::cube([(0.0, 2.0), (-1.0, 1.0), (0.0, 3.0)], 9).unwrap();
        let p1 = |x: f64| 1.0 + x;
        let p2 = |y: f64| 2.0 - y * y;
        let p3 = |z: f64| 0.5 + z * z;
        let raw = Field::from_real_fn(g, FieldKind::Density, |r| p1(r[0]) * p2(r[1]) * p3(r[2])).unwrap();
        let s = raw.integrate().re;
        let rho = raw.map(FieldKind::Density, |v| v * (2.0 / s)).unwrap();
        let f = build_phase(&rho, 2).unwrap();
        let cum1d = |grid: &Grid, axis: usize, func: &dyn Fn(f64) -> f64| {
            let v: Vec<f64> = (0..9).map(|i| func(grid.coord(axis, i))).collect();
            let c = cumtrap(&v, grid.spacing(axis));
            let tot = c[8];
            c.into_iter().map(|x| 2.0 * PI * x / tot).collect::<Vec<_>>()
        };
        let fx = cum1d(&g, 0, &p1);
        let fy = cum1d(&g, 1, &p2);
        let fz = cum1d(&g, 2, &p3);
        for idx in 0..g.len() {
            let c = g.unravel(idx);
            assert!((f.component(0)[idx] - fx[c[0]]).abs() < 1e-12);
            assert!((f.component(1)[idx] - fy[c[1]]).abs() < 1e-12);
            assert!((f.component(2)[idx] - fz[c[2]]).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_waves_from_uniform_density() {
        let l = 10.0;
        let rho = uniform_1d(l, 201, 1);
        let basis = build_orbitals(&rho, &auto_wavevectors(5, 1), 1).unwrap();
        for (orb, k) in basis.orbitals.iter().zip(&basis.wavevectors) {
            for p in 0..201 {
                let x = rho.grid().coord(0, p);
                let pw = C64::from_polar((1.0 / l).sqrt(), 2.0 * PI * k[0] as f64 * x / l);
                assert!((orb.values()[p] - pw).norm() < 1e-12);
            }
        }
        assert!(basis.gram_error().unwrap() < 1e-12);
        let k0 = &basis.orbitals[0];
        assert!(k0.values().iter().all(|v| v.im == 0.0 && v.re >= 0.0));
    }

    #[test]
    fn gram_converges_for_two_peak_density() {
        let mut errs = Vec::new();
        for n in [512, 1024] {
            let rho = two_peak(n, 2);
            let basis = build_orbitals(&rho, &auto_wavevectors(6, 1), 2).unwrap();
            assert!(basis.constraint_error() <= 1e-12 * rho.max_abs());
            errs.push(basis.gram_error().unwrap());
        }
        assert!(errs[1] < 5e-6, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let rho = uniform_1d(10.0, 51, 2);
        assert!(matches!(
            build_orbitals(&rho, &[[0, 0, 0], [1, 0, 0], [0, 0, 0]], 2),
            Err(Error::DuplicateWavevector(_))
        ));
        assert!(matches!(
            build_orbitals(&rho, &[[0, 0, 0]], 3),
            Err(Error::DensityNormalization { .. })
        ));
    }

    #[test]
    fn auto_order() {
        assert_eq!(
            auto_wavevectors(5, 1),
            vec![[0, 0, 0], [1, 0, 0], [-1, 0, 0], [2, 0, 0], [-2, 0, 0]]
        );
        let k3 = auto_wavevectors(8, 3);
        assert_eq!(k3[0], [0, 0, 0]);
        assert_eq!(k3[1], [1, 0, 0]);
        assert_eq!(k3[2], [-1, 0, 0]);
        assert_eq!(k3[3], [0, 1, 0]);
        assert_eq!(k3.len(), 8);
        let k27 = auto_wavevectors(27, 3);
        assert_eq!(k27.len(), 27);
    }

    #[test]
    fn derivative_1d_closed_form() {
        let rho = two_peak(65, 2);
        let f = build_phase(&rho, 2).unwrap();
        let g = *rho.grid();
        let d = phase_functional_derivative(&f, [1, 0, 0], g.point(30)).unwrap();
        assert!((d.smooth_value(g.point(30)) - PI).abs() < 1e-15);
        assert_eq!(d.smooth_value(g.point(31)), 0.0);
        assert!((d.cell_value(10) - PI).abs() < 1e-14);
        assert_eq!(d.cell_value(40), 0.0);
        let z = phase_functional_derivative(&f, [0, 0, 0], g.point(30)).unwrap();
        assert!((0..65).all(|s| z.cell_value(s) == 0.0));
        assert!(phase_functional_derivative(&f, [1, 0, 0], [0.123, 0.0, 0.0]).is_err());
    }

    fn fd_check(rho: &Field, n_el: usize, k: [i32; 3], axes: AxisOrder, cells: &[usize], at: &[usize]) {
        let f = build_phase_with(rho, n_el, axes).unwrap();
        let g = *rho.grid();
        let w = g.weights();
        let eps = f64::EPSILON.cbrt() * rho.max_abs();
        for &s in cells {
            let mut plus = rho.real_parts();
            let mut minus = plus.clone();
            plus[s] += eps;
            minus[s] -= eps;
            let fp = build_phase_with(&Field::density(g, plus).unwrap(), n_el, axes).unwrap();
            let fm = build_phase_with(&Field::density(g, minus).unwrap(), n_el, axes).unwrap();
            let mut dr = vec![0.0; g.len()];
            dr[s] = eps;
            let delta = Field::from_real(g, FieldKind::Generic, dr).unwrap();
            for &p in at {
                let fd = (fp.phase_at(k, p) - fm.phase_at(k, p)) / (2.0 * eps);
                let d = phase_functional_derivative(&f, k, g.point(p)).unwrap();
                let analytic = d.cell_value(s) * w[s];
                let contracted = d.contract(&delta).unwrap() / eps;
                let scale = fd.abs().max(1e-6);
                assert!((fd - analytic).abs() <= 1e-6 * scale.max(analytic.abs()), "{fd} {analytic}");
                assert!((contracted - analytic).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences_1d() {
        let rho = two_peak(129, 2);
        fd_check(&rho, 2, [2, 0, 0], AxisOrder::default(), &[20, 64, 90], &[10, 20, 21, 64, 100]);
    }

    fn blob_3d(n: usize) -> Field {
        let g = Grid::cube([(-3.0, 3.0), (-3.0, 3.0), (-3.0, 3.0)], n).unwrap();
        let raw = Field::from_real_fn(g, FieldKind::Density, |r| {
            let a = (-((r[0] - 0.5).powi(2) + r[1].powi(2) + 0.5 * r[2].powi(2))).exp();
            let b = 0.5 * (-((r[0] + 1.0).powi(2) + (r[1] - 1.0).powi(2) + (r[2] + 0.7).powi(2))).exp();
            let edge = (9.0 - r[0] * r[0]) * (9.0 - r[1] * r[1]) * (9.0 - r[2] * r[2]) / 729.0;
            (a + b) * edge
        })
        .unwrap();
        let s = raw.integrate().re;
        raw.map(FieldKind::Density, |v| v * (2.0 / s)).unwrap()
    }

    #[test]
    fn derivative_matches_finite_differences_3d() {
        let rho = blob_3d(9);
        let g = *rho.grid();
        let cells = [g.index([4, 4, 4]), g.index([3, 5, 2]), g.index([5, 3, 6])];
        let at = [
            g.index([4, 4, 4]),
            g.index([4, 4, 6]),
            g.index([4, 6, 1]),
            g.index([3, 5, 3]),
            g.index([6, 2, 2]),
            g.index([5, 3, 6]),
        ];
        fd_check(&rho, 2, [1, -2, 3], AxisOrder::default(), &cells, &at);
        fd_check(&rho, 2, [0, 1, -1], AxisOrder::parse("zxy").unwrap(), &cells, &at);
    }

    #[test]
    fn adjoint_matches_cellwise_sum() {
        for rho in [two_peak(41, 2), blob_3d(6)] {
            let g = *rho.grid();
            let f = build_phase_with(&rho, 2, AxisOrder::parse("yzx").unwrap()).unwrap();
            let w = g.weights();
            let test: Vec<C64> = (0..g.len())
                .map(|p| C64::new((p as f64 * 0.37).sin(), (p as f64 * 0.11).cos()))
                .collect();
            let k = if g.dim() == 1 { [3, 0, 0] } else { [1, 2, -1] };
            let fast = f.derivative_adjoint(k, &test);
            for s in (0..g.len()).step_by(7) {
                let slow: C64 = (0..g.len())
                    .map(|p| test[p] * w[p] * f.derivative_cell(k, p, s))
                    .sum();
                assert!((fast[s] - slow).norm() <= 1e-10 * (1.0 + slow.norm()), "{} {}", fast[s], slow);
            }
        }
    }

    #[test]
    fn projection_residual_of_span_member_is_zero() {
        let rho = two_peak(513, 2);
        let basis = build_orbitals(&rho, &auto_wavevectors(4, 1), 2).unwrap();
        let r = basis.projection_residuals(&[&basis.orbitals[2]]).unwrap();
        assert!(r[0].abs() < 1e-8, "{r:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn orbitals_share_modulus_and_stay_orthonormal(
            a in 0.0f64..0.45,
            b in 0.0f64..0.45,
            shift in -2.0f64..2.0,
            n_el in 1usize..4,
        ) {
            let g = Grid::line(-8.0, 8.0, 801).unwrap();
            let shape = |x: f64| (-(x - shift).powi(2) / 2.0).exp() * (1.0 + a * (1.3 * x).cos() + b * (0.7 * x).sin());
            let raw = Field::from_real_fn(g, FieldKind::Density, |r| shape(r[0])).unwrap();
            let z = raw.integrate().re;
            let rho = Field::from_real_fn(g, FieldKind::Density, |r| n_el as f64 * shape(r[0]) / z).unwrap();
            let basis = build_orbitals(&rho, &auto_wavevectors(4, 1), n_el).unwrap();
            for orb in &basis.orbitals {
                for (v, r) in orb.values().iter().zip(rho.values()) {
                    proptest::prop_assert!((v.norm() - (r.re / n_el as f64).sqrt()).abs() < 1e-12);
                }
            }
            proptest::prop_assert!(basis.gram_error().unwrap() < 1e-3);
        }
    }
}
