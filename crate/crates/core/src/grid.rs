//! Uniform box grids, fields sampled on them, quadrature, the finite-difference
//! Laplacian and the electron-electron pair kernel.
//!
//! Grid points include both box faces. Quadrature is the composite trapezoidal
//! rule and the Laplacian is the second-order central stencil with zero values
//! assumed outside the box.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of dense kernel-matrix entries built without complaint.
pub const KERNEL_MATRIX_BUDGET: usize = 1 << 26;

/// Uniform tensor-product grid over a box in one or three dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: [f64; 3],
    upper: [f64; 3],
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, extents: &[(f64, f64)], points: usize) -> Result<Self> {
        if dim != 1 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 3, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents, got {}",
                extents.len()
            )));
        }
        if points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points per axis, got {points}"
            )));
        }
        let mut lower = [0.0; 3];
        let mut upper = [0.0; 3];
        for (axis, &(a1, a2)) in extents.iter().enumerate() {
            if !(a1.is_finite() && a2.is_finite()) || a2 <= a1 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} interval [{a1}, {a2}] is empty or not finite"
                )));
            }
            lower[axis] = a1;
            upper[axis] = a2;
        }
        let total = (points as u128).pow(dim as u32);
        if total > u32::MAX as u128 {
            return Err(Error::InvalidGrid(format!("{total} points is too many")));
        }
        Ok(Grid {
            dim,
            lower,
            upper,
            points,
        })
    }

    /// One-dimensional grid on `[a1, a2]`.
    pub fn line(a1: f64, a2: f64, points: usize) -> Result<Self> {
        Grid::new(1, &[(a1, a2)], points)
    }

    /// Three-dimensional grid with the same point count on every axis.
    pub fn cube(extents: [(f64, f64); 3], points: usize) -> Result<Self> {
        Grid::new(3, &extents, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.points {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Trapezoidal weights along one axis.
    pub fn axis_weights(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let mut w = vec![h; self.points];
        w[0] = 0.5 * h;
        w[self.points - 1] = 0.5 * h;
        w
    }

    /// Trapezoidal weight of every grid point, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.dim).map(|a| self.axis_weights(a)).collect();
        (0..self.len())
            .map(|idx| {
                let c = self.unravel(idx);
                (0..self.dim).map(|a| per_axis[a][c[a]]).product()
            })
            .collect()
    }

    /// Volume of one interior cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Row-major flat index; the first axis varies slowest.
    pub fn index(&self, c: [usize; 3]) -> usize {
        match self.dim {
            1 => c[0],
            _ => (c[0] * self.points + c[1]) * self.points + c[2],
        }
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        match self.dim {
            1 => [idx, 0, 0],
            _ => {
                let n = self.points;
                [idx / (n * n), (idx / n) % n, idx % n]
            }
        }
    }

    /// Cartesian position of a grid point; unused axes are zero.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let c = self.unravel(idx);
        let mut r = [0.0; 3];
        for (a, item) in r.iter_mut().enumerate().take(self.dim) {
            *item = self.coord(a, c[a]);
        }
        r
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.unravel(idx);
        (0..self.dim).any(|a| c[a] == 0 || c[a] + 1 == self.points)
    }

    /// Flat indices of all points strictly inside the box.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Locate a position on the grid, if it coincides with a grid point.
    pub fn locate(&self, r: [f64; 3]) -> Result<usize> {
        let mut c = [0usize; 3];
        for a in 0..self.dim {
            let t = (r[a] - self.lower[a]) / self.spacing(a);
            let i = t.round();
            if (t - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.points {
                return Err(Error::OffGrid(format!("{:?}", &r[..self.dim])));
            }
            c[a] = i as usize;
        }
        Ok(self.index(c))
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// What a field represents. Density fields must be real and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Density,
    Potential,
    Orbital,
    Generic,
}

/// Complex values sampled at every point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<C64>,
    kind: FieldKind,
}

impl Field {
    pub fn new(grid: Grid, kind: FieldKind, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if kind == FieldKind::Density {
            let scale = values.iter().map(|v| v.re.abs()).fold(1.0, f64::max);
            let tol = 1e-12 * scale;
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| v.im != 0.0 || v.re < -tol || !v.re.is_finite())
            {
                return Err(Error::InvalidField(format!(
                    "density must be real and non-negative; point {i} holds {v}"
                )));
            }
        }
        Ok(Field { grid, values, kind })
    }

    pub fn from_real(grid: Grid, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        Field::new(grid, kind, values.into_iter().map(C64::from).collect())
    }

    pub fn density(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Field::from_real(grid, FieldKind::Density, values)
    }

    pub fn zeros(grid: Grid, kind: FieldKind) -> Self {
        Field {
            grid,
            values: vec![C64::new(0.0, 0.0); grid.len()],
            kind,
        }
    }

    /// Sample a function of position.
    pub fn from_fn(grid: Grid, kind: FieldKind, f: impl Fn([f64; 3]) -> C64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Field::new(grid, kind, values)
    }

    pub fn from_real_fn(grid: Grid, kind: FieldKind, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        Field::from_fn(grid, kind, |r| C64::from(f(r)))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Same values, different tag. Fails if the new tag's invariants do not hold.
    pub fn with_kind(self, kind: FieldKind) -> Result<Self> {
        Field::new(self.grid, kind, self.values)
    }

    pub fn integrate(&self) -> C64 {
        integrate(self)
    }

    /// `∫ conj(self)·other` by trapezoidal quadrature.
    pub fn inner(&self, other: &Field) -> Result<C64> {
        self.grid.ensure_same(&other.grid)?;
        let w = self.grid.weights();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(&w)
            .map(|((a, b), w)| a.conj() * b * w)
            .sum())
    }

    pub fn scaled(&self, alpha: C64) -> Field {
        let kind = if alpha.im == 0.0 && alpha.re >= 0.0 {
            self.kind
        } else {
            demote(self.kind)
        };
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| v * alpha).collect(),
            kind,
        }
    }

    /// `alpha·self + beta·other`, tagged generic unless both tags agree.
    pub fn combine(&self, alpha: C64, other: &Field, beta: C64) -> Result<Field> {
        self.grid.ensure_same(&other.grid)?;
        let kind = if self.kind == other.kind && self.kind != FieldKind::Density {
            self.kind
        } else {
            FieldKind::Generic
        };
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
            kind,
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.combine(C64::from(1.0), other, C64::from(1.0))
    }

    pub fn map(&self, kind: FieldKind, f: impl Fn(C64) -> C64) -> Result<Field> {
        Field::new(self.grid, kind, self.values.iter().map(|&v| f(v)).collect())
    }
}

fn demote(kind: FieldKind) -> FieldKind {
    match kind {
        FieldKind::Density => FieldKind::Generic,
        k => k,
    }
}

/// Trapezoidal quadrature `∑ f(rᵢ)·wᵢ`.
pub fn integrate(f: &Field) -> C64 {
    let w = f.grid.weights();
    f.values.iter().zip(&w).map(|(v, w)| v * w).sum()
}

/// Second-order central-difference Laplacian with zero values outside the box.
pub fn laplacian(f: &Field) -> Result<Field> {
    let grid = f.grid;
    laplacian_values(&grid, &f.values).map(|values| Field {
        grid,
        values,
        kind: FieldKind::Generic,
    })
}

pub(crate) fn laplacian_values(grid: &Grid, values: &[C64]) -> Result<Vec<C64>> {
    let n = grid.points_per_axis();
    if n < 3 {
        return Err(Error::GridTooSmall(n));
    }
    let zero = C64::new(0.0, 0.0);
    let mut out = vec![zero; values.len()];
    for axis in 0..grid.dim() {
        let inv_h2 = 1.0 / grid.spacing(axis).powi(2);
        for (idx, o) in out.iter_mut().enumerate() {
            let c = grid.unravel(idx);
            let mut lo = c;
            let mut hi = c;
            let left = if c[axis] == 0 {
                zero
            } else {
                lo[axis] -= 1;
                values[grid.index(lo)]
            };
            let right = if c[axis] + 1 == n {
                zero
            } else {
                hi[axis] += 1;
                values[grid.index(hi)]
            };
            *o += (left - 2.0 * values[idx] + right) * inv_h2;
        }
    }
    Ok(out)
}

/// Functional form of the electron-electron interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    Coulomb3d,
    SoftCoulomb1d,
}

/// Pairwise interaction `w(r, r′)`, optionally scaled by a coupling strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionKernel {
    pub form: KernelForm,
    /// Softening length in bohr; only used by the 1D soft-Coulomb form.
    pub softening: f64,
    /// Coupling constant multiplying the kernel; 1 is the physical interaction.
    pub strength: f64,
}

impl InteractionKernel {
    pub fn coulomb_3d() -> Self {
        InteractionKernel {
            form: KernelForm::Coulomb3d,
            softening: 0.0,
            strength: 1.0,
        }
    }

    pub fn soft_coulomb_1d(softening: f64) -> Self {
        InteractionKernel {
            form: KernelForm::SoftCoulomb1d,
            softening,
            strength: 1.0,
        }
    }

    pub fn scaled(self, strength: f64) -> Self {
        InteractionKernel { strength, ..self }
    }

    pub fn native_dim(&self) -> usize {
        match self.form {
            KernelForm::Coulomb3d => 3,
            KernelForm::SoftCoulomb1d => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel strength must be finite and non-negative, got {}",
                self.strength
            )));
        }
        if self.form == KernelForm::SoftCoulomb1d
            && !(self.softening.is_finite() && self.softening > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "soft-Coulomb softening must be positive, got {}",
                self.softening
            )));
        }
        Ok(())
    }
}

/// Interaction between two points.
pub fn pair_kernel(kernel: &InteractionKernel, r: [f64; 3], r_prime: [f64; 3]) -> Result<f64> {
    kernel.validate()?;
    match kernel.form {
        KernelForm::SoftCoulomb1d => {
            let dx = r[0] - r_prime[0];
            Ok(kernel.strength / (dx * dx + kernel.softening * kernel.softening).sqrt())
        }
        KernelForm::Coulomb3d => {
            let d2: f64 = (0..3).map(|a| (r[a] - r_prime[a]).powi(2)).sum();
            if d2 == 0.0 {
                return Err(Error::CoincidentPoints);
            }
            Ok(kernel.strength / d2.sqrt())
        }
    }
}

/// Average of `1/r` over the sphere whose volume equals one grid cell.
pub fn coulomb_self_cell(cell_volume: f64) -> f64 {
    let radius = (3.0 * cell_volume / (4.0 * PI)).cbrt();
    1.5 / radius
}

/// Dense `w(rₚ, r_q)` over every pair of grid points.
///
/// The 3D Coulomb diagonal is replaced by the cell-averaged value from
/// [`coulomb_self_cell`].
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Grid,
    kernel: InteractionKernel,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn build(grid: &Grid, kernel: &InteractionKernel) -> Result<Self> {
        kernel.validate()?;
        if kernel.native_dim() != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "{:?} kernel used on a {}D grid",
                kernel.form,
                grid.dim()
            )));
        }
        let g = grid.len();
        if g.saturating_mul(g) > KERNEL_MATRIX_BUDGET {
            return Err(Error::ResourceGuard {
                what: "dense kernel matrix",
                required: (g as u128) * (g as u128),
                budget: KERNEL_MATRIX_BUDGET as u128,
            });
        }
        let points: Vec<[f64; 3]> = (0..g).map(|i| grid.point(i)).collect();
        let self_term = kernel.strength * coulomb_self_cell(grid.cell_volume());
        let data: Vec<f64> = (0..g)
            .into_par_iter()
            .flat_map_iter(|p| {
                let points = &points;
                (0..g).map(move |q| {
                    if p == q && kernel.form == KernelForm::Coulomb3d {
                        self_term
                    } else {
                        // Off-diagonal points never coincide on a uniform grid.
                        pair_kernel(kernel, points[p], points[q]).unwrap_or(self_term)
                    }
                })
            })
            .collect();
        Ok(KernelMatrix {
            grid: *grid,
            kernel: *kernel,
            data,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kernel(&self) -> &InteractionKernel {
        &self.kernel
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.data[p * self.grid.len() + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let g = self.grid.len();
        &self.data[p * g..(p + 1) * g]
    }

    /// `yₚ = ∑_q w(rₚ, r_q) x_q`; callers fold quadrature weights into `x`.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|p| self.row(p).iter().zip(x).map(|(w, v)| v * w).sum())
            .collect()
    }

    /// `∫ w(r, r′) f(r′) dr′` at every grid point.
    pub fn convolve(&self, f: &Field) -> Result<Vec<C64>> {
        self.grid.ensure_same(f.grid())?;
        let w = self.grid.weights();
        let x: Vec<C64> = f.values().iter().zip(&w).map(|(v, w)| v * w).collect();
        Ok(self.apply(&x))
    }
}

/// Serialize a field in the text dump format.
pub fn format_field(field: &Field) -> String {
    let grid = field.grid();
    let join = |xs: Vec<f64>| {
        xs.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let a1 = join((0..grid.dim()).map(|a| grid.lower(a)).collect());
    let a2 = join((0..grid.dim()).map(|a| grid.upper(a)).collect());
    let mut out = String::with_capacity(48 * field.values().len() + 80);
    let _ = writeln!(
        out,
        "# hyxc-field v1 dim={} n={} a1={} a2={}",
        grid.dim(),
        grid.points_per_axis(),
        a1,
        a2
    );
    for v in field.values() {
        let _ = writeln!(out, "{:.16e} {:.16e}", v.re, v.im);
    }
    out
}

/// Parse the text dump format produced by [`format_field`].
pub fn parse_field(text: &str, kind: FieldKind) -> std::result::Result<Field, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let rest = header
        .strip_prefix("# hyxc-field v1 ")
        .ok_or_else(|| format!("bad header: {header}"))?;
    let (mut dim, mut n, mut a1, mut a2) = (None, None, None, None);
    for tok in rest.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(|| format!("bad token {tok}"))?;
        let parse_list = |v: &str| -> std::result::Result<Vec<f64>, String> {
            v.split(',')
                .map(|x| x.parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        };
        match key {
            "dim" => dim = Some(val.parse::<usize>().map_err(|e| e.to_string())?),
            "n" => n = Some(val.parse::<usize>().map_err(|e| e.to_string())?),
            "a1" => a1 = Some(parse_list(val)?),
            "a2" => a2 = Some(parse_list(val)?),
            _ => return Err(format!("unknown header key {key}")),
        }
    }
    let (dim, n, a1, a2) = match (dim, n, a1, a2) {
        (Some(d), Some(n), Some(a1), Some(a2)) => (d, n, a1, a2),
        _ => return Err("incomplete header".into()),
    };
    if a1.len() != dim || a2.len() != dim {
        return Err("extent count does not match dim".into());
    }
    let extents: Vec<(f64, f64)> = a1.into_iter().zip(a2).collect();
    let grid = Grid::new(dim, &extents, n).map_err(|e| e.to_string())?;
    let mut values = Vec::with_capacity(grid.len());
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let re = it.next().ok_or_else(|| format!("line {}: empty", lineno + 2))?;
        let im = it.next().ok_or_else(|| format!("line {}: missing imaginary part", lineno + 2))?;
        values.push(C64::new(
            re.parse().map_err(|e| format!("line {}: {e}", lineno + 2))?,
            im.parse().map_err(|e| format!("line {}: {e}", lineno + 2))?,
        ));
    }
    Field::new(grid, kind, values).map_err(|e| e.to_string())
}

pub fn write_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_field(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: impl AsRef<Path>, kind: FieldKind) -> Result<Field> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field(&text, kind).map_err(|reason| Error::MalformedDump {
        path: path.to_path_buf(),
        reason,
    })
}
