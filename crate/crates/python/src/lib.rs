//! Python bindings: configuration, density-constrained bases, Hamiltonian
//! tensors with FCI/VQE solvers, the outer loop and the check suite.

use std::path::PathBuf;

use num_complex::Complex64 as C64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hyxc::config::RunConfig;
use hyxc::driver::{self, Setup};
use hyxc::integrals::{self, HamiltonianTensors};
use hyxc::second_quant::{self, build_qubit_hamiltonian};
use hyxc::vqe::{minimize_energy, VqeOptions};
use hyxc::zm::{auto_wavevectors, ZmOptions, ZmOrbitalSet};
use hyxc::{Field, FieldKind, Grid};

create_exception!(hyxc_py, HyxcError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    HyxcError::new_err(e.to_string())
}

fn json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(m: &nalgebra::DMatrix<C64>) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Number of ways to place `n` electrons in `m` spin orbitals.
#[pyfunction]
fn count_configurations(m: usize, n: usize) -> PyResult<u128> {
    let c = second_quant::count_configurations(m, n).map_err(err)?;
    c.to_string().parse().map_err(err)
}

/// `count_configurations` rendered as `1.26×10¹⁴`.
#[pyfunction]
fn format_count(m: usize, n: usize) -> PyResult<String> {
    Ok(second_quant::format_count(&second_quant::count_configurations(m, n).map_err(err)?))
}

/// Run configuration loaded from TOML.
#[pyclass(name = "Config", module = "hyxc_py")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn electrons(&self) -> usize {
        self.inner.system.electrons
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.basis.m
    }

    #[getter]
    fn output_directory(&self) -> PathBuf {
        self.inner.output.directory.clone()
    }

    #[setter]
    fn set_output_directory(&mut self, dir: PathBuf) {
        self.inner.output.directory = dir;
    }

    #[setter]
    fn set_max_iter(&mut self, n: usize) {
        self.inner.outer.max_iter = n;
    }

    /// Kohn–Sham SCF with the seed model; returns `(energy, density)`.
    fn dft(&self) -> PyResult<(f64, Vec<f64>)> {
        let setup = Setup::new(&self.inner).map_err(err)?;
        let out = setup
            .dft(&hyxc::ks::XcTerm::Model(self.inner.outer.seed_xc), None)
            .map_err(err)?;
        Ok((out.energies.total, out.state.density.real_parts()))
    }

    /// Tensors of the basis built on the seed Kohn–Sham density.
    fn tensors(&self) -> PyResult<Tensors> {
        let setup = Setup::new(&self.inner).map_err(err)?;
        let out = setup
            .dft(&hyxc::ks::XcTerm::Model(self.inner.outer.seed_xc), None)
            .map_err(err)?;
        let basis = setup.basis(&out.state.density).map_err(err)?;
        let (t, _) = setup.tensors(&basis).map_err(err)?;
        Ok(Tensors {
            inner: t,
            n_electrons: self.inner.system.electrons,
        })
    }

    /// Full outer loop; returns the report as a dict.
    fn run_loop<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| driver::run_outer_loop(&self.inner)).map_err(err)?;
        json(py, &report.to_json())
    }

    /// Invariant suite as `(name, value, tolerance, passed)` tuples.
    fn check(&self, py: Python<'_>) -> PyResult<Vec<(String, f64, f64, bool)>> {
        let setup = Setup::new(&self.inner).map_err(err)?;
        let results = py.detach(|| hyxc::check::run_checks(&setup)).map_err(err)?;
        Ok(results
            .into_iter()
            .map(|r| (r.name.to_string(), r.value, r.tolerance, r.passed))
            .collect())
    }
}

/// Density-constrained orbitals on a uniform 1D grid.
#[pyclass(name = "ZmBasis", module = "hyxc_py")]
struct ZmBasis {
    inner: ZmOrbitalSet,
}

#[pymethods]
impl ZmBasis {
    /// `density` is sampled on `points = len(density)` points spanning `[lower, upper]`.
    /// `wavevectors` defaults to `0, 1, −1, 2, …` of length `m`.
    #[new]
    #[pyo3(signature = (density, lower, upper, n_electrons, m=None, wavevectors=None))]
    fn new(
        density: Vec<f64>,
        lower: f64,
        upper: f64,
        n_electrons: usize,
        m: Option<usize>,
        wavevectors: Option<Vec<i32>>,
    ) -> PyResult<Self> {
        let grid = Grid::line(lower, upper, density.len()).map_err(err)?;
        let rho = Field::from_real(grid, FieldKind::Density, density).map_err(err)?;
        let ks = match wavevectors {
            Some(w) => w.into_iter().map(|k| [k, 0, 0]).collect(),
            None => auto_wavevectors(m.unwrap_or(n_electrons), 1),
        };
        let opts = ZmOptions {
            normalization_tol: None,
            ..ZmOptions::default()
        };
        Ok(ZmBasis {
            inner: ZmOrbitalSet::build(&rho, &ks, n_electrons, &opts).map_err(err)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn wavevectors(&self) -> Vec<i32> {
        self.inner.wavevectors.iter().map(|k| k[0]).collect()
    }

    fn gram_error(&self) -> PyResult<f64> {
        self.inner.gram_error().map_err(err)
    }

    fn orbital(&self, i: usize) -> PyResult<Vec<C64>> {
        self.inner
            .orbitals
            .get(i)
            .map(|f| f.values().to_vec())
            .ok_or_else(|| err(format!("orbital {i} out of range")))
    }

    fn kinetic_matrix(&self) -> Vec<Vec<C64>> {
        rows(&integrals::kinetic_matrix(&self.inner))
    }

    #[getter]
    fn basis_id(&self) -> String {
        format!("{:016x}", self.inner.basis_id())
    }
}

/// One- and two-body Hamiltonian tensors with an electron count.
#[pyclass(module = "hyxc_py")]
struct Tensors {
    inner: HamiltonianTensors,
    n_electrons: usize,
}

#[pymethods]
impl Tensors {
    /// Random tensors with physical symmetries.
    #[staticmethod]
    #[pyo3(signature = (m, n_electrons, seed=0))]
    fn random(m: usize, n_electrons: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensors {
            inner: HamiltonianTensors::random(m, &mut rng),
            n_electrons,
        }
    }

    /// Read a `hyxc tensors` dump.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (inner, meta) = integrals::read_tensors(&dir).map_err(err)?;
        Ok(Tensors {
            inner,
            n_electrons: meta.n_electrons,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        integrals::write_tensors(&dir, &self.inner, self.n_electrons).map_err(err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    fn kinetic(&self) -> Vec<Vec<C64>> {
        rows(&self.inner.t)
    }

    fn external(&self) -> Vec<Vec<C64>> {
        rows(&self.inner.v_ext)
    }

    fn interaction(&self, i: usize, j: usize, k: usize, l: usize) -> PyResult<C64> {
        let m = self.inner.m();
        if i.max(j).max(k).max(l) >= m {
            return Err(err(format!("index out of range for M = {m}")));
        }
        Ok(self.inner.v_ee.get(i, j, k, l))
    }

    fn symmetry_error(&self) -> f64 {
        self.inner.symmetry_error()
    }

    /// Jordan–Wigner Hamiltonian, one `re im word` line per term.
    fn qubit_hamiltonian(&self) -> PyResult<String> {
        Ok(build_qubit_hamiltonian(&self.inner).map_err(err)?.to_text())
    }

    /// Exact ground state; returns `(energy, rho1)`.
    fn fci(&self) -> PyResult<(f64, Vec<Vec<C64>>)> {
        let sol = hyxc::fci::solve_ground(&self.inner, self.n_electrons, hyxc::fci::DEFAULT_BASIS_CAP)
            .map_err(err)?;
        Ok((sol.ground_energy, rows(&sol.rdms.rho1)))
    }

    /// Variational minimization; returns a dict with energy, rho1, parameters
    /// and convergence data.
    #[pyo3(signature = (layers=2, restarts=5, seed=0, max_evals=40_000))]
    fn vqe<'py>(
        &self,
        py: Python<'py>,
        layers: usize,
        restarts: usize,
        seed: u64,
        max_evals: usize,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let opts = VqeOptions {
            layers,
            restarts,
            seed,
            max_evals,
            ..VqeOptions::default()
        };
        let r = py
            .detach(|| minimize_energy(&self.inner, self.n_electrons, &opts))
            .map_err(err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("energy", r.energy)?;
        d.set_item("rho1", rows(&r.rdms.rho1))?;
        d.set_item("parameters", r.ansatz.parameters.clone())?;
        d.set_item("converged", r.converged)?;
        d.set_item("evaluations", r.evaluations)?;
        d.set_item(
            "energy_from_rdms",
            hyxc::rdm::energy_from_rdms(&r.rdms, &self.inner).map_err(err)?,
        )?;
        Ok(d)
    }
}

#[pymodule]
fn hyxc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HyxcError", m.py().get_type::<HyxcError>())?;
    m.add_function(wrap_pyfunction!(count_configurations, m)?)?;
    m.add_function(wrap_pyfunction!(format_count, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<ZmBasis>()?;
    m.add_class::<Tensors>()?;
    Ok(())
}
