//! Outer loop: Kohn–Sham SCF, density-constrained basis, tensors, VQE, and
//! the many-body correction fed into the next Kohn–Sham problem. Each stage
//! is also exposed on its own so the CLI can run and persist it separately.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fci::{solve_ground, FciSolution};
use crate::grid::{read_field, write_field, Field, FieldKind, KernelMatrix};
use crate::integrals::{build_tensors, read_tensors, write_tensors, DerivativeKernels, HamiltonianTensors, TensorOptions};
use crate::ks::{format_scf_log, inner_scf_with, EnergyBreakdown, ScfOutcome, XcTerm};
use crate::rdm::energy_from_rdms;
use crate::second_quant::build_qubit_hamiltonian;
use crate::vqe::{minimize_energy, VqeResult};
use crate::xc::{build_correction, corrected_hamiltonian_matrix, CorrectedHamiltonian, CorrectionBundle, KsIngredients};
use crate::zm::ZmOrbitalSet;

pub const DENSITY_FILE: &str = "density.dat";
pub const REPORT_FILE: &str = "report.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const TIMING_FILE: &str = "timing.json";

/// Pipeline stage, used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Dft,
    Basis,
    Tensors,
    Vqe,
    Fci,
    Correction,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Converged,
    MaxIter,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub outer_iter: usize,
    pub message: String,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer_iter: usize,
    /// Kohn–Sham energy components of this iteration's SCF.
    pub ks: EnergyBreakdown,
    pub scf_converged: bool,
    pub scf_iterations: usize,
    /// Many-body energy from the VQE RDMs.
    pub many_body_energy: f64,
    pub fci_energy: Option<f64>,
    /// Exchange-correlation energy `ℰ − T_KS − E_ext − E_H` of this iteration.
    pub e_xc: f64,
    pub max_abs_delta_rho: f64,
    /// `(∫ (Δρ ρ^KS)²)^{1/2}`.
    pub delta_rho_norm: f64,
    /// `max |ρ^KS_k − ρ^KS_{k−1}|`; absent on the first iteration.
    pub density_change: Option<f64>,
    pub gram_error: f64,
    pub vqe_converged: bool,
    pub vqe_runs: usize,
    pub vqe_evaluations: usize,
    pub hermiticity_deviation: f64,
    pub hermiticity_relative: f64,
    pub basis_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub status: LoopStatus,
    pub records: Vec<IterationRecord>,
    pub failure: Option<StageFailure>,
}

impl LoopReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn iterations_csv(&self) -> String {
        let mut out = String::from(
            "outer_iter,t_ks,e_ext,e_hartree,e_xc_ks,e_ks_total,many_body_energy,fci_energy,e_xc,max_abs_delta_rho,delta_rho_norm,gram_error,vqe_converged,hermiticity_relative\n",
        );
        for r in &self.records {
            let fci = r.fci_energy.map(|e| format!("{e:.16e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                r.outer_iter,
                r.ks.t_ks,
                r.ks.e_ext,
                r.ks.e_hartree,
                r.ks.e_xc,
                r.ks.total,
                r.many_body_energy,
                fci,
                r.e_xc,
                r.max_abs_delta_rho,
                r.delta_rho_norm,
                r.gram_error,
                r.vqe_converged,
                r.hermiticity_relative
            );
        }
        out
    }
}

/// Wall-clock times, kept out of the report so that reruns compare equal.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub iterations: Vec<f64>,
    pub total: f64,
}

fn tagged<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, (Stage, Error)> {
    r.map_err(|e| (stage, e))
}

/// Shared inputs derived from the configuration.
pub struct Setup {
    pub config: RunConfig,
    pub v_ext: Field,
    pub kmat: KernelMatrix,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let kmat = KernelMatrix::build(&grid, &config.kernel())?;
        Ok(Setup {
            config: config.clone(),
            v_ext: config.external_potential()?,
            kmat,
        })
    }

    pub fn dft(&self, xc: &XcTerm, initial: Option<&Field>) -> Result<ScfOutcome> {
        let c = &self.config;
        inner_scf_with(&self.kmat, &self.v_ext, c.system.electrons, xc, &c.outer.scf, initial)
    }

    pub fn basis(&self, density: &Field) -> Result<ZmOrbitalSet> {
        let c = &self.config;
        ZmOrbitalSet::build(density, &c.wavevectors(), c.system.electrons, &c.zm_options()?)
    }

    pub fn tensors(&self, basis: &ZmOrbitalSet) -> Result<(HamiltonianTensors, DerivativeKernels)> {
        build_tensors(basis, &self.v_ext, &self.kmat, &TensorOptions::default())
    }

    pub fn vqe(&self, tensors: &HamiltonianTensors) -> Result<VqeResult> {
        minimize_energy(tensors, self.config.system.electrons, &self.config.vqe_options())
    }

    pub fn fci(&self, tensors: &HamiltonianTensors) -> Result<FciSolution> {
        solve_ground(tensors, self.config.system.electrons, self.config.outer.fci_cap as u128)
    }
}

/// Files written by the `dft` stage.
pub fn write_dft(dir: &Path, outcome: &ScfOutcome) -> Result<()> {
    create_dir(dir)?;
    write_field(dir.join(DENSITY_FILE), &outcome.state.density)?;
    write_field(dir.join("v_hartree.dat"), &outcome.v_hartree)?;
    write_field(dir.join("v_xc.dat"), &outcome.v_xc)?;
    write_text(&dir.join("scf.csv"), &format_scf_log(&outcome.log))?;
    let summary = serde_json::json!({
        "converged": outcome.converged,
        "iterations": outcome.log.len(),
        "energies": outcome.energies,
        "eigenvalues": outcome.state.eigenvalues,
    });
    write_text(&dir.join("dft.json"), &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn read_density(dir: &Path) -> Result<Field> {
    let path = dir.join(DENSITY_FILE);
    if !path.exists() {
        return Err(Error::MissingDump { path, producer: "dft" });
    }
    read_field(&path, FieldKind::Density)
}

/// Files written by the `basis` stage.
pub fn write_basis(dir: &Path, basis: &ZmOrbitalSet) -> Result<()> {
    create_dir(dir)?;
    basis.write_orbitals(dir, "zm")?;
    let summary = serde_json::json!({
        "basis_id": format!("{:016x}", basis.basis_id()),
        "wavevectors": basis.wavevectors,
        "n_electrons": basis.n_electrons,
        "gram_error": basis.gram_error()?,
        "constraint_error": basis.constraint_error(),
    });
    write_text(&dir.join("basis.json"), &serde_json::to_string_pretty(&summary).expect("json"))
}

/// Files written by the `vqe` stage.
pub fn write_vqe(dir: &Path, tensors: &HamiltonianTensors, result: &VqeResult) -> Result<()> {
    create_dir(dir)?;
    build_qubit_hamiltonian(tensors)?.write(&dir.join("qubit_hamiltonian.txt"))?;
    write_text(&dir.join("vqe_trace.csv"), &result.trace_csv())?;
    write_text(&dir.join("vqe_parameters.json"), &result.parameters_json()?)?;
    result.rdms.write(&dir.join("rdms.json"))?;
    let summary = serde_json::json!({
        "energy": result.energy,
        "energy_from_rdms": energy_from_rdms(&result.rdms, tensors)?,
        "converged": result.converged,
        "runs": result.runs,
        "evaluations": result.evaluations,
    });
    write_text(&dir.join("vqe.json"), &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn write_fci(dir: &Path, solution: &FciSolution) -> Result<()> {
    create_dir(dir)?;
    solution.rdms.write(&dir.join("fci_rdms.json"))?;
    let summary = serde_json::json!({
        "ground_energy": solution.ground_energy,
        "dimension": solution.basis.len(),
        "lowest_eigenvalues": solution.eigenvalues.iter().take(8).collect::<Vec<_>>(),
    });
    write_text(&dir.join("fci.json"), &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn read_stage_tensors(dir: &Path) -> Result<HamiltonianTensors> {
    Ok(read_tensors(dir)?.0)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn iteration_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("iter_{k}"))
}

struct IterationOutput {
    record: IterationRecord,
    density: Field,
    next_xc: XcTerm,
}

fn run_iteration(
    setup: &Setup,
    k: usize,
    xc: &XcTerm,
    previous: Option<&Field>,
) -> std::result::Result<IterationOutput, (Stage, Error)> {
    let c = &setup.config;
    let out = &c.output.directory;
    let dir = iteration_dir(out, k);

    let scf = tagged(Stage::Dft, setup.dft(xc, previous))?;
    if !scf.converged {
        warn!("outer iteration {k}: inner SCF not converged (residual {:.3e})", scf.residual());
    }
    if c.output.dump_fields {
        tagged(Stage::Output, write_dft(&dir, &scf))?;
    }

    let basis = tagged(Stage::Basis, setup.basis(&scf.state.density))?;
    let gram_error = tagged(Stage::Basis, basis.gram_error())?;
    if c.output.dump_fields {
        tagged(Stage::Output, write_basis(&dir, &basis))?;
    }

    let (tensors, kernels) = tagged(Stage::Tensors, setup.tensors(&basis))?;
    if c.output.dump_tensors {
        tagged(Stage::Output, write_tensors(&dir, &tensors, c.system.electrons))?;
    }

    let vqe = tagged(Stage::Vqe, setup.vqe(&tensors))?;
    if c.output.dump_fields {
        tagged(Stage::Output, write_vqe(&dir, &tensors, &vqe))?;
    }
    let many_body_energy = vqe.energy;

    let fci_energy = if c.outer.fci_check {
        let sol = tagged(Stage::Fci, setup.fci(&tensors))?;
        info!(
            "outer iteration {k}: VQE {:.10} FCI {:.10} gap {:.2e}",
            many_body_energy,
            sol.ground_energy,
            many_body_energy - sol.ground_energy
        );
        Some(sol.ground_energy)
    } else {
        None
    };

    let ingredients = KsIngredients {
        v_ext1: setup.v_ext.clone(),
        v_hartree: scf.v_hartree.clone(),
    };
    let bundle: CorrectionBundle = tagged(
        Stage::Correction,
        build_correction(&vqe.rdms, &basis, &kernels, &scf.state, &ingredients, many_body_energy),
    )?;
    let corrected: CorrectedHamiltonian = tagged(
        Stage::Correction,
        corrected_hamiltonian_matrix(&ingredients, &basis, &vqe.rdms.rho1, &bundle.vxc_loc, c.outer.hermiticity_abort),
    )?;
    tagged(Stage::Output, write_field(out.join(format!("vxc_loc_iter{k}.dat")), &bundle.vxc_loc))?;
    tagged(Stage::Output, write_field(out.join(format!("delta_rho_iter{k}.dat")), &bundle.delta_rho))?;

    let rho_ks = &scf.state.density;
    let norm = {
        let w = rho_ks.grid().weights();
        bundle
            .delta_rho
            .values()
            .iter()
            .zip(rho_ks.values())
            .zip(&w)
            .map(|((d, r), w)| (d.re * r.re).powi(2) * w)
            .sum::<f64>()
            .sqrt()
    };
    let density_change = previous.map(|p| {
        p.values()
            .iter()
            .zip(rho_ks.values())
            .map(|(a, b)| (a.re - b.re).abs())
            .fold(0.0, f64::max)
    });

    let record = IterationRecord {
        outer_iter: k,
        ks: scf.energies,
        scf_converged: scf.converged,
        scf_iterations: scf.log.len(),
        many_body_energy,
        fci_energy,
        e_xc: bundle.e_xc,
        max_abs_delta_rho: bundle.max_abs_delta_rho(),
        delta_rho_norm: norm,
        density_change,
        gram_error,
        vqe_converged: vqe.converged,
        vqe_runs: vqe.runs,
        vqe_evaluations: vqe.evaluations,
        hermiticity_deviation: corrected.deviation,
        hermiticity_relative: corrected.relative_deviation,
        basis_id: format!("{:016x}", basis.basis_id()),
    };
    let next_xc = XcTerm::Fixed {
        local: bundle.vxc_loc,
        operator: Some(corrected.nonlocal),
        energy: bundle.e_xc,
    };
    Ok(IterationOutput {
        record,
        density: scf.state.density,
        next_xc,
    })
}

/// Run the outer loop and persist the report. Stage errors end the loop and
/// are recorded in the report rather than returned; only failures to write
/// the report itself are returned as errors.
pub fn run_outer_loop(config: &RunConfig) -> Result<LoopReport> {
    let start = Instant::now();
    let out = config.output.directory.clone();
    create_dir(&out)?;
    let mut timing = Timing::default();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut failure = None;
    let mut status = LoopStatus::MaxIter;

    match Setup::new(config) {
        Err(e) => {
            failure = Some(StageFailure {
                stage: Stage::Setup,
                outer_iter: 0,
                message: e.to_string(),
            });
            status = LoopStatus::Error;
        }
        Ok(setup) => {
            let mut xc = XcTerm::Model(config.outer.seed_xc);
            let mut density: Option<Field> = None;
            for k in 1..=config.outer.max_iter {
                let t0 = Instant::now();
                match run_iteration(&setup, k, &xc, density.as_ref()) {
                    Ok(it) => {
                        let r = &it.record;
                        info!(
                            "outer iteration {k}: E_KS {:.10} E_mb {:.10} E_xc {:.6} max|drho| {:.3e}",
                            r.ks.total, r.many_body_energy, r.e_xc, r.max_abs_delta_rho
                        );
                        let converged = records.last().is_some_and(|prev: &IterationRecord| {
                            r.max_abs_delta_rho < config.outer.drho_tol
                                && (r.many_body_energy - prev.many_body_energy).abs() < config.outer.energy_tol
                        });
                        records.push(it.record);
                        timing.iterations.push(t0.elapsed().as_secs_f64());
                        xc = it.next_xc;
                        density = Some(it.density);
                        if converged {
                            status = LoopStatus::Converged;
                            break;
                        }
                    }
                    Err((stage, e)) => {
                        warn!("outer iteration {k} failed in {stage:?}: {e}");
                        failure = Some(StageFailure {
                            stage,
                            outer_iter: k,
                            message: e.to_string(),
                        });
                        status = LoopStatus::Error;
                        timing.iterations.push(t0.elapsed().as_secs_f64());
                        break;
                    }
                }
            }
        }
    }

    let report = LoopReport {
        status,
        records,
        failure,
    };
    write_text(&out.join(REPORT_FILE), &report.to_json())?;
    write_text(&out.join(ITERATIONS_FILE), &report.iterations_csv())?;
    timing.total = start.elapsed().as_secs_f64();
    write_text(&out.join(TIMING_FILE), &serde_json::to_string_pretty(&timing).expect("json"))?;
    Ok(report)
}
