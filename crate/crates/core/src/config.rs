//! Run configuration, read from TOML with flat dotted keys
//! (`system.dim = 1`, `loop.max_iter = 4`, ...).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, FieldKind, Grid, InteractionKernel, KernelForm};
use crate::ks::{ScfSettings, XcModel};
use crate::vqe::VqeOptions;
use crate::xc::DEFAULT_HERMITICITY_ABORT;
use crate::zm::{auto_wavevectors, AxisOrder, ZmOptions};

/// Default upper bound on the number of spin orbitals (qubits).
pub const DEFAULT_QUBIT_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub vqe: VqeConfig,
    #[serde(default, rename = "loop")]
    pub outer: LoopConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dim: usize,
    /// `[lower, upper]` per axis; a single pair is reused for every axis.
    #[serde(rename = "box")]
    pub extents: Vec<[f64; 2]>,
    pub points: usize,
    pub electrons: usize,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub interaction: InteractionSpec,
}

/// Named external potential forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `v = 0` (particle in a box).
    Zero,
    /// `v = ½ω²|r − c|²`.
    Harmonic {
        #[serde(default = "one")]
        omega: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `v = −Z / √(|r − c|² + a²)`.
    SoftCoulomb {
        charge: f64,
        #[serde(default = "one")]
        softening: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `v = −D exp(−|r − c|² / 2σ²)`.
    Gaussian {
        depth: f64,
        width: f64,
        #[serde(default)]
        center: [f64; 3],
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionForm {
    SoftCoulomb,
    Coulomb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    pub kind: InteractionForm,
    #[serde(default = "one")]
    pub softening: f64,
    /// Coupling strength; 0 switches the interaction off.
    #[serde(default = "one")]
    pub strength: f64,
}

impl Default for InteractionSpec {
    fn default() -> Self {
        InteractionSpec {
            kind: InteractionForm::SoftCoulomb,
            softening: 1.0,
            strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub m: usize,
    /// Explicit integer wavevectors; automatic ordering when absent.
    #[serde(default)]
    pub wavevectors: Option<Vec<[i32; 3]>>,
    /// Axis roles for the 3D phase construction, e.g. `"xyz"`.
    #[serde(default)]
    pub axes: Option<String>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            m: 4,
            wavevectors: None,
            axes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqeConfig {
    pub layers: usize,
    pub max_evals: usize,
    pub restarts: usize,
    pub spread_tol: f64,
    pub initial_step: f64,
    pub perturbation: f64,
    pub seed: u64,
    pub qubit_cap: usize,
}

impl Default for VqeConfig {
    fn default() -> Self {
        let d = VqeOptions::default();
        VqeConfig {
            layers: d.layers,
            max_evals: d.max_evals,
            restarts: d.restarts,
            spread_tol: d.spread_tol,
            initial_step: d.initial_step,
            perturbation: d.perturbation,
            seed: 0,
            qubit_cap: DEFAULT_QUBIT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub max_iter: usize,
    pub drho_tol: f64,
    pub energy_tol: f64,
    pub seed_xc: XcModel,
    pub scf: ScfSettings,
    /// Abort when the relative Hermitization deviation of the corrected
    /// Hamiltonian exceeds this.
    pub hermiticity_abort: f64,
    /// Cross-check every iteration against exact diagonalization.
    pub fci_check: bool,
    pub fci_cap: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iter: 4,
            drho_tol: 1e-6,
            energy_tol: 1e-8,
            seed_xc: XcModel::None,
            scf: ScfSettings::default(),
            hermiticity_abort: DEFAULT_HERMITICITY_ABORT,
            fci_check: true,
            fci_cap: crate::fci::DEFAULT_BASIS_CAP as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Per-iteration field dumps (densities, potentials, orbitals).
    pub dump_fields: bool,
    /// Per-iteration tensor dumps.
    pub dump_tensors: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            dump_fields: true,
            dump_tensors: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let s = &self.system;
        if s.dim != 1 && s.dim != 3 {
            return bad(format!("system.dim must be 1 or 3, got {}", s.dim));
        }
        if s.extents.len() != 1 && s.extents.len() != s.dim {
            return bad(format!("system.box needs 1 or {} [lower, upper] pairs", s.dim));
        }
        if s.electrons == 0 {
            return bad("system.electrons must be positive".into());
        }
        let m = self.basis.m;
        if s.electrons > m {
            return bad(format!("system.electrons = {} exceeds basis.m = {m}", s.electrons));
        }
        if m > self.vqe.qubit_cap {
            return bad(format!("basis.m = {m} exceeds vqe.qubit_cap = {}", self.vqe.qubit_cap));
        }
        if let Some(wv) = &self.basis.wavevectors {
            if wv.len() != m {
                return bad(format!("basis.wavevectors has {} entries, basis.m = {m}", wv.len()));
            }
        }
        let positive = [
            ("vqe.spread_tol", self.vqe.spread_tol),
            ("vqe.initial_step", self.vqe.initial_step),
            ("loop.drho_tol", self.outer.drho_tol),
            ("loop.energy_tol", self.outer.energy_tol),
            ("loop.scf.tol", self.outer.scf.tol),
            ("loop.scf.mixing", self.outer.scf.mixing),
            ("loop.hermiticity_abort", self.outer.hermiticity_abort),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.outer.scf.mixing > 1.0 {
            return bad("loop.scf.mixing must not exceed 1".into());
        }
        if self.vqe.layers == 0 || self.vqe.max_evals == 0 {
            return bad("vqe.layers and vqe.max_evals must be positive".into());
        }
        if let Some(a) = &self.basis.axes {
            AxisOrder::parse(a).map_err(|e| Error::Config(format!("basis.axes: {e}")))?;
        }
        let kernel = self.kernel();
        if kernel.native_dim() != s.dim {
            return bad(format!("{:?} interaction is not available in {}D", self.system.interaction.kind, s.dim));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let s = &self.system;
        let extents: Vec<(f64, f64)> = (0..s.dim)
            .map(|a| {
                let e = s.extents[a.min(s.extents.len() - 1)];
                (e[0], e[1])
            })
            .collect();
        Grid::new(s.dim, &extents, s.points).map_err(|e| Error::Config(format!("system grid: {e}")))
    }

    pub fn kernel(&self) -> InteractionKernel {
        let i = &self.system.interaction;
        let k = match i.kind {
            InteractionForm::SoftCoulomb => InteractionKernel::soft_coulomb_1d(i.softening),
            InteractionForm::Coulomb => InteractionKernel {
                form: KernelForm::Coulomb3d,
                softening: 0.0,
                strength: 1.0,
            },
        };
        k.scaled(i.strength)
    }

    pub fn external_potential(&self) -> Result<Field> {
        let grid = self.grid()?;
        let dim = grid.dim();
        let r2 = move |r: [f64; 3], c: [f64; 3]| (0..dim).map(|a| (r[a] - c[a]).powi(2)).sum::<f64>();
        match self.system.potential.clone() {
            PotentialSpec::Zero => Ok(Field::zeros(grid, FieldKind::Potential)),
            PotentialSpec::Harmonic { omega, center } => {
                Field::from_real_fn(grid, FieldKind::Potential, |r| 0.5 * omega * omega * r2(r, center))
            }
            PotentialSpec::SoftCoulomb {
                charge,
                softening,
                center,
            } => Field::from_real_fn(grid, FieldKind::Potential, |r| {
                -charge / (r2(r, center) + softening * softening).sqrt()
            }),
            PotentialSpec::Gaussian { depth, width, center } => Field::from_real_fn(grid, FieldKind::Potential, |r| {
                -depth * (-r2(r, center) / (2.0 * width * width)).exp()
            }),
        }
    }

    pub fn wavevectors(&self) -> Vec<[i32; 3]> {
        self.basis
            .wavevectors
            .clone()
            .unwrap_or_else(|| auto_wavevectors(self.basis.m, self.system.dim))
    }

    pub fn zm_options(&self) -> Result<ZmOptions> {
        let mut opts = ZmOptions::default();
        if let Some(a) = &self.basis.axes {
            opts.axes = AxisOrder::parse(a)?;
        }
        Ok(opts)
    }

    pub fn vqe_options(&self) -> VqeOptions {
        let v = &self.vqe;
        VqeOptions {
            layers: v.layers,
            restarts: v.restarts,
            spread_tol: v.spread_tol,
            max_evals: v.max_evals,
            initial_step: v.initial_step,
            perturbation: v.perturbation,
            seed: v.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO: &str = r#"
system.dim = 1
system.box = [[-8.0, 8.0]]
system.points = 161
system.electrons = 2
system.potential.kind = "soft_coulomb"
system.potential.charge = 2.0
basis.m = 4
loop.max_iter = 3
loop.scf.mixing = 0.5
loop.scf.tol = 1e-9
loop.scf.max_iter = 200
"#;

    #[test]
    fn parses_flat_dotted_keys_with_defaults() {
        let c = RunConfig::from_toml(DEMO).unwrap();
        assert_eq!(c.grid().unwrap().len(), 161);
        assert_eq!(c.outer.max_iter, 3);
        assert_eq!(c.vqe.seed, 0);
        assert_eq!(c.vqe.qubit_cap, 12);
        assert_eq!(c.wavevectors(), vec![[0, 0, 0], [1, 0, 0], [-1, 0, 0], [2, 0, 0]]);
        let v = c.external_potential().unwrap();
        assert!((v.values()[80].re + 2.0).abs() < 1e-15);
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_invalid_configs() {
        for (edit, needle) in [
            ("basis.m = 13\nvqe.qubit_cap = 12", "qubit_cap"),
            ("basis.m = 1", "exceeds basis.m"),
            ("loop.drho_tol = 0.0", "drho_tol"),
            ("loop.bogus = 1", "bogus"),
            ("system.interaction.kind = \"coulomb\"", "not available"),
        ] {
            let text = DEMO.replace("basis.m = 4", "") + edit + "\n";
            let text = if edit.starts_with("basis.m") { text } else { text + "basis.m = 4\n" };
            match RunConfig::from_toml(&text) {
                Err(Error::Config(msg)) => assert!(msg.contains(needle), "{msg}"),
                other => panic!("{edit}: {other:?}"),
            }
        }
    }
}
