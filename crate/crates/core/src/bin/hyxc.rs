use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hyxc::check::run_checks;
use hyxc::config::RunConfig;
use hyxc::driver::{self, LoopStatus, Setup};
use hyxc::integrals::{read_tensors, write_tensors};
use hyxc::ks::XcTerm;
use hyxc::Error;

#[derive(Parser)]
#[command(name = "hyxc", version, about = "Hybrid quantum-classical exchange-correlation loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Kohn–Sham SCF with the seed exchange-correlation model.
    Dft(Common),
    /// Density-constrained orbitals from the `dft` density.
    Basis(Common),
    /// Second-quantized Hamiltonian tensors from the `dft` density.
    Tensors(Common),
    /// Variational minimization on the `tensors` dump.
    Vqe(Common),
    /// Exact diagonalization of a tensors dump.
    Fci {
        /// Run configuration; optional when `--tensors` is given.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Directory holding `t.bin`, `vext.bin`, `vee.bin`, `tensors.json`.
        #[arg(long)]
        tensors: Option<PathBuf>,
    },
    /// Full outer loop.
    Loop(Common),
    /// Invariant suite; exits nonzero if any check fails.
    Check {
        /// One or more run configurations.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> hyxc::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.directory = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Dft(c) => {
            let cfg = load(&c)?;
            let setup = Setup::new(&cfg)?;
            let out = setup.dft(&XcTerm::Model(cfg.outer.seed_xc), None).context("dft stage")?;
            driver::write_dft(&cfg.output.directory, &out)?;
            println!("converged: {}", out.converged);
            println!("E_KS: {:.12}", out.energies.total);
            println!("eigenvalues: {:?}", out.state.eigenvalues);
        }
        Command::Basis(c) => {
            let cfg = load(&c)?;
            let setup = Setup::new(&cfg)?;
            let rho = driver::read_density(&cfg.output.directory)?;
            let basis = setup.basis(&rho).context("basis stage")?;
            driver::write_basis(&cfg.output.directory, &basis)?;
            println!("basis_id: {:016x}", basis.basis_id());
            println!("gram_error: {:.3e}", basis.gram_error()?);
        }
        Command::Tensors(c) => {
            let cfg = load(&c)?;
            let setup = Setup::new(&cfg)?;
            let rho = driver::read_density(&cfg.output.directory)?;
            let basis = setup.basis(&rho).context("basis stage")?;
            let (tensors, _) = setup.tensors(&basis).context("tensors stage")?;
            write_tensors(&cfg.output.directory, &tensors, cfg.system.electrons)?;
            println!("M: {}", tensors.m());
            println!("symmetry_error: {:.3e}", tensors.symmetry_error());
        }
        Command::Vqe(c) => {
            let cfg = load(&c)?;
            let setup = Setup::new(&cfg)?;
            let tensors = driver::read_stage_tensors(&cfg.output.directory)?;
            let result = setup.vqe(&tensors).context("vqe stage")?;
            driver::write_vqe(&cfg.output.directory, &tensors, &result)?;
            println!("energy: {:.12}", result.energy);
            println!("converged: {}", result.converged);
        }
        Command::Fci { config, out, tensors } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let out_dir = out
                .or_else(|| cfg.as_ref().map(|c| c.output.directory.clone()))
                .unwrap_or_else(|| PathBuf::from("."));
            let dir = tensors.unwrap_or_else(|| out_dir.clone());
            let (t, meta) = read_tensors(&dir)?;
            let cap = cfg
                .as_ref()
                .map_or(hyxc::fci::DEFAULT_BASIS_CAP as u128, |c| c.outer.fci_cap as u128);
            let sol = hyxc::fci::solve_ground(&t, meta.n_electrons, cap).context("fci stage")?;
            driver::write_fci(&out_dir, &sol)?;
            println!("ground energy: {:.12}", sol.ground_energy);
        }
        Command::Loop(c) => {
            let cfg = load(&c)?;
            let report = driver::run_outer_loop(&cfg)?;
            for r in &report.records {
                println!(
                    "iter {}: E_KS {:.10} E_mb {:.10} E_xc {:.8} max|drho| {:.3e}",
                    r.outer_iter, r.ks.total, r.many_body_energy, r.e_xc, r.max_abs_delta_rho
                );
            }
            println!("status: {:?}", report.status);
            if let Some(f) = &report.failure {
                eprintln!("stage {:?} failed in iteration {}: {}", f.stage, f.outer_iter, f.message);
            }
            let dir = Path::new(&cfg.output.directory);
            println!("report: {}", dir.join(driver::REPORT_FILE).display());
            if report.status == LoopStatus::Error {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Check { configs } => {
            let mut failed = 0;
            for path in &configs {
                let cfg = RunConfig::load(path)?;
                let setup = Setup::new(&cfg)?;
                println!("# {}", path.display());
                for r in run_checks(&setup).with_context(|| format!("check suite on {}", path.display()))? {
                    println!("{r}");
                    failed += usize::from(!r.passed);
                }
            }
            if failed > 0 {
                println!("{failed} check(s) failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
