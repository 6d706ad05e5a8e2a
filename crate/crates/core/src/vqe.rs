//! Statevector simulation of the variational eigensolver: number-conserving
//! state preparation, energy minimization and RDM measurement.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrals::HamiltonianTensors;
use crate::rdm::RdmPair;
use crate::second_quant::{build_qubit_hamiltonian, number_operator, rdm_observables, OccupationVector, QubitOperator};
use crate::simplex::{nelder_mead, SimplexOptions};

/// Angles per two-mode block: mixing angle, mixing phase, phase on the upper
/// mode, and pair phase.
pub const PARAMS_PER_BLOCK: usize = 4;
/// Statevectors above this many qubits are refused.
pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl Statevector {
    pub fn basis_state(occ: OccupationVector) -> Result<Self> {
        let n = occ.m();
        if n > MAX_QUBITS {
            return Err(Error::ResourceGuard {
                what: "statevector qubits",
                required: n as u128,
                budget: MAX_QUBITS as u128,
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[occ.bits() as usize] = C64::new(1.0, 0.0);
        Ok(Statevector { n_qubits: n, amps })
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return Err(Error::DimensionMismatch(format!("{} amplitudes", amps.len())));
        }
        let n_qubits = amps.len().trailing_zeros() as usize;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("statevector norm {norm}")));
        }
        Ok(Statevector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Mean and variance of the particle number.
    pub fn number_moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut sq = 0.0;
        for (b, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            let n = b.count_ones() as f64;
            mean += p * n;
            sq += p * n * n;
        }
        (mean, sq - mean * mean)
    }

    /// Apply the two-mode block on modes `(p, p+1)`.
    fn apply_block(&mut self, p: usize, angles: &[f64]) {
        let (theta, phi, lambda, chi) = (angles[0], angles[1], angles[2], angles[3]);
        let (s, c) = theta.sin_cos();
        let e_phi = C64::from_polar(1.0, phi);
        let e_lambda = C64::from_polar(1.0, lambda);
        let e_pair = C64::from_polar(1.0, lambda + chi);
        let (lo, hi) = (1usize << p, 1usize << (p + 1));
        for b in 0..self.amps.len() {
            match (b & lo != 0, b & hi != 0) {
                (true, false) => {
                    let b2 = b ^ lo ^ hi;
                    let (a10, a01) = (self.amps[b], self.amps[b2]);
                    self.amps[b] = a10 * c - e_phi.conj() * a01 * s;
                    self.amps[b2] = (e_phi * a10 * s + a01 * c) * e_lambda;
                }
                (true, true) => self.amps[b] *= e_pair,
                _ => {}
            }
        }
    }
}

/// Brick-wall ansatz of number-conserving two-mode blocks on adjacent modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Ansatz {
    pub n_qubits: usize,
    pub n_layers: usize,
    pub reference: OccupationVector,
    pub parameters: Vec<f64>,
}

impl Ansatz {
    /// Zero angles on the lowest-`n` determinant.
    pub fn new(n_qubits: usize, n_electrons: usize, n_layers: usize) -> Result<Self> {
        let reference = OccupationVector::lowest(n_qubits, n_electrons)?;
        let mut a = Ansatz {
            n_qubits,
            n_layers,
            reference,
            parameters: vec![],
        };
        a.parameters = vec![0.0; a.parameter_count()];
        Ok(a)
    }

    /// Left mode of every block in application order, repeated per layer.
    ///
    /// Each layer starts with the sublayer containing the pair that straddles
    /// the highest occupied reference mode; starting with the other one would
    /// only apply phases to the reference determinant.
    pub fn blocks(&self) -> Vec<usize> {
        let pairs = self.n_qubits.saturating_sub(1);
        let first = self.reference.population().saturating_sub(1) % 2;
        let layer: Vec<usize> = (first..pairs)
            .step_by(2)
            .chain((1 - first..pairs).step_by(2))
            .collect();
        (0..self.n_layers).flat_map(|_| layer.iter().copied()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.n_layers * self.n_qubits.saturating_sub(1) * PARAMS_PER_BLOCK
    }

    pub fn with_parameters(&self, parameters: Vec<f64>) -> Result<Self> {
        let mut a = self.clone();
        a.parameters = parameters;
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        if self.parameters.len() != self.parameter_count() {
            return Err(Error::ParameterCount {
                expected: self.parameter_count(),
                actual: self.parameters.len(),
            });
        }
        Ok(())
    }
}

/// Reference determinant followed by every block.
pub fn prepare_state(ansatz: &Ansatz) -> Result<Statevector> {
    ansatz.check()?;
    prepare_with(ansatz, &ansatz.parameters)
}

fn prepare_with(ansatz: &Ansatz, params: &[f64]) -> Result<Statevector> {
    let mut psi = Statevector::basis_state(ansatz.reference)?;
    for (p, angles) in ansatz.blocks().into_iter().zip(params.chunks(PARAMS_PER_BLOCK)) {
        psi.apply_block(p, angles);
    }
    Ok(psi)
}

/// `⟨ψ|O|ψ⟩`.
pub fn expectation(op: &QubitOperator, psi: &Statevector) -> Result<C64> {
    if op.n_qubits() != psi.n_qubits {
        return Err(Error::DimensionMismatch(format!(
            "{}-qubit operator on a {}-qubit state",
            op.n_qubits(),
            psi.n_qubits
        )));
    }
    op.expectation(&psi.amps)
}

/// Measure every independent RDM entry and rebuild the symmetrized pair.
pub fn measure_rdms(psi: &Statevector, m: usize) -> Result<RdmPair> {
    let obs = rdm_observables(m)?;
    let mut entries = Vec::with_capacity(obs.len());
    for (entry, op) in &obs {
        entries.push((*entry, expectation(op, psi)?.re));
    }
    RdmPair::from_entries(m, &entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqeOptions {
    pub layers: usize,
    /// Additional runs started from perturbations of the best point.
    pub restarts: usize,
    pub spread_tol: f64,
    pub max_evals: usize,
    pub initial_step: f64,
    /// Standard deviation of the restart perturbation, radians.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for VqeOptions {
    fn default() -> Self {
        VqeOptions {
            layers: 2,
            restarts: 5,
            spread_tol: 1e-9,
            max_evals: 40_000,
            initial_step: 0.5,
            perturbation: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub iter: usize,
    pub energy: f64,
    pub simplex_spread: f64,
}

#[derive(Debug, Clone)]
pub struct VqeResult {
    pub ansatz: Ansatz,
    pub energy: f64,
    pub rdms: RdmPair,
    /// Whether the run that produced the best point met the spread criterion.
    pub converged: bool,
    pub runs: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

impl VqeResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("restart,iter,energy,simplex_spread\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{},{:.15e},{:.6e}", r.restart, r.iter, r.energy, r.simplex_spread);
        }
        s
    }

    pub fn parameters_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.ansatz.parameters)?)
    }
}

/// Minimize `⟨H⟩` over the ansatz angles for `n_electrons` particles.
pub fn minimize_energy(tensors: &HamiltonianTensors, n_electrons: usize, opts: &VqeOptions) -> Result<VqeResult> {
    let m = tensors.m();
    let h = build_qubit_hamiltonian(tensors)?.to_sparse()?;
    let ansatz = Ansatz::new(m, n_electrons, opts.layers)?;
    let objective = |x: &[f64]| -> f64 {
        prepare_with(&ansatz, x)
            .and_then(|psi| h.expectation(&psi.amps))
            .map(|e| e.re)
            .unwrap_or(f64::INFINITY)
    };
    let simplex = SimplexOptions {
        initial_step: opts.initial_step,
        spread_tol: opts.spread_tol,
        max_evals: opts.max_evals,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_par = ansatz.parameter_count();
    // a zero start sits on a stationary point of every phase angle
    let mut start: Vec<f64> = (0..n_par).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut runs = 0;
    for restart in 0..=opts.restarts {
        let out = nelder_mead(objective, &start, &simplex);
        runs += 1;
        evaluations += out.evals;
        trace.extend(out.trace.iter().map(|r| TraceRow {
            restart,
            iter: r.iter,
            energy: r.best,
            simplex_spread: r.spread,
        }));
        log::debug!("vqe run {restart}: E = {:.12} after {} evaluations", out.f, out.evals);
        let improved = match &best {
            Some((_, e, _)) => out.f < *e - opts.spread_tol,
            None => true,
        };
        if improved || best.as_ref().is_some_and(|(_, e, _)| out.f < *e) {
            best = Some((out.x.clone(), out.f, out.converged));
        }
        if !improved && restart > 0 {
            break;
        }
        let centre = &best.as_ref().unwrap().0;
        start = centre
            .iter()
            .map(|x| x + opts.perturbation * normal(&mut rng))
            .collect();
    }
    let (x, _, converged) = best.unwrap();
    let x: Vec<f64> = x.into_iter().map(wrap_angle).collect();
    let ansatz = ansatz.with_parameters(x)?;
    let psi = prepare_state(&ansatz)?;
    let energy = h.expectation(&psi.amps)?.re;
    let mut rdms = measure_rdms(&psi, m)?;
    rdms.basis_id = tensors.basis_id;
    if !converged {
        log::warn!("vqe did not reach the simplex spread tolerance; returning best point");
    }
    Ok(VqeResult {
        ansatz,
        energy,
        rdms,
        converged,
        runs,
        evaluations,
        trace,
    })
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box–Muller; rand_distr is not otherwise needed
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `⟨N̂⟩` via the qubit number operator, for cross-checks.
pub fn mean_particle_number(psi: &Statevector) -> Result<f64> {
    Ok(expectation(&number_operator(psi.n_qubits)?, psi)?.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fci::solve_ground;
    use crate::rdm::energy_from_rdms;

    #[test]
    fn zero_angles_give_reference() {
        let a = Ansatz::new(4, 2, 2).unwrap();
        assert_eq!(a.parameter_count(), 2 * 3 * PARAMS_PER_BLOCK);
        let psi = prepare_state(&a).unwrap();
        assert_eq!(psi, Statevector::basis_state(OccupationVector::lowest(4, 2).unwrap()).unwrap());
        assert!(matches!(
            a.with_parameters(vec![0.0; 3]),
            Err(Error::ParameterCount { expected: 24, actual: 3 })
        ));
    }

    #[test]
    fn single_rotation_closed_form() {
        let a = Ansatz::new(2, 1, 1).unwrap();
        let theta = 0.37;
        let psi = prepare_state(&a.with_parameters(vec![theta, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((psi.amplitudes()[0b01] - C64::from(theta.cos())).norm() < 1e-15);
        assert!((psi.amplitudes()[0b10] - C64::from(theta.sin())).norm() < 1e-15);
    }

    #[test]
    fn random_angles_conserve_number() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, n) in [(4, 2), (5, 3), (6, 1)] {
            let a = Ansatz::new(m, n, 3).unwrap();
            let p: Vec<f64> = (0..a.parameter_count()).map(|_| rng.gen_range(-PI..PI)).collect();
            let psi = prepare_state(&a.with_parameters(p).unwrap()).unwrap();
            let (mean, var) = psi.number_moments();
            assert!((mean - n as f64).abs() < 1e-12 && var.abs() < 1e-12);
            assert!((psi.norm() - 1.0).abs() < 1e-12);
            assert!((mean_particle_number(&psi).unwrap() - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn simple_expectations() {
        let psi = Statevector::basis_state(OccupationVector::lowest(3, 0).unwrap()).unwrap();
        assert_eq!(expectation(&QubitOperator::identity(3), &psi).unwrap(), C64::from(1.0));
        let z0 = QubitOperator::term(3, crate::second_quant::PauliWord::single(0, 'Z').unwrap(), C64::from(1.0));
        assert_eq!(expectation(&z0, &psi).unwrap(), C64::from(1.0));
        assert!(expectation(&QubitOperator::identity(2), &psi).is_err());
    }

    fn random_state(m: usize, n: usize, seed: u64) -> Statevector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Ansatz::new(m, n, 3).unwrap();
        let p: Vec<f64> = (0..a.parameter_count()).map(|_| rng.gen_range(-PI..PI)).collect();
        prepare_state(&a.with_parameters(p).unwrap()).unwrap()
    }

    #[test]
    fn measured_rdms_match_direct_application() {
        let psi = random_state(4, 2, 5);
        let measured = measure_rdms(&psi, 4).unwrap();
        let basis = crate::fci::enumerate_basis(4, 2, 100).unwrap();
        let coeffs: Vec<C64> = basis.iter().map(|v| psi.amplitudes()[v.bits() as usize]).collect();
        let direct = crate::fci::rdms_from_coefficients(4, &basis, &coeffs).unwrap();
        assert!(crate::linalg::max_abs_diff(&measured.rho1, &direct.rho1) < 1e-12);
        for (a, b) in measured.gamma2.as_slice().iter().zip(direct.gamma2.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        measured.check(2, 1e-10).unwrap();
    }

    #[test]
    fn determinant_rdms() {
        let psi = Statevector::basis_state(OccupationVector::from_occupations(&[1, 1, 0, 0]).unwrap()).unwrap();
        let r = measure_rdms(&psi, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j && i < 2 { 1.0 } else { 0.0 };
                assert!((r.rho1[(i, j)] - C64::from(e)).norm() < 1e-15);
            }
        }
        assert!((r.gamma2.get(0, 0, 1, 1) - C64::from(1.0)).norm() < 1e-15);
        assert!((r.gamma2.get(0, 1, 1, 0) + C64::from(1.0)).norm() < 1e-15);
        let d = r.diagnostics(2);
        assert!(d.max() < 1e-15);
    }

    #[test]
    fn trace_formula_equals_hamiltonian_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (m, n) in [(3, 1), (4, 2), (6, 3)] {
            let t = HamiltonianTensors::random(m, &mut rng);
            let psi = random_state(m, n, m as u64);
            let h = build_qubit_hamiltonian(&t).unwrap();
            let direct = expectation(&h, &psi).unwrap();
            assert!(direct.im.abs() < 1e-10);
            let rdms = measure_rdms(&psi, m).unwrap();
            assert!((energy_from_rdms(&rdms, &t).unwrap() - direct.re).abs() < 1e-10);
        }
    }

    #[test]
    fn two_level_minimum() {
        let mut t = HamiltonianTensors::zeros(2);
        t.t[(0, 0)] = C64::from(0.8);
        t.t[(1, 1)] = C64::from(-0.4);
        let r = minimize_energy(&t, 1, &VqeOptions::default()).unwrap();
        assert!((r.energy + 0.4).abs() < 1e-8, "{}", r.energy);
    }

    #[test]
    fn reaches_fci_on_random_four_mode_tensors() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let t = HamiltonianTensors::random(4, &mut rng);
            let fci = solve_ground(&t, 2, 100).unwrap();
            let r = minimize_energy(&t, 2, &VqeOptions::default()).unwrap();
            assert!(r.energy >= fci.ground_energy - 1e-10);
            assert!((r.energy - fci.ground_energy).abs() <= 1e-6, "seed {seed}: {} vs {}", r.energy, fci.ground_energy);
            assert!(r.runs <= 6);
            let rows: Vec<_> = r.trace.iter().filter(|row| row.restart == 0).collect();
            assert!(rows.windows(2).all(|w| w[1].energy <= w[0].energy));
        }
    }
}
