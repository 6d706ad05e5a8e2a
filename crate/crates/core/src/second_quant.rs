//! Occupation-number combinatorics, Pauli-string algebra and the
//! Jordan–Wigner map from fermionic operators to qubit operators.
//!
//! Qubit `q` is basis orbital `q`, and bit `q` of a statevector index is the
//! occupation `n_q`. Words print with qubit 0 leftmost.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrals::HamiltonianTensors;

/// Terms with smaller coefficients are dropped by [`QubitOperator::simplify`].
/// Terms per parallel work unit in [`QubitOperator::apply`].
const APPLY_CHUNK: usize = 16;

pub const PAULI_DROP_TOL: f64 = 1e-14;
/// Largest mode count representable by the bitmask encoding.
pub const MAX_MODES: usize = 63;

/// Exact binomial coefficient `C(m, n)`.
pub fn count_configurations(m: usize, n: usize) -> Result<BigUint> {
    if n > m {
        return Err(Error::InvalidArgument(format!("{n} particles in {m} modes")));
    }
    let k = n.min(m - n);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * BigUint::from(m - i) / BigUint::from(i + 1);
    }
    Ok(acc)
}

/// Three significant digits with a superscript power of ten, e.g. `1.26×10¹⁴`.
/// Values below 1000 print exactly.
pub fn format_count(n: &BigUint) -> String {
    let digits = n.to_string();
    if digits.len() <= 3 {
        return digits;
    }
    let mut exp = digits.len() - 1;
    let lead: u32 = digits[..4].parse().expect("decimal digits");
    let mut mantissa = (lead + 5) / 10;
    if mantissa == 1000 {
        mantissa = 100;
        exp += 1;
    }
    let sup: String = exp
        .to_string()
        .chars()
        .map(|c| ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'][c.to_digit(10).expect("digit") as usize])
        .collect();
    format!("{}.{:02}×10{sup}", mantissa / 100, mantissa % 100)
}

/// Occupation numbers of `m` modes; bit `i` is `n_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OccupationVector {
    bits: u64,
    m: usize,
}

impl OccupationVector {
    pub fn new(bits: u64, m: usize) -> Result<Self> {
        if m > MAX_MODES || (m < 64 && bits >> m != 0) {
            return Err(Error::InvalidArgument(format!("bit pattern {bits:#b} does not fit {m} modes")));
        }
        Ok(OccupationVector { bits, m })
    }

    pub fn from_occupations(occ: &[u8]) -> Result<Self> {
        let mut bits = 0u64;
        for (i, &n) in occ.iter().enumerate() {
            match n {
                0 => {}
                1 => bits |= 1 << i,
                _ => return Err(Error::InvalidArgument(format!("occupation {n} at mode {i}"))),
            }
        }
        Self::new(bits, occ.len())
    }

    /// Lowest `n` modes occupied.
    pub fn lowest(m: usize, n: usize) -> Result<Self> {
        if n > m {
            return Err(Error::InvalidArgument(format!("{n} particles in {m} modes")));
        }
        Self::new((1u64 << n) - 1, m)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn population(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn occupied(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn occupations(&self) -> Vec<u8> {
        (0..self.m).map(|i| self.occupied(i) as u8).collect()
    }
}

impl fmt::Display for OccupationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.m {
            f.write_str(if self.occupied(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A tensor product of single-qubit Paulis, encoded as X and Z masks:
/// qubit `q` carries `I` (0,0), `X` (1,0), `Z` (0,1) or `Y` (1,1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliWord {
    pub x: u64,
    pub z: u64,
}

impl PauliWord {
    pub const IDENTITY: PauliWord = PauliWord { x: 0, z: 0 };

    pub fn single(q: usize, op: char) -> Result<Self> {
        let bit = 1u64 << q;
        Ok(match op {
            'I' => PauliWord::IDENTITY,
            'X' => PauliWord { x: bit, z: 0 },
            'Y' => PauliWord { x: bit, z: bit },
            'Z' => PauliWord { x: 0, z: bit },
            _ => return Err(Error::InvalidArgument(format!("unknown Pauli '{op}'"))),
        })
    }

    pub fn parse(word: &str) -> Result<Self> {
        let mut w = PauliWord::IDENTITY;
        for (q, c) in word.chars().enumerate() {
            if q >= MAX_MODES {
                return Err(Error::InvalidArgument("Pauli word too long".into()));
            }
            let s = PauliWord::single(q, c)?;
            w.x |= s.x;
            w.z |= s.z;
        }
        Ok(w)
    }

    pub fn to_string(&self, m: usize) -> String {
        (0..m)
            .map(|q| match (self.x >> q & 1, self.z >> q & 1) {
                (0, 0) => 'I',
                (1, 0) => 'X',
                (0, 1) => 'Z',
                _ => 'Y',
            })
            .collect()
    }

    /// `self · other = i^e · word`; returns `(e mod 4, word)`.
    pub fn mul(&self, other: &PauliWord) -> (u32, PauliWord) {
        let w = PauliWord {
            x: self.x ^ other.x,
            z: self.z ^ other.z,
        };
        let e = (self.x & self.z).count_ones() + (other.x & other.z).count_ones() + 2 * (self.z & other.x).count_ones()
            + 3 * (w.x & w.z).count_ones();
        (e % 4, w)
    }

    /// `word |b⟩ = phase |b'⟩`.
    #[inline]
    pub fn apply_basis(&self, b: u64) -> (C64, u64) {
        let e = (self.x & self.z).count_ones() + 2 * (self.z & b).count_ones();
        (i_pow(e), b ^ self.x)
    }

    pub fn max_qubit(&self) -> Option<usize> {
        let all = self.x | self.z;
        (all != 0).then(|| 63 - all.leading_zeros() as usize)
    }
}

#[inline]
fn i_pow(e: u32) -> C64 {
    match e % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// A single Pauli string with its coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliString {
    pub word: PauliWord,
    pub coeff: C64,
}

/// Linear combination of Pauli words on `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitOperator {
    n_qubits: usize,
    terms: BTreeMap<PauliWord, C64>,
}

impl QubitOperator {
    pub fn zero(n_qubits: usize) -> Self {
        QubitOperator {
            n_qubits,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self::term(n_qubits, PauliWord::IDENTITY, C64::new(1.0, 0.0))
    }

    pub fn term(n_qubits: usize, word: PauliWord, coeff: C64) -> Self {
        let mut op = Self::zero(n_qubits);
        op.terms.insert(word, coeff);
        op
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = PauliString> + '_ {
        self.terms.iter().map(|(w, c)| PauliString { word: *w, coeff: *c })
    }

    pub fn coefficient(&self, word: &PauliWord) -> C64 {
        self.terms.get(word).copied().unwrap_or_default()
    }

    fn same_size(&self, other: &Self) -> Result<()> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {} qubits",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(())
    }

    pub fn add_term(&mut self, word: PauliWord, coeff: C64) {
        *self.terms.entry(word).or_default() += coeff;
    }

    pub fn add_scaled(&mut self, other: &Self, alpha: C64) -> Result<()> {
        self.same_size(other)?;
        for (w, c) in &other.terms {
            self.add_term(*w, c * alpha);
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        QubitOperator {
            n_qubits: self.n_qubits,
            terms: self.terms.iter().map(|(w, c)| (*w, c * alpha)).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_size(other)?;
        let mut out = Self::zero(self.n_qubits);
        for (wa, ca) in &self.terms {
            for (wb, cb) in &other.terms {
                let (e, w) = wa.mul(wb);
                out.add_term(w, ca * cb * i_pow(e));
            }
        }
        Ok(out)
    }

    /// Adjoint; Pauli words are Hermitian so only coefficients conjugate.
    pub fn adjoint(&self) -> Self {
        QubitOperator {
            n_qubits: self.n_qubits,
            terms: self.terms.iter().map(|(w, c)| (*w, c.conj())).collect(),
        }
    }

    /// Drop terms with `|c| < 1e-14`.
    pub fn simplify(mut self) -> Self {
        self.terms.retain(|_, c| c.norm() >= PAULI_DROP_TOL);
        self
    }

    /// Largest imaginary coefficient; zero for a Hermitian operator.
    pub fn hermiticity_error(&self) -> f64 {
        self.terms.values().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `O|ψ⟩`.
    pub fn apply(&self, psi: &[C64]) -> Result<Vec<C64>> {
        self.check_len(psi.len())?;
        let terms: Vec<_> = self.terms.iter().collect();
        // fixed chunks summed in order keep the result independent of scheduling
        let partials: Vec<Vec<C64>> = terms
            .par_chunks(APPLY_CHUNK)
            .map(|chunk| {
                let mut acc = vec![C64::new(0.0, 0.0); psi.len()];
                for (w, c) in chunk {
                    for (b, a) in psi.iter().enumerate() {
                        let (ph, b2) = w.apply_basis(b as u64);
                        acc[b2 as usize] += **c * ph * a;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for p in partials {
            for (x, y) in out.iter_mut().zip(p) {
                *x += y;
            }
        }
        Ok(out)
    }

    /// `⟨ψ|O|ψ⟩` without forming `O|ψ⟩`.
    pub fn expectation(&self, psi: &[C64]) -> Result<C64> {
        self.check_len(psi.len())?;
        let terms: Vec<_> = self.terms.iter().collect();
        Ok(terms
            .par_iter()
            .map(|(w, c)| {
                let s: C64 = psi
                    .iter()
                    .enumerate()
                    .map(|(b, a)| {
                        let (ph, b2) = w.apply_basis(b as u64);
                        psi[b2 as usize].conj() * ph * a
                    })
                    .sum();
                *c * s
            })
            .collect::<Vec<C64>>()
            .into_iter()
            .sum())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if self.n_qubits > 30 || len != 1usize << self.n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "statevector of length {len} for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Dense `2^M × 2^M` matrix.
    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        let dim = 1usize
            .checked_shl(self.n_qubits as u32)
            .filter(|_| self.n_qubits <= 14)
            .ok_or(Error::ResourceGuard {
                what: "dense qubit-operator matrix (qubits)",
                required: self.n_qubits as u128,
                budget: 14,
            })?;
        let mut out = DMatrix::zeros(dim, dim);
        for (w, c) in &self.terms {
            for b in 0..dim {
                let (ph, b2) = w.apply_basis(b as u64);
                out[(b2 as usize, b)] += c * ph;
            }
        }
        Ok(out)
    }

    /// Text dump, one `coeff_re coeff_im word` line per term.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (w, c) in &self.terms {
            s.push_str(&format!("{} {} {}\n", c.re, c.im, w.to_string(self.n_qubits)));
        }
        s
    }

    pub fn parse_text(text: &str, n_qubits: usize) -> Result<Self> {
        let mut op = Self::zero(n_qubits);
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::InvalidArgument(format!("operator line {}: '{line}'", ln + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[2].len() != n_qubits {
                return Err(bad());
            }
            let re: f64 = parts[0].parse().map_err(|_| bad())?;
            let im: f64 = parts[1].parse().map_err(|_| bad())?;
            op.add_term(PauliWord::parse(parts[2])?, C64::new(re, im));
        }
        Ok(op)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Compressed-sparse-row matrix of a qubit operator, for repeated
/// expectation values on statevectors.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn expectation(&self, psi: &[C64]) -> Result<C64> {
        if psi.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "statevector of length {} for a {}-dimensional operator",
                psi.len(),
                self.dim
            )));
        }
        let mut s = C64::new(0.0, 0.0);
        for (r, a) in psi.iter().enumerate() {
            let row: C64 = (self.indptr[r]..self.indptr[r + 1])
                .map(|k| self.values[k] * psi[self.indices[k]])
                .sum();
            s += a.conj() * row;
        }
        Ok(s)
    }
}

impl QubitOperator {
    pub fn to_sparse(&self) -> Result<SparseOperator> {
        if self.n_qubits > 24 {
            return Err(Error::ResourceGuard {
                what: "sparse qubit-operator matrix (qubits)",
                required: self.n_qubits as u128,
                budget: 24,
            });
        }
        let dim = 1usize << self.n_qubits;
        let mut rows: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); dim];
        for (w, c) in &self.terms {
            for b in 0..dim {
                let (ph, b2) = w.apply_basis(b as u64);
                *rows[b2 as usize].entry(b).or_default() += c * ph;
            }
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (col, v) in row {
                if v.norm() >= PAULI_DROP_TOL {
                    indices.push(col);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(SparseOperator {
            dim,
            indptr,
            indices,
            values,
        })
    }
}

/// Jordan–Wigner image of `a_p†` (`dagger`) or `a_p`.
pub fn jordan_wigner(mode: usize, dagger: bool, m: usize) -> Result<QubitOperator> {
    if mode >= m || m > MAX_MODES {
        return Err(Error::ModeOutOfRange { mode, m });
    }
    let string = (1u64 << mode) - 1;
    let x = PauliWord {
        x: 1 << mode,
        z: string,
    };
    let y = PauliWord {
        x: 1 << mode,
        z: string | 1 << mode,
    };
    let sign = if dagger { -1.0 } else { 1.0 };
    let mut op = QubitOperator::zero(m);
    op.add_term(x, C64::new(0.5, 0.0));
    op.add_term(y, C64::new(0.0, 0.5 * sign));
    Ok(op)
}

/// `a_i† a_j`.
pub fn excitation(i: usize, j: usize, m: usize) -> Result<QubitOperator> {
    Ok(jordan_wigner(i, true, m)?.mul(&jordan_wigner(j, false, m)?)?.simplify())
}

/// `N̂ = Σ_i a_i† a_i`.
pub fn number_operator(m: usize) -> Result<QubitOperator> {
    let mut n = QubitOperator::zero(m);
    for i in 0..m {
        n.add_scaled(&excitation(i, i, m)?, C64::new(1.0, 0.0))?;
    }
    Ok(n.simplify())
}

fn hermiticity_tol(t: &HamiltonianTensors) -> f64 {
    let scale = t.one_body().iter().map(|x| x.norm()).fold(t.v_ee.max_abs(), f64::max);
    1e-10 * scale.max(1.0)
}

/// `H = Σ h_ij a_i†a_j + ½ Σ v_ijkl a_i†a_k†a_l a_j`, mapped and simplified.
pub fn build_qubit_hamiltonian(tensors: &HamiltonianTensors) -> Result<QubitOperator> {
    tensors.check_hermitian(hermiticity_tol(tensors))?;
    let m = tensors.m();
    let h = tensors.one_body();
    let mut e = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            e.push(excitation(i, j, m)?);
        }
    }
    let mut op = QubitOperator::zero(m);
    for i in 0..m {
        for j in 0..m {
            op.add_scaled(&e[i * m + j], h[(i, j)])?;
        }
    }
    // a_i†a_k†a_l a_j = E_ij E_kl − δ_jk E_il
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let v = tensors.v_ee.get(i, j, k, l);
                    if v.norm() == 0.0 || i == k || j == l {
                        continue;
                    }
                    let half = v * 0.5;
                    op.add_scaled(&e[i * m + j].mul(&e[k * m + l])?, half)?;
                    if j == k {
                        op.add_scaled(&e[i * m + l], -half)?;
                    }
                }
            }
        }
    }
    let op = op.simplify();
    let herm = op.hermiticity_error();
    if herm > hermiticity_tol(tensors) {
        return Err(Error::NotHermitian {
            what: "qubit Hamiltonian",
            deviation: herm,
        });
    }
    // imaginary round-off on Hermitian input is noise
    Ok(QubitOperator {
        n_qubits: m,
        terms: op.terms.into_iter().map(|(w, c)| (w, C64::new(c.re, 0.0))).collect(),
    }
    .simplify())
}

/// What an RDM observable measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdmEntry {
    /// Real part of `ρ_ij`, `i ≤ j`.
    RhoRe(usize, usize),
    /// Imaginary part of `ρ_ij`, `i < j`.
    RhoIm(usize, usize),
    /// Real part of `Γ_ijkl`, `i < k`, `j < l`.
    GammaRe(usize, usize, usize, usize),
    /// Imaginary part of `Γ_ijkl`.
    GammaIm(usize, usize, usize, usize),
}

impl fmt::Display for RdmEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RdmEntry::RhoRe(i, j) => write!(f, "re rho[{i},{j}]"),
            RdmEntry::RhoIm(i, j) => write!(f, "im rho[{i},{j}]"),
            RdmEntry::GammaRe(i, j, k, l) => write!(f, "re gamma[{i},{j},{k},{l}]"),
            RdmEntry::GammaIm(i, j, k, l) => write!(f, "im gamma[{i},{j},{k},{l}]"),
        }
    }
}

/// Hermitian observables whose expectations are the independent RDM entries.
///
/// `ρ` is Hermitian, so `i ≤ j` real parts and `i < j` imaginary parts
/// suffice. `Γ_ijkl = ⟨a_i†a_k†a_l a_j⟩` is antisymmetric in `(i, k)` and in
/// `(j, l)` and Hermitian as a matrix over the pairs `(i<k)`, `(j<l)`.
pub fn rdm_observables(m: usize) -> Result<Vec<(RdmEntry, QubitOperator)>> {
    if m == 0 {
        return Err(Error::InvalidArgument("no modes".into()));
    }
    let half = C64::new(0.5, 0.0);
    let minus_half_i = C64::new(0.0, -0.5);
    let hermitian_parts = |op: &QubitOperator| -> Result<(QubitOperator, QubitOperator)> {
        let adj = op.adjoint();
        let mut re = op.scaled(half);
        re.add_scaled(&adj, half)?;
        let mut im = op.scaled(minus_half_i);
        im.add_scaled(&adj, -minus_half_i)?;
        Ok((re.simplify(), im.simplify()))
    };
    let mut out = Vec::new();
    for i in 0..m {
        for j in i..m {
            let (re, im) = hermitian_parts(&excitation(i, j, m)?)?;
            out.push((RdmEntry::RhoRe(i, j), re));
            if i < j {
                out.push((RdmEntry::RhoIm(i, j), im));
            }
        }
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let a: Vec<QubitOperator> = (0..m).map(|p| jordan_wigner(p, false, m)).collect::<Result<_>>()?;
    let ad: Vec<QubitOperator> = (0..m).map(|p| jordan_wigner(p, true, m)).collect::<Result<_>>()?;
    for (pi, &(i, k)) in pairs.iter().enumerate() {
        let create = ad[i].mul(&ad[k])?.simplify();
        for &(j, l) in &pairs[pi..] {
            let op = create.mul(&a[l].mul(&a[j])?.simplify())?.simplify();
            let (re, im) = hermitian_parts(&op)?;
            out.push((RdmEntry::GammaRe(i, j, k, l), re));
            if (i, k) != (j, l) {
                out.push((RdmEntry::GammaIm(i, j, k, l), im));
            }
        }
    }
    Ok(out)
}
