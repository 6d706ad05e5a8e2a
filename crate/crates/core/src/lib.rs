//! Classical simulator of a hybrid quantum/classical Kohn–Sham scheme.
//!
//! A real-space Kohn–Sham solver produces a density, a density-constrained
//! orbital basis turns it into a second-quantized Hamiltonian, a statevector
//! VQE (checked against exact diagonalization) measures reduced density
//! matrices, and those feed a corrected exchange-correlation operator back
//! into the next Kohn–Sham iteration.

pub mod check;
pub mod config;
pub mod driver;
pub mod error;
pub mod fci;
pub mod grid;
pub mod integrals;
pub mod ks;
pub mod linalg;
pub mod rdm;
pub mod second_quant;
pub mod simplex;
pub mod vqe;
pub mod xc;
pub mod zm;

pub use error::{Error, Result};
pub use grid::{Field, FieldKind, Grid, InteractionKernel, KernelForm};
