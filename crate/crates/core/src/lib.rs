//! Partial projected ensembles (PPEs) for kicked Ising circuits and the
//! phenomenological l-bit model.
//!
//! A chain of qubits is split into three contiguous regions `R | E | S`.
//! `S` is measured projectively, `E` is discarded, and the conditional mixed
//! states on `R` form the ensemble. The crate provides
//!
//! * dense statevector primitives ([`state`], [`linalg`]),
//! * Floquet kicked Ising dynamics and lightcone predicates ([`circuits`]),
//! * ensemble construction, moments and fluctuation measures ([`ppe`]),
//! * probability-of-probabilities histograms and reference laws ([`pop`]),
//! * the l-bit model with closed-form ensembles ([`lbit`]),
//! * a config-driven sweep runner with onset and collapse fits
//!   ([`experiments`]).
//!
//! Basis convention: site 0 is the most significant bit of a basis index and
//! bit value 0 is spin up (`Z = +1`).

pub mod circuits;
pub mod error;
pub mod experiments;
pub mod lbit;
pub mod linalg;
pub mod pop;
pub mod ppe;
pub mod quad;
pub mod state;

pub use num_complex::Complex64 as C64;

pub use circuits::{
    evolve, floquet_step, lightcone_onset, KickedIsingParams, ModelFamily, RegimePreset,
};
pub use error::{Error, Result};
pub use lbit::{build_lbit, LBitHamiltonian};
pub use linalg::CMatrix;
pub use pop::{Binning, PoPHistogram, ReferenceDensity};
pub use ppe::{build_ppe, EnsembleMoment, PartialProjectedEnsemble};
pub use state::{
    DensityMatrix, MeasurementBasis, ProductStateSpec, PureState, SiteBasis, Tripartition,
};
