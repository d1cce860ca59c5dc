//! Finite-temperature energies of the spin-1/2 XY chain from ensembles of
//! imaginary-time evolved autoregressive LSTM wavefunctions.
//!
//! The numerical core (`lattice`, `ansatz`, `grad`, `tdvp`, `signal`) is
//! generic over the floating point type; the ensemble pipeline and the exact
//! reference solutions work in `f64`. Aliases for the common instantiations
//! are exported at the crate root.

pub mod ansatz;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod grad;
pub mod io;
pub mod lattice;
pub(crate) mod linalg;
pub mod scalar;
pub mod signal;
pub mod snapshot;
pub mod tdvp;

pub use ansatz::{random_cps, ConditionalLogits, LstmShape};
pub use error::{Error, Result};
pub use lattice::{Boundary, SpinConfiguration};
pub use scalar::{Real, Scalar};

/// Double precision wavefunction.
pub type LstmWavefunction = ansatz::LstmWavefunction<f64>;
/// Single precision wavefunction.
pub type LstmWavefunction32 = ansatz::LstmWavefunction<f32>;
/// Double precision XY chain.
pub type XyChain = lattice::XyChain<f64>;
pub type XyChain32 = lattice::XyChain<f32>;
pub type StepRecord = tdvp::StepRecord<f64>;
pub type EvolverConfig = tdvp::EvolverConfig<f64>;
pub type Complex64 = num_complex::Complex<f64>;
