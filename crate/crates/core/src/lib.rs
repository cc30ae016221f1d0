//! Spectral asymptotics of the continuum random tree, computed through its
//! representation as a random self-similar dendrite and, independently,
//! through trees cut out of sampled Brownian excursions.

pub mod asymptotics;
pub mod cascade;
pub mod dendrite;
pub mod error;
pub mod excursion;
pub mod format;
pub mod forms;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod spectrum;
pub mod stats;

pub use cascade::{Address, CascadeTree, MassTriple, PerturbationTable, GAMMA, HEIGHT_SCALE};
pub use error::{Error, Result};
pub use scalar::{Coord, Real};

/// Resistance network with `f64` scalars.
pub type Network = forms::ResistanceNetwork<f64>;
/// Counting pencil with `f64` scalars.
pub type Pencil = spectrum::Pencil<f64>;
/// Bracketing check with `f64` scalars.
pub type Bracketing = spectrum::Bracketing<f64>;
/// η hierarchy with `f64` scalars.
pub type EtaHierarchy = spectrum::EtaHierarchy<f64>;

/// Default cap on the number of cells (or cells × replicas) a run may allocate.
pub const DEFAULT_CELL_BUDGET: u128 = 150_000_000;

/// Cell budget, overridable through `CRT_SPECTRA_BUDGET`.
pub fn cell_budget() -> u128 {
    std::env::var("CRT_SPECTRA_BUDGET")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_CELL_BUDGET)
}
