//! Matrix product state simulation of monitored spin-1/2 chains.
//!
//! The crate provides, bottom up:
//!
//! - [`tensor`]: dense complex tensors with contraction, permutation and
//!   truncated SVD;
//! - [`mps`]: open-boundary matrix product states with canonical forms,
//!   observables, superposition and compression;
//! - [`mpo`]: matrix product operators — nearest-neighbor Hamiltonians,
//!   ancilla-readout Kraus operators and their POVM effects, operator
//!   application and Trotter evolution;
//! - [`dense`]: exact dense oracles (diagonalization, propagators, a master
//!   equation integrator) for cross-checking everything above at small sizes;
//! - [`dmrg`]: two-site variational ground-state search;
//! - [`rng`]: counter-addressable random streams for replayable trajectories;
//! - [`stoch`]: stochastic propagation under repeated weak measurements and
//!   the diffusive continuous-monitoring limit;
//! - [`snapshot`]: exact binary state serialization.
//!
//! Site indices are 0-based everywhere. MPS site tensors are indexed
//! `(physical, left virtual, right virtual)`; MPO site tensors
//! `(left virtual, right virtual, physical out, physical in)`.

pub mod dense;
pub mod dmrg;
pub mod error;
pub mod mpo;
pub mod mps;
pub mod rng;
pub mod snapshot;
pub mod stoch;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{SvdTruncation, Tensor, TruncationReport};

/// Complex double-precision scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
