//! Optimization of bang-bang annealing protocols for Sherrington-Kirkpatrick
//! spin glasses: exact state-vector propagation, Pontryagin certificates,
//! Monte Carlo and adjoint-gradient protocol search, and open-system
//! (dephasing / Redfield) evolution for noise robustness studies.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod open_system;
pub mod optimize;
pub mod pontryagin;
pub mod protocol;
pub mod run;
pub mod statevector;
pub mod stats;

pub use error::{Error, Result};
pub use model::{CostVector, SKInstance};
pub use protocol::{BangBangProtocol, Protocol, Segment};
pub use statevector::StateVector;
