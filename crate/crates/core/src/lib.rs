//! Structure-preserving model reduction for port-Hamiltonian systems.
//!
//! The crate covers system descriptions ([`system`]), approximation ansatzes ([`ansatz`]),
//! reduced-model construction ([`reduction`]), the benchmark models ([`models`]),
//! implicit-midpoint time stepping ([`timestep`]), offline mode fitting ([`offline`]),
//! energy diagnostics ([`diagnostics`]), and a configuration-driven pipeline ([`config`], [`pipeline`]).

pub mod ansatz;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod models;
pub mod offline;
pub mod pipeline;
pub mod reduction;
pub mod spline;
pub mod system;
pub mod timestep;

pub use error::{Error, Result};
