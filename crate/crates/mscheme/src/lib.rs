//! Solver laboratory for semi-implicit splitting linearisations of
//! degenerate and singular quasilinear parabolic systems.
//!
//! The library is organised bottom-up:
//! - [`model`]: nonlinearities Φ, reaction terms, regularization, a-priori bounds
//! - [`fem`]: meshes, P0/P1 fields, assembly, sparse SPD solves
//! - [`scheme`]: the linearised inner iteration (L-scheme, M-scheme, Newton)
//! - [`stepper`]: the outer time loop with the substrate update
//! - [`bench`]: exact solutions, error measures, convergence and robustness studies
//! - [`config`]: TOML-driven run descriptions and output writers

pub mod bench;
pub mod config;
pub mod fem;
pub mod io;
pub mod model;
pub mod scheme;
pub mod stepper;
