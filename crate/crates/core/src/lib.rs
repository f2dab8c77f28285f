//! Bayes linear adjustment for samples drawn from groups of second-order
//! co-exchangeable individuals with separable covariance.
//!
//! The full adjustment of the `g0·v0` population mean vector by the sample
//! decomposes into `v0` independent group problems, one per canonical
//! variable direction. This crate computes that decomposition for infinite
//! and finite populations, and checks it against a brute-force adjustment
//! on the full joint covariance.

pub mod bayes_linear;
pub mod combined;
pub mod error;
pub mod fixtures;
pub mod functional;
pub mod groups;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod variables;

pub use bayes_linear::{AdjustedBeliefs, SecondOrderBeliefs};
pub use combined::{analyze_functional, build_grid, CanonicalGrid, FunctionalReport};
pub use error::{Error, Result};
pub use groups::{group_structure, GroupCanonicalStructure, Shortcut};
pub use linalg::{gen_eig, SymMatrix};
pub use model::{Design, GroupData, Kind, ModelSpec, ObservedSample, PopulationSize};
pub use variables::{canonical_variables, CanonicalVariableStructure};
