//! Supervised multilabel segmentation by multiplicative filtering of
//! label-assignment matrices over the ε-probability simplex.
//!
//! Pixels carry features in a metric space (vectors, SPD matrices, rotations
//! modulo a crystal symmetry group, or products of these). Distances to `K`
//! prior features give an initial assignment matrix, which is then filtered
//! with a symmetric stochastic weight graph until every row sits near a
//! vertex of the simplex.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod features;
pub mod graph;
pub mod io;
pub mod labeling;
pub mod metric;
pub mod simplex;

pub use error::{Error, Result};
