//! A Hebbian-Bayesian (BCPNN) network library combining a sparse
//! feedforward projection with a recurrent attractor layer, plus the data
//! handling, analysis and persistence needed to run full experiments on
//! MNIST-format digit data.
//!
//! Layers are modular: hypercolumns of softmax-competing minicolumns.
//! The feedforward net learns hidden representations unsupervised; the
//! recurrent net stores them as attractors and performs pattern completion.

pub mod analysis;
pub mod bcpnn;
pub mod config;
pub mod container;
pub mod dataio;
pub mod distort;
pub mod error;
pub mod feedforward;
pub mod geometry;
pub mod pipeline;
pub mod recurrent;
pub mod synth;
pub mod topology;
mod util;

pub use bcpnn::{propagate, softmax_per_hypercolumn, PTraces, ProjectionParams};
pub use error::{BcpnnError, Result};
pub use geometry::{ActivityBatch, ActivityVector, LayerGeometry, SupportVector};
pub use topology::{mutual_information_scores, rewire, ConnectivityMask, RewiringScore};
