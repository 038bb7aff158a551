//! Graph-matching workbench.
//!
//! The crate bundles everything needed to train and benchmark a graph
//! neural network on planted quadratic-assignment instances:
//!
//! - [`graphgen`]: random graph generators, planted permutations, and a
//!   degree-preserving edge-flip noise model.
//! - [`operators`]: the family of graph-intrinsic linear operators
//!   (identity, degree, adjacency, thresholded adjacency powers, global
//!   average) fed to every GNN layer.
//! - [`diffcore`]: dense matrices with a reverse-mode gradient tape, the
//!   neural primitives the model needs, and the Adamax update rule.
//! - [`gnn`]: the siamese encoder built from stacked operator layers plus
//!   the soft-correspondence matching head.
//! - [`assign`]: exact linear assignment and QAP objective evaluation.
//! - [`baselines`]: non-trained spectral alignment methods.
//! - [`landscape`]: the polynomial-embedding model, its moment matrices,
//!   the mean-field maximizer, and concentration experiments.
//! - [`harness`]: configuration, dataset/checkpoint persistence, the
//!   training loop, and evaluation sweeps.

pub mod assign;
pub mod baselines;
pub mod diffcore;
pub mod error;
pub mod gnn;
pub mod graphgen;
pub mod harness;
pub mod landscape;
pub mod operators;

pub(crate) mod linalg;
pub mod seed;

pub use error::{Error, Result};
