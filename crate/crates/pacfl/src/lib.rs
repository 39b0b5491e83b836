//! One-shot clustered federated learning from principal angles between
//! client data subspaces.
//!
//! Each client summarizes its local data with a truncated-SVD signature (a
//! few left singular vectors) sent to the server once. The server measures
//! pairwise distribution similarity through the principal angles between the
//! signature subspaces, clusters clients by hierarchical clustering with a
//! distance threshold, and then runs federated averaging per cluster. The
//! threshold sweeps the whole spectrum between one global model and one
//! model per client, and late-arriving clients are placed by extending the
//! proximity matrix instead of re-running the federation.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`subspace`] — data signatures, principal angles, proximity matrices
//! - [`partition`] — synthetic datasets, CSV loading, Non-IID partitioners
//! - [`clustering`] — hierarchical clustering, threshold cuts, newcomer placement
//! - [`model`] — small classifiers with manual analytic gradients
//! - [`federation`] — the training loop, aggregation, communication costs
//! - [`divergence`] — reference distribution distances and diagnostics
//! - [`config`] / [`runner`] — experiment files and the end-to-end pipeline
//!
//! The `examples/` directory contains one runnable example per capability;
//! start with `signatures` and `cluster_recovery`. The `pacfl` binary exposes
//! the same pipeline as subcommands for scripted runs.

// Negated float comparisons are deliberate NaN guards, and the numeric code
// indexes several parallel structures in plain range loops.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clustering;
pub mod config;
pub mod divergence;
pub mod error;
pub mod federation;
mod linalg;
pub mod model;
pub mod partition;
pub mod runner;
pub mod seed;
pub mod subspace;

pub use error::{Error, Result};
