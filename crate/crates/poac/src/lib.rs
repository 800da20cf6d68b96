//! Problem-oriented AutoML for clustering.
//!
//! The toolkit is organized as a pipeline of stages:
//!
//! 1. [`datagen`] synthesizes labeled cluster datasets with controlled
//!    geometry (dimensionality, overlap, shape, imbalance).
//! 2. [`metabase`] corrupts the ground-truth labels of each dataset at a
//!    grid of noise levels and records internal validity indexes
//!    ([`cvi`]) together with dataset meta-features ([`metafeatures`])
//!    and the external agreement (adjusted Rand index) as the target.
//! 3. [`surrogate`] trains a random-forest regressor mapping
//!    (meta-features, silhouette, Davies-Bouldin) to predicted ARI.
//! 4. [`optimizer`] evolves clustering pipelines ([`estimators`]) using
//!    the surrogate as a fitness function, so no clustering quality
//!    label is needed at search time.
//! 5. [`evalstats`] runs ablation studies over fitness modes and
//!    applies Friedman/Nemenyi tests to result tables.
//!
//! All randomness flows through [`core::RngStream`], a counter-style
//! seed-derivation scheme that makes every stage reproducible and
//! schedule-independent under data parallelism.

pub mod core;
pub mod cvi;
pub mod datagen;
pub mod estimators;
pub mod evalstats;
pub mod metabase;
pub mod metafeatures;
pub mod optimizer;
pub mod surrogate;

mod error;

pub use error::{Error, Result};
