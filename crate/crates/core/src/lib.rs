//! Self-supervised smoke and fire segmentation for multispectral rasters.
//!
//! The pipeline trains a small deep belief network encoder with contrastive
//! divergence, clusters the latent features with a top-down tree of
//! invariant-information-clustering heads, maps leaf clusters to smoke/fire
//! using sparse high-certainty polygon labels, and then evaluates, fuses and
//! tracks the resulting masks. A seeded scene generator stands in for real
//! satellite granules.

pub mod context;
pub mod dbn;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod iic;
pub mod numeric;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod synthetic;
pub mod tracking;

pub use error::{Error, Result};
