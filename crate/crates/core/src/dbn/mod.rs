//! Restricted Boltzmann machine layers and their greedy stacking into a
//! deep belief network encoder.
//!
//! Layer 0 is Gaussian-Bernoulli with per-unit standard deviation
//! `sigma_i = exp(z_i)`:
//!
//! ```text
//! E(v, h) = sum_i (v_i - b_i)^2 / (2 sigma_i^2) - sum_ij (v_i / sigma_i^2) W_ij h_j - sum_j c_j h_j
//! ```
//!
//! Upper layers are Bernoulli-Bernoulli with `E = -v'Wh - b'v - c'h`.

pub(crate) mod checkpoint;
mod layer;
mod train;

pub use checkpoint::{load_dbn, save_dbn};
pub use layer::{logistic, init_layer, LayerKind, RbmLayer, ReconstructMode, LOGIT_CLAMP};
pub use train::{
    cd_gradient, cd_step, encode, reconstruction_error, train_dbn, train_layer, DbnModel, RbmGradient, TrainConfig,
    Velocity,
};
