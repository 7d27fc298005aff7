use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Rng as ChaCha};
use crate::{Error, Result};

/// Logistic arguments are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 500.0;

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "GB")]
    GaussianBernoulli,
    #[serde(rename = "BB")]
    BernoulliBernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    pub kind: LayerKind,
    /// V x H
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// Log standard deviation of each visible unit; all zero for BB layers.
    pub log_sigma: Array1<f64>,
}

/// `W ~ N(0, 0.01^2)`, zero biases, `sigma = 1`.
pub fn init_layer(kind: LayerKind, visible: usize, hidden: usize, seed: u64) -> Result<RbmLayer> {
    if visible == 0 || hidden == 0 {
        return Err(Error::Invalid(format!(
            "layer dimensions must be positive, got {visible}x{hidden}"
        )));
    }
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let weights = Array2::from_shape_simple_fn((visible, hidden), || normal.sample(&mut rng));
    Ok(RbmLayer {
        kind,
        weights,
        visible_bias: Array1::zeros(visible),
        hidden_bias: Array1::zeros(hidden),
        log_sigma: Array1::zeros(visible),
    })
}

impl RbmLayer {
    pub fn visible_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        let (v, h) = (self.visible_dim(), self.hidden_dim());
        let sigma = match self.kind {
            LayerKind::GaussianBernoulli => v,
            LayerKind::BernoulliBernoulli => 0,
        };
        v * h + v + h + sigma
    }

    /// Visible variances; ones for BB layers.
    pub fn variances(&self) -> Array1<f64> {
        match self.kind {
            LayerKind::GaussianBernoulli => self.log_sigma.mapv(|z| (2.0 * z).exp()),
            LayerKind::BernoulliBernoulli => Array1::ones(self.visible_dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.log_sigma.iter().all(|v| v.is_finite())
    }

    /// `p(h_j = 1 | v)` for every row of `v`.
    pub fn hidden_probs(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (vd, hd) = (self.visible_dim(), self.hidden_dim());
        if v.ncols() != vd {
            return Err(Error::Shape(format!("visible batch has {} columns, layer expects {vd}", v.ncols())));
        }
        let scale = match self.kind {
            LayerKind::GaussianBernoulli => Some(self.variances().mapv(|s| 1.0 / s)),
            LayerKind::BernoulliBernoulli => None,
        };
        let mut out = Array2::zeros((v.nrows(), hd));
        // explicit loops: each row's result depends only on that row, in a
        // fixed summation order, so batching never changes the bits
        for (row, mut dst) in v.rows().into_iter().zip(out.rows_mut()) {
            let dst = dst.as_slice_mut().expect("standard layout");
            dst.copy_from_slice(self.hidden_bias.as_slice().expect("contiguous"));
            for (i, &x) in row.iter().enumerate() {
                let x = match &scale {
                    Some(s) => x * s[i],
                    None => x,
                };
                let w = self.weights.row(i);
                for (d, wij) in dst.iter_mut().zip(w.iter()) {
                    *d += x * wij;
                }
            }
            for d in dst.iter_mut() {
                *d = logistic(*d);
            }
        }
        Ok(out)
    }

    /// Mean of `p(v | h)`: logistic for BB, linear for GB.
    pub fn visible_means(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (vd, hd) = (self.visible_dim(), self.hidden_dim());
        if h.ncols() != hd {
            return Err(Error::Shape(format!("hidden batch has {} columns, layer expects {hd}", h.ncols())));
        }
        let mut out = Array2::zeros((h.nrows(), vd));
        for (row, mut dst) in h.rows().into_iter().zip(out.rows_mut()) {
            for (i, d) in dst.iter_mut().enumerate() {
                let w = self.weights.row(i);
                let mut acc = self.visible_bias[i];
                for (hj, wij) in row.iter().zip(w.iter()) {
                    acc += hj * wij;
                }
                *d = match self.kind {
                    LayerKind::GaussianBernoulli => acc,
                    LayerKind::BernoulliBernoulli => logistic(acc),
                };
            }
        }
        Ok(out)
    }

    pub fn visible_reconstruct(&self, h: ArrayView2<f64>, mode: ReconstructMode, rng: &mut ChaCha) -> Result<Array2<f64>> {
        let mut means = self.visible_means(h)?;
        if mode == ReconstructMode::Sample {
            match self.kind {
                LayerKind::BernoulliBernoulli => means.mapv_inplace(|p| bernoulli(p, rng)),
                LayerKind::GaussianBernoulli => {
                    let sigma = self.log_sigma.mapv(f64::exp);
                    for mut row in means.rows_mut() {
                        for (v, s) in row.iter_mut().zip(sigma.iter()) {
                            let n: f64 = StandardNormal.sample(rng);
                            *v += s * n;
                        }
                    }
                }
            }
        }
        Ok(means)
    }
}

pub(crate) fn bernoulli(p: f64, rng: &mut ChaCha) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}
