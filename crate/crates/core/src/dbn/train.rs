use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layer::{bernoulli, init_layer, LayerKind, RbmLayer, ReconstructMode};
use crate::rng::{derive_seed, seeded, Rng};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub cd_k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learn_sigma: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.5,
            weight_decay: 1e-4,
            cd_k: 1,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            learn_sigma: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is allowed: it freezes the parameters
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Invalid("learning_rate must be finite and >= 0".into()));
        }
        if self.cd_k == 0 {
            return Err(Error::Invalid("cd_k must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Log-likelihood gradient estimate (ascent direction), averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// Only for Gaussian-Bernoulli layers.
    pub log_sigma: Option<Array1<f64>>,
}

impl RbmGradient {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.log_sigma.iter().flatten().all(|v| v.is_finite())
    }

    /// All components concatenated (W row-major, b, c, z).
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.visible_bias.iter())
            .chain(self.hidden_bias.iter())
            .chain(self.log_sigma.iter().flatten())
            .copied()
            .collect()
    }
}

/// Momentum buffers for [`cd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    log_sigma: Array1<f64>,
}

impl Velocity {
    pub fn zeros(layer: &RbmLayer) -> Self {
        let (v, h) = (layer.visible_dim(), layer.hidden_dim());
        Velocity {
            weights: Array2::zeros((v, h)),
            visible_bias: Array1::zeros(v),
            hidden_bias: Array1::zeros(h),
            log_sigma: Array1::zeros(v),
        }
    }
}

fn sample_hidden(probs: &Array2<f64>, rng: &mut Rng) -> Array2<f64> {
    probs.mapv(|p| bernoulli(p, rng))
}

/// Sufficient statistics `-dE/dtheta` averaged over rows of `v`, with the
/// hidden units replaced by their conditional expectations `h`.
fn statistics(layer: &RbmLayer, v: &Array2<f64>, h: &Array2<f64>) -> RbmGradient {
    let n = v.nrows() as f64;
    match layer.kind {
        LayerKind::BernoulliBernoulli => RbmGradient {
            weights: v.t().dot(h) / n,
            visible_bias: v.mean_axis(Axis(0)).expect("nonempty"),
            hidden_bias: h.mean_axis(Axis(0)).expect("nonempty"),
            log_sigma: None,
        },
        LayerKind::GaussianBernoulli => {
            let var = layer.variances();
            let scaled = v / &var;
            let centered = v - &layer.visible_bias;
            // d(-E)/dz_i = ((v_i - b_i)^2 - 2 v_i (W h)_i) / sigma_i^2
            let wh = h.dot(&layer.weights.t());
            let dz = (&centered * &centered - 2.0 * v * &wh) / &var;
            RbmGradient {
                weights: scaled.t().dot(h) / n,
                visible_bias: (centered / &var).mean_axis(Axis(0)).expect("nonempty"),
                hidden_bias: h.mean_axis(Axis(0)).expect("nonempty"),
                log_sigma: Some(dz.mean_axis(Axis(0)).expect("nonempty")),
            }
        }
    }
}

/// CD-k estimate of the log-likelihood gradient for one batch.
///
/// The chain samples hidden units; visible units use the mean for GB layers
/// and Bernoulli samples for BB layers. The negative statistics use the
/// hidden probabilities at the end of the chain.
pub fn cd_gradient(layer: &RbmLayer, batch: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Result<RbmGradient> {
    if batch.nrows() == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("cd_k must be >= 1".into()));
    }
    let v0 = batch.to_owned();
    let h0 = layer.hidden_probs(batch)?;
    let mut h_sample = sample_hidden(&h0, rng);
    let mut vk = v0.clone();
    let mut hk = h0.clone();
    for step in 0..k {
        vk = match layer.kind {
            LayerKind::GaussianBernoulli => layer.visible_means(h_sample.view())?,
            LayerKind::BernoulliBernoulli => {
                layer.visible_reconstruct(h_sample.view(), ReconstructMode::Sample, rng)?
            }
        };
        hk = layer.hidden_probs(vk.view())?;
        if step + 1 < k {
            h_sample = sample_hidden(&hk, rng);
        }
    }
    let pos = statistics(layer, &v0, &h0);
    let neg = statistics(layer, &vk, &hk);
    Ok(RbmGradient {
        weights: pos.weights - neg.weights,
        visible_bias: pos.visible_bias - neg.visible_bias,
        hidden_bias: pos.hidden_bias - neg.hidden_bias,
        log_sigma: match (pos.log_sigma, neg.log_sigma) {
            (Some(p), Some(n)) => Some(p - n),
            _ => None,
        },
    })
}

/// Mean squared error between `batch` and its one-step mean-field reconstruction.
pub fn reconstruction_error(layer: &RbmLayer, batch: ArrayView2<f64>) -> Result<f64> {
    let h = layer.hidden_probs(batch)?;
    let v = layer.visible_means(h.view())?;
    let diff = &v - &batch;
    Ok(diff.mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// One CD-k update with momentum; weight decay applies to weights only.
/// Returns the reconstruction error measured before the update.
pub fn cd_step(
    layer: &mut RbmLayer,
    batch: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    velocity: &mut Velocity,
) -> Result<f64> {
    let error = reconstruction_error(layer, batch)?;
    let grad = cd_gradient(layer, batch, cfg.cd_k, rng)?;
    if !grad.is_finite() || !error.is_finite() {
        return Err(Error::Diverged("non-finite CD gradient".into()));
    }
    let (lr, mom) = (cfg.learning_rate, cfg.momentum);
    velocity.weights = mom * &velocity.weights + lr * (&grad.weights - cfg.weight_decay * &layer.weights);
    velocity.visible_bias = mom * &velocity.visible_bias + lr * &grad.visible_bias;
    velocity.hidden_bias = mom * &velocity.hidden_bias + lr * &grad.hidden_bias;
    layer.weights += &velocity.weights;
    layer.visible_bias += &velocity.visible_bias;
    layer.hidden_bias += &velocity.hidden_bias;
    if cfg.learn_sigma {
        if let Some(gz) = &grad.log_sigma {
            velocity.log_sigma = mom * &velocity.log_sigma + lr * gz;
            layer.log_sigma += &velocity.log_sigma;
        }
    }
    if !layer.is_finite() {
        return Err(Error::Diverged("non-finite parameters after CD step".into()));
    }
    Ok(error)
}

/// Mini-batch CD training; returns the per-epoch mean reconstruction error.
pub fn train_layer(layer: &mut RbmLayer, data: ArrayView2<f64>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.ncols() != layer.visible_dim() {
        return Err(Error::Shape(format!(
            "training data has {} columns, layer expects {}",
            data.ncols(),
            layer.visible_dim()
        )));
    }
    let n = data.nrows();
    let mut trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || n == 0 {
        return Ok(trace);
    }
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut velocity = Velocity::zeros(layer);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let err = cd_step(layer, batch.view(), cfg, &mut rng, &mut velocity)?;
            total += err * chunk.len() as f64;
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: reconstruction error {mean:.6}");
        trace.push(mean);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    pub layers: Vec<RbmLayer>,
}

impl DbnModel {
    pub fn new(layers: Vec<RbmLayer>) -> Result<Self> {
        if layers.is_empty() || layers.len() > 3 {
            return Err(Error::Invalid(format!("a DBN has 1-3 layers, got {}", layers.len())));
        }
        for (i, l) in layers.iter().enumerate() {
            let expected = if i == 0 {
                LayerKind::GaussianBernoulli
            } else {
                LayerKind::BernoulliBernoulli
            };
            if l.kind != expected {
                return Err(Error::Invalid(format!("layer {i} must be {expected:?}")));
            }
            if i > 0 && layers[i - 1].hidden_dim() != l.visible_dim() {
                return Err(Error::Shape(format!(
                    "layer {} emits {} units, layer {i} expects {}",
                    i - 1,
                    layers[i - 1].hidden_dim(),
                    l.visible_dim()
                )));
            }
        }
        Ok(DbnModel { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].visible_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").hidden_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(RbmLayer::parameter_count).sum()
    }

    /// Parameter count of a model with the given chain of widths, input first.
    pub fn parameter_count_for(dims: &[usize]) -> usize {
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| w[0] * w[1] + w[0] + w[1] + if i == 0 { w[0] } else { 0 })
            .sum()
    }
}

fn layer_config(cfgs: &[TrainConfig], i: usize, layers: usize) -> TrainConfig {
    if cfgs.len() == 1 && layers > 1 && i > 0 {
        TrainConfig {
            seed: derive_seed(cfgs[0].seed, i as u64),
            ..cfgs[0].clone()
        }
    } else {
        cfgs[i.min(cfgs.len() - 1)].clone()
    }
}

/// Greedy layer-wise training. `dims` lists the input width followed by the
/// hidden width of each layer; `cfgs` holds one config per layer, or a single
/// config shared by all layers (later layers get derived seeds). Layer `i` is
/// initialized with `init_layer(kind, V, H, cfg_i.seed)` and trained on the
/// hidden probabilities of the layer below.
pub fn train_dbn(samples: ArrayView2<f64>, dims: &[usize], cfgs: &[TrainConfig]) -> Result<(DbnModel, Vec<Vec<f64>>)> {
    if dims.len() < 2 || dims.len() > 4 {
        return Err(Error::Invalid(format!("need 1-3 layers, got dims {dims:?}")));
    }
    if cfgs.is_empty() || (cfgs.len() != 1 && cfgs.len() != dims.len() - 1) {
        return Err(Error::Invalid("one training config per layer, or a single shared one".into()));
    }
    if samples.ncols() != dims[0] {
        return Err(Error::Shape(format!(
            "samples have {} features, dims start with {}",
            samples.ncols(),
            dims[0]
        )));
    }
    let n_layers = dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    let mut traces = Vec::with_capacity(n_layers);
    let mut input = samples.to_owned();
    for i in 0..n_layers {
        let cfg = layer_config(cfgs, i, n_layers);
        let kind = if i == 0 {
            LayerKind::GaussianBernoulli
        } else {
            LayerKind::BernoulliBernoulli
        };
        let mut layer = init_layer(kind, dims[i], dims[i + 1], cfg.seed)?;
        let trace = train_layer(&mut layer, input.view(), &cfg)?;
        log::info!(
            "layer {i} ({kind:?} {}x{}): error {:?} -> {:?}",
            dims[i],
            dims[i + 1],
            trace.first(),
            trace.last()
        );
        if i + 1 < n_layers {
            input = forward_layer(&layer, input.view())?;
        }
        layers.push(layer);
        traces.push(trace);
    }
    Ok((DbnModel::new(layers)?, traces))
}

fn forward_layer(layer: &RbmLayer, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    let blocks = par::map_chunks(n, par::CHUNK, |r| layer.hidden_probs(x.slice(s![r, ..])));
    let mut out = Array2::zeros((n, layer.hidden_dim()));
    let mut start = 0;
    for block in blocks {
        let block = block?;
        let len = block.nrows();
        out.slice_mut(s![start..start + len, ..]).assign(&block);
        start += len;
    }
    Ok(out)
}

/// Deterministic mean-field encoding through every layer.
pub fn encode(model: &DbnModel, samples: ArrayView2<f64>) -> Result<Array2<f64>> {
    if samples.ncols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "samples have {} features, encoder expects {}",
            samples.ncols(),
            model.input_dim()
        )));
    }
    let mut x = forward_layer(&model.layers[0], samples)?;
    for layer in &model.layers[1..] {
        x = forward_layer(layer, x.view())?;
    }
    Ok(x)
}
