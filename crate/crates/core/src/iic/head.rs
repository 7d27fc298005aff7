use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numeric::exact_sum;
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHead {
    /// D x k
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub node_id: String,
}

impl ClusterHead {
    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Raw scores `x A + bias` for one sample.
    pub fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.to_vec();
        for (xi, row) in x.iter().zip(self.weights.rows()) {
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += xi * a;
            }
        }
        out
    }

    /// Highest-scoring cluster, ties to the lowest index.
    pub fn argmax_row(&self, x: &[f64]) -> usize {
        let logits = self.logits_row(x);
        let mut best = 0;
        for (j, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = j;
            }
        }
        best
    }
}

pub fn init_head(dim: usize, k: usize, seed: u64, node_id: impl Into<String>) -> Result<ClusterHead> {
    if k < 2 {
        return Err(Error::Invalid(format!("a clustering head needs k >= 2, got {k}")));
    }
    if dim == 0 {
        return Err(Error::Invalid("clustering head input must be nonempty".into()));
    }
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    Ok(ClusterHead {
        weights: Array2::from_shape_simple_fn((dim, k), || normal.sample(&mut rng)),
        bias: Array1::zeros(k),
        node_id: node_id.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Std of the Gaussian noise used to build the paired view.
    pub sigma: f64,
    /// Marginal entropy weight, >= 1.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_subheads: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            sigma: 0.05,
            lambda: 1.0,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 512,
            n_subheads: 1,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Invalid("sigma must be finite and >= 0".into()));
        }
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return Err(Error::Invalid("lambda must be finite and >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Invalid("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.n_subheads == 0 {
            return Err(Error::Invalid("batch_size and n_subheads must be >= 1".into()));
        }
        Ok(())
    }
}

/// Noisy copy of `features`, clamped to the encoder range `[0, 1]`.
pub fn perturb(features: ArrayView2<f64>, sigma: f64, rng: &mut Rng) -> Array2<f64> {
    if sigma == 0.0 {
        return features.to_owned();
    }
    features.mapv(|v| {
        let n: f64 = StandardNormal.sample(rng);
        (v + sigma * n).clamp(0.0, 1.0)
    })
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

/// Row-wise `softmax(features A + bias)`.
pub fn head_forward(head: &ClusterHead, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != head.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, head expects {}",
            features.ncols(),
            head.input_dim()
        )));
    }
    Ok(softmax_rows(features.dot(&head.weights) + &head.bias))
}

/// Symmetrized, normalized joint `P = sym(z' z_pair / N)`.
pub fn joint_distribution(z: ArrayView2<f64>, z_pair: ArrayView2<f64>) -> Result<Array2<f64>> {
    if z.nrows() == 0 {
        return Err(Error::Invalid("joint distribution of an empty batch".into()));
    }
    if z.dim() != z_pair.dim() {
        return Err(Error::Shape("paired assignments differ in shape".into()));
    }
    let p = z.t().dot(&z_pair) / z.nrows() as f64;
    let sym = (&p + &p.t()) / 2.0;
    let total = sym.sum();
    Ok(sym / total)
}

/// Row and column sums, exact so that relabelling clusters cannot change them.
fn marginals(p: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let row = p.rows().into_iter().map(|r| exact_sum(&r.to_vec())).collect();
    let col = p.columns().into_iter().map(|c| exact_sum(&c.to_vec())).collect();
    (row, col)
}

/// `sum_ij P_ij (lambda ln(P_i P_j) - ln P_ij)`; equals `-I(P)` at `lambda = 1`.
pub fn iic_loss(p: &Array2<f64>, lambda: f64) -> Result<f64> {
    if p.nrows() != p.ncols() || p.is_empty() {
        return Err(Error::Shape("joint matrix must be square and nonempty".into()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("joint matrix must be finite and nonnegative".into()));
    }
    if (p.sum() - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("joint matrix sums to {}", p.sum())));
    }
    let (row, col) = marginals(p);
    let terms: Vec<f64> = p
        .indexed_iter()
        .map(|((i, j), &pij)| {
            let lm = row[i].max(PROB_FLOOR).ln() + col[j].max(PROB_FLOOR).ln();
            pij * (lambda * lm - pij.max(PROB_FLOOR).ln())
        })
        .collect();
    Ok(exact_sum(&terms))
}

/// dLoss/dP, treating the marginals as functions of P.
fn loss_grad_wrt_joint(p: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let (row, col) = marginals(p);
    let dlog = |x: f64| if x > PROB_FLOOR { x.ln() + 1.0 } else { PROB_FLOOR.ln() };
    let drow = row.mapv(dlog);
    let dcol = col.mapv(dlog);
    Array2::from_shape_fn(p.dim(), |(i, j)| lambda * (drow[i] + dcol[j]) - dlog(p[[i, j]]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Loss of one batch and its exact gradient with respect to the head
/// parameters, through both softmax branches and the joint construction.
pub fn loss_and_gradient(
    head: &ClusterHead,
    x: ArrayView2<f64>,
    x_pair: ArrayView2<f64>,
    lambda: f64,
) -> Result<(f64, HeadGradient)> {
    let n = x.nrows() as f64;
    let z = head_forward(head, x)?;
    let zp = head_forward(head, x_pair)?;
    let raw = z.t().dot(&zp) / n;
    let sym = (&raw + &raw.t()) / 2.0;
    let total = sym.sum();
    let p = &sym / total;
    let loss = iic_loss(&p, lambda)?;

    let g = loss_grad_wrt_joint(&p, lambda);
    // through the normalization P = S / sum(S)
    let inner = (&g * &p).sum();
    let g_sym = (g - inner) / total;
    // through the symmetrization S = (R + R') / 2
    let g_raw = (&g_sym + &g_sym.t()) / 2.0;
    // R = z' zp / n
    let dz = zp.dot(&g_raw.t()) / n;
    let dzp = z.dot(&g_raw) / n;
    let dlogits = softmax_backward(&z, &dz);
    let dlogits_p = softmax_backward(&zp, &dzp);
    let weights = x.t().dot(&dlogits) + x_pair.t().dot(&dlogits_p);
    let bias = dlogits.sum_axis(Axis(0)) + dlogits_p.sum_axis(Axis(0));
    Ok((loss, HeadGradient { weights, bias }))
}

fn softmax_backward(z: &Array2<f64>, dz: &Array2<f64>) -> Array2<f64> {
    let dot = (z * dz).sum_axis(Axis(1)).insert_axis(Axis(1));
    z * &(dz - &dot)
}

struct Adam {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(head: &ClusterHead) -> Self {
        Adam {
            m_w: Array2::zeros(head.weights.dim()),
            v_w: Array2::zeros(head.weights.dim()),
            m_b: Array1::zeros(head.k()),
            v_b: Array1::zeros(head.k()),
            t: 0,
        }
    }

    fn step(&mut self, head: &mut ClusterHead, grad: &HeadGradient, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        ndarray::Zip::from(&mut head.weights)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(&grad.weights)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut head.bias)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(&grad.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

/// Per-dimension centering and scaling applied to head inputs during
/// training. A head trained on standardized inputs folds back into an
/// equivalent head on raw features.
struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    /// Floor on the per-dimension scale, so constant features stay finite.
    const MIN_SCALE: f64 = 1e-3;

    fn fit(features: ArrayView2<f64>) -> Self {
        let mean = features.mean_axis(Axis(0)).expect("non-empty features");
        let scale = features.std_axis(Axis(0), 0.0).mapv(|v| v.max(Self::MIN_SCALE));
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }

    /// Raw-space head to standardized space: `A_s = diag(s) A`, `b_s = b + mean A`.
    fn to_standard(&self, head: &ClusterHead) -> ClusterHead {
        let weights = &head.weights * &self.scale.view().insert_axis(Axis(1));
        let bias = &head.bias + &self.mean.dot(&head.weights);
        ClusterHead { weights, bias, node_id: head.node_id.clone() }
    }

    /// Inverse of [`Self::to_standard`].
    fn to_raw(&self, head: &ClusterHead) -> ClusterHead {
        let weights = &head.weights / &self.scale.view().insert_axis(Axis(1));
        let bias = &head.bias - &self.mean.dot(&weights);
        ClusterHead { weights, bias, node_id: head.node_id.clone() }
    }
}

fn train_single(head: ClusterHead, features: ArrayView2<f64>, cfg: &HeadConfig, seed: u64) -> Result<(ClusterHead, Vec<f64>)> {
    let n = features.nrows();
    let mut rng = seeded(seed);
    let standardizer = Standardizer::fit(features);
    let original = head;
    let mut head = standardizer.to_standard(&original);
    let mut adam = Adam::new(&head);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // a lone leftover sample says nothing about co-assignment
            if chunk.len() < 2 && n >= 2 {
                continue;
            }
            let raw = features.select(Axis(0), chunk);
            // the pair is drawn in feature space, then both views are standardized
            let xp = standardizer.apply(&perturb(raw.view(), cfg.sigma, &mut rng));
            let x = standardizer.apply(&raw);
            let (loss, grad) = loss_and_gradient(&head, x.view(), xp.view(), cfg.lambda)?;
            if !loss.is_finite() || grad.weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("non-finite clustering loss at {}", head.node_id)));
            }
            adam.step(&mut head, &grad, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        trace.push(if batches > 0 { total / batches as f64 } else { 0.0 });
    }
    if cfg.learning_rate == 0.0 {
        // parameters never moved; avoid the rounding of the round trip
        return Ok((original, trace));
    }
    Ok((standardizer.to_raw(&head), trace))
}

/// Trains `head` (and `n_subheads - 1` freshly seeded siblings) with Adam on
/// the IIC objective and keeps the one with the lowest final epoch loss.
pub fn train_head(head: ClusterHead, features: ArrayView2<f64>, cfg: &HeadConfig) -> Result<(ClusterHead, Vec<f64>)> {
    cfg.validate()?;
    if features.ncols() != head.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, head expects {}",
            features.ncols(),
            head.input_dim()
        )));
    }
    if features.nrows() < head.k() {
        return Err(Error::Invalid(format!(
            "need at least k = {} samples, got {}",
            head.k(),
            features.nrows()
        )));
    }
    let mut best: Option<(ClusterHead, Vec<f64>)> = None;
    for s in 0..cfg.n_subheads {
        let start = if s == 0 {
            head.clone()
        } else {
            init_head(head.input_dim(), head.k(), derive_seed(cfg.seed, 0x5EED + s as u64), head.node_id.clone())?
        };
        let (trained, trace) = train_single(start, features, cfg, derive_seed(cfg.seed, s as u64))?;
        let last = trace.last().copied().unwrap_or(f64::INFINITY);
        let better = match &best {
            None => true,
            Some((_, t)) => last < t.last().copied().unwrap_or(f64::INFINITY),
        };
        if better {
            best = Some((trained, trace));
        }
    }
    let (head, trace) = best.expect("n_subheads >= 1");
    let mut used = vec![false; head.k()];
    for row in features.rows() {
        used[head.argmax_row(row.as_slice().unwrap_or(&row.to_vec()))] = true;
    }
    if used.iter().filter(|u| **u).count() <= 1 {
        log::warn!("clustering head {} collapsed to a single cluster", head.node_id);
    }
    Ok((head, trace))
}
