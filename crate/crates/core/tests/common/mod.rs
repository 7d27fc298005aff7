// Independent reference computations shared by the integration tests and
// the acceptance runner. Nothing here calls into the code under test except
// for plain data types.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use sitfuse::dbn::RbmLayer;
use ndarray::Axis;
use sitfuse::iic::{head_forward, loss_and_gradient, ClusterHead, ClusterTree};

/// Exact log-likelihood gradient of a Bernoulli-Bernoulli RBM over `data`,
/// flattened as (W row-major, visible bias, hidden bias). The model term
/// enumerates every joint state.
pub fn exact_bb_gradient(layer: &RbmLayer, data: &Array2<f64>) -> Vec<f64> {
    let (nv, nh) = layer.weights.dim();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());

    // positive phase: E_data[v h^T] with h replaced by p(h=1|v)
    let mut pos_w = Array2::<f64>::zeros((nv, nh));
    let mut pos_b = Array1::<f64>::zeros(nv);
    let mut pos_c = Array1::<f64>::zeros(nh);
    for v in data.rows() {
        for j in 0..nh {
            let act: f64 = layer.hidden_bias[j] + (0..nv).map(|i| v[i] * layer.weights[[i, j]]).sum::<f64>();
            let p = sig(act);
            pos_c[j] += p;
            for i in 0..nv {
                pos_w[[i, j]] += v[i] * p;
            }
        }
        for i in 0..nv {
            pos_b[i] += v[i];
        }
    }
    let n = data.nrows() as f64;

    // negative phase by brute force over 2^V x 2^H states
    let mut z = 0.0;
    let mut neg_w = Array2::<f64>::zeros((nv, nh));
    let mut neg_b = Array1::<f64>::zeros(nv);
    let mut neg_c = Array1::<f64>::zeros(nh);
    let bit = |s: usize, k: usize| ((s >> k) & 1) as f64;
    for vs in 0..(1usize << nv) {
        for hs in 0..(1usize << nh) {
            let mut e = 0.0;
            for i in 0..nv {
                e += layer.visible_bias[i] * bit(vs, i);
            }
            for j in 0..nh {
                e += layer.hidden_bias[j] * bit(hs, j);
                for i in 0..nv {
                    e += bit(vs, i) * bit(hs, j) * layer.weights[[i, j]];
                }
            }
            let w = e.exp();
            z += w;
            for i in 0..nv {
                neg_b[i] += w * bit(vs, i);
                for j in 0..nh {
                    neg_w[[i, j]] += w * bit(vs, i) * bit(hs, j);
                }
            }
            for j in 0..nh {
                neg_c[j] += w * bit(hs, j);
            }
        }
    }
    let gw = pos_w / n - neg_w / z;
    let gb = pos_b / n - neg_b / z;
    let gc = pos_c / n - neg_c / z;
    gw.iter().chain(gb.iter()).chain(gc.iter()).copied().collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Central differences of the batch loss with respect to every head
/// parameter, compared with the analytic gradient. Returns the largest
/// relative error, with the denominator floored at `floor`.
pub fn iic_fd_max_rel_error(head: &ClusterHead, x: &Array2<f64>, xp: &Array2<f64>, step: f64, floor: f64) -> f64 {
    let (_, grad) = loss_and_gradient(head, x.view(), xp.view(), 1.0).unwrap();
    let loss = |h: &ClusterHead| loss_and_gradient(h, x.view(), xp.view(), 1.0).unwrap().0;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    };
    let (d, k) = head.weights.dim();
    for i in 0..d {
        for j in 0..k {
            let mut hp = head.clone();
            hp.weights[[i, j]] += step;
            let mut hm = head.clone();
            hm.weights[[i, j]] -= step;
            check(grad.weights[[i, j]], (loss(&hp) - loss(&hm)) / (2.0 * step));
        }
    }
    for j in 0..k {
        let mut hp = head.clone();
        hp.bias[j] += step;
        let mut hm = head.clone();
        hm.bias[j] -= step;
        check(grad.bias[j], (loss(&hp) - loss(&hm)) / (2.0 * step));
    }
    worst
}

/// Direct MI-form loss: sum_ij P_ij (ln(Pi Pj) - ln P_ij) at lambda = 1.
pub fn neg_mutual_information(p: &Array2<f64>) -> f64 {
    let k = p.nrows();
    let row: Vec<f64> = (0..k).map(|i| (0..k).map(|j| p[[i, j]]).sum()).collect();
    let col: Vec<f64> = (0..k).map(|j| (0..k).map(|i| p[[i, j]]).sum()).collect();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            let pij = p[[i, j]].max(1e-12);
            s += p[[i, j]] * ((row[i].max(1e-12) * col[j].max(1e-12)).ln() - pij.ln());
        }
    }
    s
}

/// Sliding-window SSIM evaluated window by window with a full 2-D Gaussian
/// weight matrix and explicitly centred moments.
pub fn brute_force_ssim(a: &[f64], b: &[f64], width: usize, window: usize, sigma: f64, k1: f64, k2: f64, range: f64) -> f64 {
    let height = a.len() / width;
    let half = (window as f64 - 1.0) / 2.0;
    let mut w2 = vec![0.0; window * window];
    for u in 0..window {
        for v in 0..window {
            let du = u as f64 - half;
            let dv = v as f64 - half;
            w2[u * window + v] = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|w| *w /= total);
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..=height - window {
        for c in 0..=width - window {
            let at = |g: &[f64], u: usize, v: usize| g[(r + u) * width + c + v];
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..window {
                for v in 0..window {
                    let w = w2[u * window + v];
                    ma += w * at(a, u, v);
                    mb += w * at(b, u, v);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..window {
                for v in 0..window {
                    let w = w2[u * window + v];
                    let da = at(a, u, v) - ma;
                    let db = at(b, u, v) - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Union-find labelling used to cross-check component extraction.
pub fn component_sizes(values: &[bool], width: usize, eight: bool) -> Vec<usize> {
    let n = values.len();
    let height = n / width;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let union = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            p[ra.max(rb)] = ra.min(rb);
        }
    };
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !values[i] {
                continue;
            }
            let mut nbrs = vec![];
            if c + 1 < width {
                nbrs.push(i + 1);
            }
            if r + 1 < height {
                nbrs.push(i + width);
                if eight && c + 1 < width {
                    nbrs.push(i + width + 1);
                }
                if eight && c > 0 {
                    nbrs.push(i + width - 1);
                }
            }
            for j in nbrs {
                if values[j] {
                    union(&mut parent, i, j);
                }
            }
        }
    }
    let mut sizes = std::collections::BTreeMap::new();
    for i in 0..n {
        if values[i] {
            *sizes.entry(find(&mut parent, i)).or_insert(0usize) += 1;
        }
    }
    let mut v: Vec<usize> = sizes.into_values().collect();
    v.sort_unstable();
    v
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Descends the tree with batch forward passes, independently of the
/// per-row routing used by `assign_labels`.
pub fn prefix_violations(tree: &ClusterTree, x: &Array2<f64>, paths: &[Vec<u16>]) -> usize {
    let mut bad = 0;
    for node in tree.nodes() {
        let members: Vec<usize> = (0..x.nrows())
            .filter(|&i| paths[i].len() > node.path.len() && paths[i][..node.path.len()].iter().map(|&c| c as usize).eq(node.path.iter().copied()))
            .collect();
        if members.is_empty() {
            continue;
        }
        let z = head_forward(&node.head, x.select(Axis(0), &members).view()).unwrap();
        for (row, &i) in z.rows().into_iter().zip(&members) {
            if argmax(row) != paths[i][node.path.len()] as usize {
                bad += 1;
            }
        }
    }
    bad
}
