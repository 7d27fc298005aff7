use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::head::{init_head, train_head, ClusterHead, HeadConfig};
use crate::rng::derive_seed;
use crate::{par, Error, Result};

/// Leaf value of pixels that carry no sample.
pub const NO_LABEL: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub k: usize,
    pub max_depth: usize,
    pub min_node_samples: usize,
    pub head: HeadConfig,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            k: 5,
            max_depth: 2,
            min_node_samples: 500,
            head: HeadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Cluster indices from the root down to this node.
    pub path: Vec<usize>,
    pub head: ClusterHead,
    /// Samples this node was trained on.
    pub subset_size: usize,
    /// Samples routed to each cluster at training time.
    pub cluster_sizes: Vec<usize>,
    pub children: Vec<Option<TreeNode>>,
}

impl TreeNode {
    pub fn id(&self) -> &str {
        &self.head.node_id
    }

    pub fn child(&self, cluster: usize) -> Option<&TreeNode> {
        self.children.get(cluster).and_then(Option::as_ref)
    }

    /// This node followed by all descendants, depth first.
    pub fn walk(&self) -> Vec<&TreeNode> {
        let mut out = vec![self];
        for c in self.children.iter().flatten() {
            out.extend(c.walk());
        }
        out
    }
}

pub(crate) fn node_id(path: &[usize]) -> String {
    let mut id = String::from("r");
    for c in path {
        id.push('-');
        id.push_str(&c.to_string());
    }
    id
}

fn node_seed(base: u64, path: &[usize]) -> u64 {
    path.iter().fold(derive_seed(base, 0x7EE), |s, &c| derive_seed(s, c as u64 + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub root: TreeNode,
    pub k: usize,
    pub max_depth: usize,
    pub min_node_samples: usize,
}

impl ClusterTree {
    pub fn input_dim(&self) -> usize {
        self.root.head.input_dim()
    }

    pub fn nodes(&self) -> Vec<&TreeNode> {
        self.root.walk()
    }

    /// Path of cluster indices for one feature vector.
    pub fn route(&self, x: &[f64]) -> Vec<usize> {
        let mut node = &self.root;
        let mut path = Vec::with_capacity(self.max_depth);
        loop {
            let c = node.head.argmax_row(x);
            path.push(c);
            match node.child(c) {
                Some(child) => node = child,
                None => return path,
            }
        }
    }

    /// `sum_l path[l] * k^(max_depth-1-l)`, treating missing levels as 0.
    /// Collision-free: a cluster either always has a child or never does.
    pub fn encode_path(&self, path: &[usize]) -> i64 {
        (0..self.max_depth).fold(0i64, |acc, l| acc * self.k as i64 + path.get(l).copied().unwrap_or(0) as i64)
    }

    pub fn leaf_count_bound(&self) -> usize {
        self.k.pow(self.max_depth as u32)
    }
}

fn grow(features: ArrayView2<f64>, indices: &[usize], path: Vec<usize>, cfg: &TreeConfig) -> Result<TreeNode> {
    let id = node_id(&path);
    let seed = node_seed(cfg.head.seed, &path);
    let head = init_head(features.ncols(), cfg.k, seed, id)?;
    let subset = features.select(Axis(0), indices);
    let head_cfg = HeadConfig { seed, ..cfg.head.clone() };
    let (head, trace) = train_head(head, subset.view(), &head_cfg)?;
    log::info!(
        "node {} ({} samples): loss {:?}",
        head.node_id,
        indices.len(),
        trace.last()
    );

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
    for (&idx, row) in indices.iter().zip(subset.rows()) {
        let row = row.to_vec();
        groups[head.argmax_row(&row)].push(idx);
    }
    let cluster_sizes = groups.iter().map(Vec::len).collect();

    let children = if path.len() + 1 < cfg.max_depth {
        // siblings are independent; seeds depend only on the path
        par::map_indexed(cfg.k, |c| {
            if groups[c].len() >= cfg.min_node_samples && groups[c].len() >= cfg.k {
                let mut child_path = path.clone();
                child_path.push(c);
                grow(features, &groups[c], child_path, cfg).map(Some)
            } else {
                Ok(None)
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; cfg.k]
    };

    Ok(TreeNode {
        path,
        head,
        subset_size: indices.len(),
        cluster_sizes,
        children,
    })
}

/// Trains the root on every sample, routes by argmax, and recursively trains
/// a child for each cluster holding at least `min_node_samples` samples,
/// down to `max_depth` levels.
pub fn build_tree(features: ArrayView2<f64>, cfg: &TreeConfig) -> Result<ClusterTree> {
    if features.nrows() == 0 {
        return Err(Error::Invalid("cannot build a tree without samples".into()));
    }
    if cfg.max_depth == 0 {
        return Err(Error::Invalid("max_depth must be >= 1".into()));
    }
    if cfg.k < 2 {
        return Err(Error::Invalid("k must be >= 2".into()));
    }
    let all: Vec<usize> = (0..features.nrows()).collect();
    let root = grow(features, &all, Vec::new(), cfg)?;
    Ok(ClusterTree {
        root,
        k: cfg.k,
        max_depth: cfg.max_depth,
        min_node_samples: cfg.min_node_samples,
    })
}

/// Per-pixel hierarchical segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalLabelMap {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub depth: usize,
    /// Encoded leaf per pixel, [`NO_LABEL`] where no sample exists.
    pub leaf: Vec<i64>,
    /// Cluster path per pixel; empty where no sample exists.
    pub paths: Vec<Vec<u16>>,
}

impl HierarchicalLabelMap {
    pub fn labeled_count(&self) -> usize {
        self.leaf.iter().filter(|l| **l != NO_LABEL).count()
    }

    pub fn is_labeled(&self, pixel: usize) -> bool {
        self.leaf[pixel] != NO_LABEL
    }

    /// Encoded label of the path truncated to `levels` levels.
    pub fn truncated(&self, pixel: usize, levels: usize) -> i64 {
        if !self.is_labeled(pixel) {
            return NO_LABEL;
        }
        self.paths[pixel]
            .iter()
            .take(levels)
            .fold(0i64, |acc, &c| acc * self.k as i64 + c as i64)
    }
}

/// Routes every sample down the tree; ties go to the lowest cluster index.
pub fn assign_labels(
    tree: &ClusterTree,
    features: ArrayView2<f64>,
    coords: &[(usize, usize)],
    width: usize,
    height: usize,
) -> Result<HierarchicalLabelMap> {
    if features.ncols() != tree.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, tree expects {}",
            features.ncols(),
            tree.input_dim()
        )));
    }
    if features.nrows() != coords.len() {
        return Err(Error::Shape("one coordinate per sample required".into()));
    }
    if coords.iter().any(|&(r, c)| r >= height || c >= width) {
        return Err(Error::Shape("sample coordinate outside the grid".into()));
    }
    let routed: Vec<Vec<usize>> = par::map_chunks(features.nrows(), par::CHUNK, |range| {
        range
            .map(|i| tree.route(&features.row(i).to_vec()))
            .collect::<Vec<_>>()
    })
    .concat();

    let mut leaf = vec![NO_LABEL; width * height];
    let mut paths = vec![Vec::new(); width * height];
    for (&(r, c), path) in coords.iter().zip(routed) {
        let p = r * width + c;
        leaf[p] = tree.encode_path(&path);
        paths[p] = path.into_iter().map(|c| c as u16).collect();
    }
    Ok(HierarchicalLabelMap {
        width,
        height,
        k: tree.k,
        depth: tree.max_depth,
        leaf,
        paths,
    })
}
