use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::head::ClusterHead;
use super::tree::{node_id, ClusterTree, TreeNode};
use crate::dbn::checkpoint::{read_f32, write_f32};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    path: Vec<usize>,
    subset_size: usize,
    cluster_sizes: Vec<usize>,
    /// Child ids per cluster.
    children: Vec<Option<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeManifest {
    k: usize,
    max_depth: usize,
    min_node_samples: usize,
    input_dim: usize,
    nodes: Vec<NodeEntry>,
}

/// Writes `tree_manifest.json` and `node_<id>_{A,bias}.bin` per node.
pub fn save_tree(tree: &ClusterTree, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes = tree
        .nodes()
        .into_iter()
        .map(|n| {
            write_f32(&dir.join(format!("node_{}_A.bin", n.id())), n.head.weights.iter().copied())?;
            write_f32(&dir.join(format!("node_{}_bias.bin", n.id())), n.head.bias.iter().copied())?;
            Ok(NodeEntry {
                id: n.id().to_string(),
                path: n.path.clone(),
                subset_size: n.subset_size,
                cluster_sizes: n.cluster_sizes.clone(),
                children: n.children.iter().map(|c| c.as_ref().map(|c| c.id().to_string())).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = TreeManifest {
        k: tree.k,
        max_depth: tree.max_depth,
        min_node_samples: tree.min_node_samples,
        input_dim: tree.input_dim(),
        nodes,
    };
    let path = dir.join("tree_manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_tree(dir: &Path) -> Result<ClusterTree> {
    let path = dir.join("tree_manifest.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TreeManifest = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let root_entry = manifest
        .nodes
        .iter()
        .find(|n| n.path.is_empty())
        .ok_or_else(|| Error::Header {
            path: path.clone(),
            reason: "no root node".into(),
        })?;
    let root = load_node(dir, &manifest, root_entry, 0)?;
    Ok(ClusterTree {
        root,
        k: manifest.k,
        max_depth: manifest.max_depth,
        min_node_samples: manifest.min_node_samples,
    })
}

fn load_node(dir: &Path, m: &TreeManifest, entry: &NodeEntry, depth: usize) -> Result<TreeNode> {
    if depth >= m.max_depth || entry.id != node_id(&entry.path) || entry.children.len() != m.k {
        return Err(Error::Invalid(format!("inconsistent tree node {}", entry.id)));
    }
    let weights = Array2::from_shape_vec(
        (m.input_dim, m.k),
        read_f32(&dir.join(format!("node_{}_A.bin", entry.id)), m.input_dim * m.k)?,
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    let bias = Array1::from(read_f32(&dir.join(format!("node_{}_bias.bin", entry.id)), m.k)?);
    let children = entry
        .children
        .iter()
        .map(|c| match c {
            None => Ok(None),
            Some(id) => {
                let child = m
                    .nodes
                    .iter()
                    .find(|n| &n.id == id)
                    .ok_or_else(|| Error::Invalid(format!("missing tree node {id}")))?;
                load_node(dir, m, child, depth + 1).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeNode {
        path: entry.path.clone(),
        head: ClusterHead {
            weights,
            bias,
            node_id: entry.id.clone(),
        },
        subset_size: entry.subset_size,
        cluster_sizes: entry.cluster_sizes.clone(),
        children,
    })
}
