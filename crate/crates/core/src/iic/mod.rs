//! Invariant-information-clustering heads arranged as a top-down tree.
//!
//! Each head is an affine map followed by a softmax over `k` clusters. It is
//! trained to maximize the mutual information between the cluster
//! assignments of a latent vector and a noisy copy of it. Child heads only
//! ever see the samples their parent routed to them.

mod checkpoint;
mod head;
mod tree;

pub use checkpoint::{load_tree, save_tree};
pub use head::{
    head_forward, iic_loss, init_head, joint_distribution, loss_and_gradient, perturb, train_head, ClusterHead,
    HeadConfig, HeadGradient, PROB_FLOOR,
};
pub use tree::{assign_labels, build_tree, ClusterTree, HierarchicalLabelMap, TreeConfig, TreeNode, NO_LABEL};
