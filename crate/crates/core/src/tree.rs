//! Per-predictor coefficient trees.
//!
//! Nodes live in an arena; node ids are stable indices, the root is
//! [`ROOT`]. Splitting a leaf turns it into an internal node and appends
//! its two children, so replaying the same sequence of splits always
//! produces the same ids.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Branch, Region, Side};

pub type NodeId = usize;
pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        coefficient: f64,
    },
    Split {
        modifier: usize,
        split_point: f64,
        left: NodeId,
        right: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("predictor {0} cannot modify its own coefficient")]
    SelfModification(usize),
    #[error("split point must be finite")]
    NonFiniteSplit,
    #[error("malformed tree: {0}")]
    Malformed(&'static str),
}

/// Leaf of a coefficient tree together with the region it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub id: NodeId,
    pub region: Region,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct CoefficientTree {
    predictor: usize,
    nodes: Vec<TreeNode>,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    predictor: usize,
    nodes: Vec<TreeNode>,
}

impl TryFrom<TreeRepr> for CoefficientTree {
    type Error = TreeError;

    fn try_from(r: TreeRepr) -> Result<Self, Self::Error> {
        let tree = CoefficientTree {
            predictor: r.predictor,
            nodes: r.nodes,
        };
        tree.validate()?;
        Ok(tree)
    }
}

impl From<CoefficientTree> for TreeRepr {
    fn from(t: CoefficientTree) -> Self {
        TreeRepr {
            predictor: t.predictor,
            nodes: t.nodes,
        }
    }
}

impl CoefficientTree {
    /// Single-leaf tree: the predictor's plain linear effect.
    pub fn new(predictor: usize, coefficient: f64) -> Self {
        Self {
            predictor,
            nodes: vec![TreeNode::Leaf { coefficient }],
        }
    }

    pub fn predictor(&self) -> usize {
        self.predictor
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id), Some(TreeNode::Leaf { .. }))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    /// Replace a leaf by a split on `modifier` at `split_point`. Both children
    /// start with the parent's coefficient. Returns `(left, right)`.
    pub fn split_leaf(&mut self, leaf: NodeId, modifier: usize, split_point: f64) -> Result<(NodeId, NodeId), TreeError> {
        if modifier == self.predictor {
            return Err(TreeError::SelfModification(modifier));
        }
        if !split_point.is_finite() {
            return Err(TreeError::NonFiniteSplit);
        }
        let coefficient = match self.nodes.get(leaf) {
            None => return Err(TreeError::UnknownNode(leaf)),
            Some(TreeNode::Split { .. }) => return Err(TreeError::NotALeaf(leaf)),
            Some(TreeNode::Leaf { coefficient }) => *coefficient,
        };
        let left = self.nodes.len();
        let right = left + 1;
        self.nodes.push(TreeNode::Leaf { coefficient });
        self.nodes.push(TreeNode::Leaf { coefficient });
        self.nodes[leaf] = TreeNode::Split {
            modifier,
            split_point,
            left,
            right,
        };
        Ok((left, right))
    }

    pub fn set_leaf_coefficient(&mut self, id: NodeId, value: f64) -> Result<(), TreeError> {
        match self.nodes.get_mut(id) {
            Some(TreeNode::Leaf { coefficient }) => {
                *coefficient = value;
                Ok(())
            }
            Some(_) => Err(TreeError::NotALeaf(id)),
            None => Err(TreeError::UnknownNode(id)),
        }
    }

    /// Leaves in depth-first, left-first order with their regions.
    pub fn leaves(&self) -> Vec<Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT, Region::all())];
        while let Some((id, region)) = stack.pop() {
            match self.nodes[id] {
                TreeNode::Leaf { coefficient } => out.push(Leaf { id, region, coefficient }),
                TreeNode::Split {
                    modifier,
                    split_point,
                    left,
                    right,
                } => {
                    let mut r_right = region.clone();
                    let mut r_left = region;
                    // split points within one path are distinct: the child would be empty otherwise
                    let _ = r_right.push(Branch { modifier, split_point, side: Side::Gt });
                    let _ = r_left.push(Branch { modifier, split_point, side: Side::Le });
                    stack.push((right, r_right));
                    stack.push((left, r_left));
                }
            }
        }
        out
    }

    /// Region covered by any node.
    pub fn region_of(&self, id: NodeId) -> Option<Region> {
        if id >= self.nodes.len() {
            return None;
        }
        let mut path = Vec::new();
        let mut target = id;
        while target != ROOT {
            let (parent, side) = self.nodes.iter().enumerate().find_map(|(p, n)| match *n {
                TreeNode::Split { left, .. } if left == target => Some((p, Side::Le)),
                TreeNode::Split { right, .. } if right == target => Some((p, Side::Gt)),
                _ => None,
            })?;
            if let TreeNode::Split { modifier, split_point, .. } = self.nodes[parent] {
                path.push(Branch { modifier, split_point, side });
            }
            target = parent;
        }
        path.reverse();
        Region::from_branches(path).ok()
    }

    /// Leaf reached by a row whose covariates are given by index.
    #[inline]
    pub fn leaf_for<F: Fn(usize) -> f64>(&self, x: F) -> NodeId {
        let mut id = ROOT;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { .. } => return id,
                TreeNode::Split {
                    modifier,
                    split_point,
                    left,
                    right,
                } => id = if x(modifier) <= split_point { left } else { right },
            }
        }
    }

    /// Coefficient of the predictor for a row.
    #[inline]
    pub fn coefficient_for<F: Fn(usize) -> f64>(&self, x: F) -> f64 {
        match self.nodes[self.leaf_for(x)] {
            TreeNode::Leaf { coefficient } => coefficient,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    /// Distinct modifiers used anywhere in the tree.
    pub fn modifiers(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { modifier, .. } => Some(*modifier),
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }

    /// Modifier and split point at the root, if the tree has split at all.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[ROOT] {
            TreeNode::Split { modifier, split_point, .. } => Some((modifier, split_point)),
            TreeNode::Leaf { .. } => None,
        }
    }

    /// Structural checks: every non-root node has exactly one parent, child
    /// ids are in range, there are no cycles, and the predictor never
    /// modifies itself.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Malformed("no nodes"));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (id, n) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                modifier,
                split_point,
                left,
                right,
            } = *n
            {
                if modifier == self.predictor {
                    return Err(TreeError::SelfModification(modifier));
                }
                if !split_point.is_finite() {
                    return Err(TreeError::NonFiniteSplit);
                }
                for c in [left, right] {
                    if c >= self.nodes.len() || c == ROOT || c == id {
                        return Err(TreeError::Malformed("child id out of range"));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[ROOT] != 0 || parents[1..].iter().any(|&c| c != 1) {
            return Err(TreeError::Malformed("every non-root node needs exactly one parent"));
        }
        // reachability from the root rules out detached cycles
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(TreeError::Malformed("cycle"));
            }
            seen[id] = true;
            if let TreeNode::Split { left, right, .. } = self.nodes[id] {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(TreeError::Malformed("unreachable node"));
        }
        Ok(())
    }
}
