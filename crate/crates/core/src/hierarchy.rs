//! Concept hierarchy over a dataset pool.
//!
//! Every node carries a local probability; siblings' local probabilities sum
//! to one, so the product along a root-to-leaf path is the global
//! probability of drawing that leaf and the leaf globals sum to one.
//! The attack mutates the tree through [`ConceptHierarchy::adjust`], which
//! walks from a leaf up to the children of the root, shifting mass between
//! the target node and its siblings and rebalancing dominant nodes.

use std::fmt::Write as _;

use rand::Rng;

use crate::datapool::DatasetPool;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Lower bound applied to every local probability after a group update.
pub const PROB_FLOOR: f64 = 1e-6;

/// The pool class a leaf stands for: dataset index and class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafConcept {
    pub dataset: usize,
    pub class: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptNode {
    id: NodeId,
    level: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    local_prob: f64,
    concept: Option<LeafConcept>,
}

impl ConceptNode {
    pub fn id(&self) -> NodeId {
        self.id
    }

    /// 1 for the root, `num_levels` for leaves.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn local_prob(&self) -> f64 {
        self.local_prob
    }

    pub fn concept(&self) -> Option<LeafConcept> {
        self.concept
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Siblings of a node, excluding the node itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiblingSet {
    pub node: NodeId,
    pub members: Vec<NodeId>,
}

impl SiblingSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Sign of the feedback applied by [`ConceptHierarchy::adjust`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feedback {
    Positive,
    Negative,
}

impl Feedback {
    pub fn sign(self) -> f64 {
        match self {
            Feedback::Positive => 1.0,
            Feedback::Negative => -1.0,
        }
    }
}

/// Shape used to build arbitrary hierarchies; all leaves must end up on the
/// same level.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeShape {
    Leaf(LeafConcept),
    Branch(Vec<TreeShape>),
}

/// One row of a hierarchy snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafProbability {
    pub leaf: NodeId,
    pub concept: LeafConcept,
    pub global: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptHierarchy {
    nodes: Vec<ConceptNode>,
    num_levels: usize,
}

impl ConceptHierarchy {
    /// Three-level tree: root, one node per dataset, one leaf per class.
    pub fn build_from_pool(pool: &DatasetPool) -> Result<Self> {
        if pool.datasets().is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut branches = Vec::with_capacity(pool.datasets().len());
        for (d, ds) in pool.datasets().iter().enumerate() {
            if ds.classes().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{}` has no classes",
                    ds.name()
                )));
            }
            let mut leaves = Vec::with_capacity(ds.num_classes());
            for class in ds.classes() {
                if class.is_empty() {
                    return Err(Error::EmptyClass {
                        dataset: ds.name().to_string(),
                        class: class.id(),
                    });
                }
                leaves.push(TreeShape::Leaf(LeafConcept {
                    dataset: d,
                    class: class.id(),
                }));
            }
            branches.push(TreeShape::Branch(leaves));
        }
        Self::from_shape(&TreeShape::Branch(branches))
    }

    /// Three-level tree with `classes[d]` leaves under dataset node `d`;
    /// leaf concepts are `(d, 0..classes[d])`.
    pub fn with_shape(classes: &[usize]) -> Result<Self> {
        let branches = classes
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                TreeShape::Branch(
                    (0..n as u32)
                        .map(|class| TreeShape::Leaf(LeafConcept { dataset: d, class }))
                        .collect(),
                )
            })
            .collect();
        Self::from_shape(&TreeShape::Branch(branches))
    }

    /// Builds a tree breadth-first, so node ids run level by level, left to
    /// right. Local probabilities start at `1/q` for a group of `q` siblings.
    pub fn from_shape(root: &TreeShape) -> Result<Self> {
        let mut nodes: Vec<ConceptNode> = Vec::new();
        let mut queue: std::collections::VecDeque<(&TreeShape, Option<NodeId>, usize, f64)> =
            std::collections::VecDeque::new();
        queue.push_back((root, None, 1, 1.0));
        let mut leaf_level = None;
        while let Some((shape, parent, level, prob)) = queue.pop_front() {
            let id = nodes.len();
            let concept = match shape {
                TreeShape::Leaf(c) => {
                    if *leaf_level.get_or_insert(level) != level {
                        return Err(Error::InvalidArgument(
                            "all leaves must sit on the same level".into(),
                        ));
                    }
                    Some(*c)
                }
                TreeShape::Branch(children) => {
                    if children.is_empty() {
                        return Err(Error::InvalidArgument("branch without children".into()));
                    }
                    let q = children.len() as f64;
                    for child in children {
                        queue.push_back((child, Some(id), level + 1, 1.0 / q));
                    }
                    None
                }
            };
            nodes.push(ConceptNode {
                id,
                level,
                parent,
                children: Vec::new(),
                local_prob: prob,
                concept,
            });
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
        }
        Ok(Self {
            nodes,
            num_levels: leaf_level.unwrap_or(1),
        })
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    /// Total number of nodes including the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &ConceptNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ConceptNode> + '_ {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn siblings(&self, node: NodeId) -> SiblingSet {
        let members = match self.nodes[node].parent {
            Some(p) => self.nodes[p]
                .children
                .iter()
                .copied()
                .filter(|&k| k != node)
                .collect(),
            None => Vec::new(),
        };
        SiblingSet { node, members }
    }

    /// Top-down random walk following local probabilities.
    pub fn random_walk<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        let mut node = self.root();
        while !self.nodes[node].children.is_empty() {
            let children = &self.nodes[node].children;
            let total: f64 = children.iter().map(|&c| self.nodes[c].local_prob).sum();
            let mut u = rng.random::<f64>() * total;
            let mut next = *children.last().expect("non-empty");
            for &c in children {
                u -= self.nodes[c].local_prob;
                if u < 0.0 {
                    next = c;
                    break;
                }
            }
            node = next;
        }
        node
    }

    /// Product of local probabilities from the root down to `node`.
    pub fn global_probability(&self, node: NodeId) -> f64 {
        let mut p = 1.0;
        let mut cur = Some(node);
        while let Some(id) = cur {
            p *= self.nodes[id].local_prob;
            cur = self.nodes[id].parent;
        }
        p
    }

    /// Global probability of every leaf, in node-id order.
    pub fn leaf_globals(&self) -> Vec<(NodeId, f64)> {
        let mut global = vec![0.0; self.nodes.len()];
        for node in &self.nodes {
            global[node.id] = match node.parent {
                Some(p) => global[p] * node.local_prob,
                None => node.local_prob,
            };
        }
        self.leaves().map(|n| (n.id, global[n.id])).collect()
    }

    /// Leaves sorted by descending global probability, ties by node id.
    pub fn snapshot(&self) -> Vec<LeafProbability> {
        let mut rows: Vec<LeafProbability> = self
            .leaf_globals()
            .into_iter()
            .map(|(leaf, global)| LeafProbability {
                leaf,
                concept: self.nodes[leaf].concept.expect("leaves carry a concept"),
                global,
            })
            .collect();
        rows.sort_by(|a, b| b.global.total_cmp(&a.global).then(a.leaf.cmp(&b.leaf)));
        rows
    }

    /// Applies one sample's feedback from `leaf` up to the children of the
    /// root. At level `j` the target node gains `w·δ(j)`, each of its `|U|`
    /// siblings loses `w·δ(j)/|U|`, the target is rebalanced against its
    /// siblings, and the group is floored at [`PROB_FLOOR`] and renormalized.
    /// Only children are left at probability one.
    pub fn adjust(&mut self, leaf: NodeId, feedback: Feedback, delta: impl Fn(usize) -> f64) {
        assert!(
            self.nodes[leaf].is_leaf(),
            "feedback must start at a leaf, node {leaf} has children"
        );
        let w = feedback.sign();
        let mut node = leaf;
        while let Some(parent) = self.nodes[node].parent {
            let group_len = self.nodes[parent].children.len();
            if group_len > 1 {
                let step = w * delta(self.nodes[node].level);
                let share = step / (group_len - 1) as f64;
                for idx in 0..group_len {
                    let k = self.nodes[parent].children[idx];
                    if k == node {
                        self.nodes[k].local_prob += step;
                    } else {
                        self.nodes[k].local_prob -= share;
                    }
                }
                self.rebalance(node);
                self.floor_and_normalize(parent);
            }
            node = parent;
        }
    }

    /// If `node` outweighs all of its siblings together, takes the excess
    /// `d = p − Σ siblings` from it and spreads `d/|U|` to each sibling.
    /// Returns the amount moved.
    pub fn rebalance(&mut self, node: NodeId) -> f64 {
        let Some(parent) = self.nodes[node].parent else {
            return 0.0;
        };
        let group_len = self.nodes[parent].children.len();
        if group_len < 2 {
            return 0.0;
        }
        let p = self.nodes[node].local_prob;
        let others: f64 = self.nodes[parent]
            .children
            .iter()
            .filter(|&&k| k != node)
            .map(|&k| self.nodes[k].local_prob)
            .sum();
        if p <= others {
            return 0.0;
        }
        let excess = p - others;
        let share = excess / (group_len - 1) as f64;
        for idx in 0..group_len {
            let k = self.nodes[parent].children[idx];
            if k == node {
                self.nodes[k].local_prob -= excess;
            } else {
                self.nodes[k].local_prob += share;
            }
        }
        excess
    }

    fn floor_and_normalize(&mut self, parent: NodeId) {
        let mut sum = 0.0;
        for idx in 0..self.nodes[parent].children.len() {
            let k = self.nodes[parent].children[idx];
            let p = self.nodes[k].local_prob.max(PROB_FLOOR);
            self.nodes[k].local_prob = p;
            sum += p;
        }
        for idx in 0..self.nodes[parent].children.len() {
            let k = self.nodes[parent].children[idx];
            self.nodes[k].local_prob /= sum;
        }
    }

    /// Overwrites the local probabilities of `parent`'s children. The values
    /// must be non-negative and sum to one within 1e-9.
    pub fn set_group(&mut self, parent: NodeId, probs: &[f64]) -> Result<()> {
        let children = self.nodes[parent].children.clone();
        if probs.len() != children.len() {
            return Err(Error::DimensionMismatch {
                expected: children.len(),
                actual: probs.len(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "group probabilities must lie in [0, 1] and sum to 1 (sum {sum})"
            )));
        }
        for (&k, &p) in children.iter().zip(probs) {
            self.nodes[k].local_prob = p;
        }
        Ok(())
    }

    /// Largest deviation from one over all sibling-group sums.
    pub fn max_group_error(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| !n.children.is_empty())
            .map(|n| {
                let s: f64 = n.children.iter().map(|&c| self.nodes[c].local_prob).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Tab-separated dump: `levels` and `nodes` header lines, then one
    /// `id level parent local_prob` line per node (`-` for the root's parent).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "levels\t{}", self.num_levels);
        let _ = writeln!(out, "nodes\t{}", self.nodes.len());
        for n in &self.nodes {
            let parent = n.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{}\t{}\t{}\t{:?}", n.id, n.level, parent, n.local_prob);
        }
        out
    }

    /// Restores probabilities written by [`to_text`](Self::to_text) onto the
    /// tree built from `pool`. The structure must match exactly.
    pub fn from_text(text: &str, pool: &DatasetPool) -> Result<Self> {
        let mut h = Self::build_from_pool(pool)?;
        let bad = |line: usize, reason: String| Error::MalformedFile {
            offset: line as u64,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut header = |key: &str| -> Result<usize> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| bad(0, format!("missing `{key}` header")))?;
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| bad(i, format!("expected `{key}<TAB>value`")))?;
            if k != key {
                return Err(bad(i, format!("expected `{key}`, found `{k}`")));
            }
            v.trim().parse().map_err(|_| bad(i, format!("bad `{key}` value")))
        };
        let levels = header("levels")?;
        let count = header("nodes")?;
        if levels != h.num_levels || count != h.nodes.len() {
            return Err(bad(
                0,
                format!(
                    "snapshot has {levels} levels/{count} nodes, pool gives {}/{}",
                    h.num_levels,
                    h.nodes.len()
                ),
            ));
        }
        let mut seen = 0;
        for (i, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(i, format!("expected 4 fields, found {}", fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|_| bad(i, "bad id".into()))?;
            let level: usize = fields[1].parse().map_err(|_| bad(i, "bad level".into()))?;
            let parent = match fields[2] {
                "-" => None,
                p => Some(p.parse::<usize>().map_err(|_| bad(i, "bad parent".into()))?),
            };
            let prob: f64 = fields[3].parse().map_err(|_| bad(i, "bad probability".into()))?;
            let node = h
                .nodes
                .get_mut(id)
                .ok_or_else(|| bad(i, format!("unknown node {id}")))?;
            if node.level != level || node.parent != parent {
                return Err(bad(i, format!("node {id} does not match the pool's hierarchy")));
            }
            node.local_prob = prob;
            seen += 1;
        }
        if seen != count {
            return Err(bad(0, format!("expected {count} node lines, found {seen}")));
        }
        if h.max_group_error() > 1e-9 {
            return Err(bad(0, "sibling probabilities do not sum to 1".into()));
        }
        Ok(h)
    }
}
