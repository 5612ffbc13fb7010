//! Binary cluster tree over the index set `0..n`.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::ops::Range;

use crate::error::{HssError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterNode {
    /// Half-open 0-based index range `I_τ`.
    pub range: Range<usize>,
    pub level: usize,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Nodes are stored level by level, root first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    leaf_size: usize,
    n: usize,
}

/// User-described nested partition, see [`ClusterTree::from_splits`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Partition {
    Leaf(Range<usize>),
    Split(Box<Partition>, Box<Partition>),
}

impl Partition {
    pub fn split(a: Partition, b: Partition) -> Self {
        Partition::Split(Box::new(a), Box::new(b))
    }

    fn range(&self) -> Range<usize> {
        match self {
            Partition::Leaf(r) => r.clone(),
            Partition::Split(a, b) => a.range().start..b.range().end,
        }
    }
}

#[derive(Serialize)]
struct NodeDump {
    id: usize,
    start: usize,
    end: usize,
    level: usize,
    children: Option<[usize; 2]>,
}

#[derive(Serialize)]
struct TreeDump {
    n: usize,
    leaf_size: usize,
    levels: usize,
    nodes: Vec<NodeDump>,
}

impl ClusterTree {
    /// Recursive halving (`⌈k/2⌉` left, `⌊k/2⌋` right) until a range fits in
    /// `leaf_size`.
    pub fn build_balanced(n: usize, leaf_size: usize) -> Result<Self> {
        if n == 0 || leaf_size == 0 {
            return Err(HssError::InvalidConfig(format!(
                "cluster tree needs n >= 1 and leaf_size >= 1 (got {n}, {leaf_size})"
            )));
        }
        let mut nodes = vec![ClusterNode {
            range: 0..n,
            level: 0,
            children: None,
            parent: None,
        }];
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let r = nodes[i].range.clone();
            if r.len() <= leaf_size {
                continue;
            }
            let mid = r.start + r.len().div_ceil(2);
            let level = nodes[i].level + 1;
            let c = nodes.len();
            for sub in [r.start..mid, mid..r.end] {
                nodes.push(ClusterNode {
                    range: sub,
                    level,
                    children: None,
                    parent: Some(i),
                });
            }
            nodes[i].children = Some([c, c + 1]);
            queue.extend([c, c + 1]);
        }
        Ok(Self { nodes, leaf_size, n })
    }

    /// Tree with a user-given (possibly unbalanced) shape. Sibling ranges must
    /// be non-empty and adjacent, and the root must start at 0.
    pub fn from_splits(splits: &Partition) -> Result<Self> {
        validate(splits)?;
        let root = splits.range();
        if root.start != 0 {
            return Err(HssError::MalformedTree(format!(
                "root range must start at 0, got {:?}",
                root
            )));
        }
        let mut nodes = Vec::new();
        let mut leaf_size = 0;
        let mut queue: VecDeque<(&Partition, usize, Option<usize>)> = VecDeque::from([(splits, 0, None)]);
        while let Some((p, level, parent)) = queue.pop_front() {
            let i = nodes.len();
            if let Some(par) = parent {
                let node: &mut ClusterNode = &mut nodes[par];
                match &mut node.children {
                    Some(c) => c[1] = i,
                    None => node.children = Some([i, usize::MAX]),
                }
            }
            nodes.push(ClusterNode {
                range: p.range(),
                level,
                children: None,
                parent,
            });
            match p {
                Partition::Leaf(r) => leaf_size = leaf_size.max(r.len()),
                Partition::Split(a, b) => {
                    queue.push_back((a, level + 1, Some(i)));
                    queue.push_back((b, level + 1, Some(i)));
                }
            }
        }
        Ok(Self {
            nodes,
            leaf_size,
            n: root.end,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &ClusterNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels, `levels(𝒯) = max level + 1`.
    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0) + 1
    }

    /// Leaf indices in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            match self.nodes[i].children {
                Some([a, b]) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => out.push(i),
            }
        }
        out
    }

    /// Node indices in post order (children before parents).
    pub fn post_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, false)];
        while let Some((i, expanded)) = stack.pop() {
            match (self.nodes[i].children, expanded) {
                (Some([a, b]), false) => {
                    stack.push((i, true));
                    stack.push((b, false));
                    stack.push((a, false));
                }
                _ => out.push(i),
            }
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HssError::MalformedTree(m));
        if self.nodes.is_empty() || self.nodes[0].range != (0..self.n) {
            return bad("root must cover 0..n".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_empty() {
                return bad(format!("node {i} is empty"));
            }
            if let Some([a, b]) = node.children {
                let (ca, cb) = (&self.nodes[a], &self.nodes[b]);
                if ca.range.start != node.range.start || ca.range.end != cb.range.start || cb.range.end != node.range.end {
                    return bad(format!("children of node {i} do not partition its range"));
                }
                if ca.level != node.level + 1 || cb.level != node.level + 1 {
                    return bad(format!("children of node {i} have wrong level"));
                }
                if ca.parent != Some(i) || cb.parent != Some(i) {
                    return bad(format!("children of node {i} have wrong parent"));
                }
            }
        }
        let mut next = 0;
        for l in self.leaves() {
            if self.nodes[l].range.start != next {
                return bad("leaf ranges are not contiguous".into());
            }
            next = self.nodes[l].range.end;
        }
        if next != self.n {
            return bad("leaves do not cover 0..n".into());
        }
        Ok(())
    }

    /// JSON dump: node id, `[start, end)`, level, children.
    pub fn to_json(&self) -> String {
        let dump = TreeDump {
            n: self.n,
            leaf_size: self.leaf_size,
            levels: self.levels(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, nd)| NodeDump {
                    id,
                    start: nd.range.start,
                    end: nd.range.end,
                    level: nd.level,
                    children: nd.children,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("tree dump serializes")
    }
}

fn validate(p: &Partition) -> Result<()> {
    match p {
        Partition::Leaf(r) if r.is_empty() => Err(HssError::MalformedTree(format!("empty leaf range {:?}", r))),
        Partition::Leaf(_) => Ok(()),
        Partition::Split(a, b) => {
            validate(a)?;
            validate(b)?;
            let (ra, rb) = (a.range(), b.range());
            if ra.end != rb.start {
                let what = if ra.end > rb.start { "overlapping" } else { "non-contiguous" };
                return Err(HssError::MalformedTree(format!("{what} sibling ranges {:?} and {:?}", ra, rb)));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_eight_by_two() {
        let t = ClusterTree::build_balanced(8, 2).unwrap();
        assert_eq!(t.len(), 7);
        let leaves = t.leaves();
        assert_eq!(leaves.len(), 4);
        assert!(leaves.iter().all(|&l| t.node(l).len() == 2));
        assert_eq!(t.levels(), 3);
        t.validate().unwrap();
    }

    #[test]
    fn single_leaf() {
        let t = ClusterTree::build_balanced(5, 8).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.levels(), 1);
        assert!(t.node(0).is_leaf());
    }

    #[test]
    fn large_tree_depth() {
        let t = ClusterTree::build_balanced(500_000, 128).unwrap();
        assert_eq!(t.levels() - 1, 12);
        let sizes: Vec<usize> = t.leaves().iter().map(|&l| t.node(l).len()).collect();
        let lo = 500_000 >> 12;
        assert!(sizes.iter().all(|&s| s == lo || s == lo + 1));
    }

    #[test]
    fn splits_simple() {
        let p = Partition::split(Partition::Leaf(0..3), Partition::Leaf(3..10));
        let t = ClusterTree::from_splits(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.n(), 10);
        assert_eq!(t.node(1).len(), 3);
        assert_eq!(t.node(2).len(), 7);
        t.validate().unwrap();
    }

    #[test]
    fn splits_overlap_rejected() {
        let p = Partition::split(Partition::Leaf(0..4), Partition::Leaf(3..10));
        assert!(matches!(ClusterTree::from_splits(&p), Err(HssError::MalformedTree(_))));
        let p = Partition::split(Partition::Leaf(0..3), Partition::Leaf(4..10));
        assert!(matches!(ClusterTree::from_splits(&p), Err(HssError::MalformedTree(_))));
        let p = Partition::split(Partition::Leaf(1..3), Partition::Leaf(3..10));
        assert!(matches!(ClusterTree::from_splits(&p), Err(HssError::MalformedTree(_))));
    }

    #[test]
    fn degenerate_chain() {
        // Left child recurses, right child is a leaf of size 4; depth 5.
        let leaf = 4;
        let mut p = Partition::Leaf(0..leaf);
        let mut end = leaf;
        for _ in 0..5 {
            p = Partition::split(p, Partition::Leaf(end..end + leaf));
            end += leaf;
        }
        let t = ClusterTree::from_splits(&p).unwrap();
        assert_eq!(t.levels(), 6);
        t.validate().unwrap();
    }

    #[test]
    fn splits_from_json() {
        let p: Partition = serde_json::from_str(r#"[{"start":0,"end":3},{"start":3,"end":10}]"#).unwrap();
        assert_eq!(ClusterTree::from_splits(&p).unwrap().n(), 10);
    }

    #[test]
    fn json_dump_lists_nodes() {
        let t = ClusterTree::build_balanced(8, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 7);
        assert_eq!(v["nodes"][0]["children"], serde_json::json!([1, 2]));
        assert_eq!(v["nodes"][2]["start"], 4);
    }

    proptest! {
        #[test]
        fn balanced_invariants(n in 1usize..5000, leaf in 1usize..300) {
            let t = ClusterTree::build_balanced(n, leaf).unwrap();
            t.validate().unwrap();
            for node in t.nodes() {
                if let Some([a, b]) = node.children {
                    prop_assert_eq!(node.len(), t.node(a).len() + t.node(b).len());
                    prop_assert_eq!(t.node(a).len(), node.len().div_ceil(2));
                } else {
                    prop_assert!(node.len() <= leaf);
                }
            }
            let max_level = t.nodes().iter().map(|x| x.level).max().unwrap();
            prop_assert_eq!(max_level, t.levels() - 1);
            let post = t.post_order();
            prop_assert_eq!(post.len(), t.len());
            prop_assert_eq!(*post.last().unwrap(), 0);
        }
    }
}
