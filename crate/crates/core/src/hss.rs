//! HSS container, matvec, dense reconstruction and statistics.

use serde::Serialize;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::compress::NodeScratch;
use crate::dense::{DenseMatrix, IdResult};
use crate::error::{HssError, Result};
use crate::tree::ClusterTree;

/// Compression state of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeState {
    Untouched,
    PartiallyCompressed,
    Compressed,
}

/// Per-node instrumentation; index 0 is the row side, 1 the column side.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub id_calls: [usize; 2],
    pub id_failures: [usize; 2],
    pub qr_calls: [usize; 2],
    /// Sampling rounds in which the node was left partially compressed.
    pub partial_rounds: usize,
}

#[derive(Debug)]
pub struct HssNode {
    /// Index of the corresponding cluster-tree node.
    pub id: usize,
    pub range: Range<usize>,
    pub level: usize,
    pub state: NodeState,
    pub d: Option<DenseMatrix>,
    pub b12: Option<DenseMatrix>,
    pub b21: Option<DenseMatrix>,
    pub u: Option<IdResult>,
    pub v: Option<IdResult>,
    /// Global row indices `I^r_τ` selected by `U`.
    pub ir: Vec<usize>,
    /// Global column indices `I^c_τ` selected by `V`.
    pub ic: Vec<usize>,
    pub counters: NodeCounters,
    pub children: Option<Box<[HssNode; 2]>>,
    pub(crate) scratch: Option<Box<NodeScratch>>,
}

impl HssNode {
    /// Untouched skeleton mirroring `tree` below node `idx`.
    pub fn skeleton(tree: &ClusterTree, idx: usize) -> Self {
        let c = tree.node(idx);
        Self {
            id: idx,
            range: c.range.clone(),
            level: c.level,
            state: NodeState::Untouched,
            d: None,
            b12: None,
            b21: None,
            u: None,
            v: None,
            ir: Vec::new(),
            ic: Vec::new(),
            counters: NodeCounters::default(),
            children: c
                .children
                .map(|[a, b]| Box::new([Self::skeleton(tree, a), Self::skeleton(tree, b)])),
            scratch: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    pub fn rank_r(&self) -> usize {
        self.u.as_ref().map_or(0, |u| u.rank)
    }

    pub fn rank_c(&self) -> usize {
        self.v.as_ref().map_or(0, |v| v.rank)
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a HssNode)) {
        f(self);
        if let Some(ch) = &self.children {
            ch[0].walk(f);
            ch[1].walk(f);
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut HssNode)) {
        f(self);
        if let Some(ch) = &mut self.children {
            ch[0].walk_mut(f);
            ch[1].walk_mut(f);
        }
    }

    /// Local samples `[τ.Sr, τ.Sc]` retained after compression when the
    /// configuration asks to keep scratch data (selected rows only).
    pub fn local_samples(&self) -> Option<[&DenseMatrix; 2]> {
        self.scratch.as_deref().map(|s| [&s.s[0], &s.s[1]])
    }

    fn stored_entries(&self) -> usize {
        let m = |x: &Option<DenseMatrix>| x.as_ref().map_or(0, |a| a.rows() * a.cols());
        let e = |x: &Option<IdResult>| x.as_ref().map_or(0, |a| a.stored_entries());
        m(&self.d) + m(&self.b12) + m(&self.b21) + e(&self.u) + e(&self.v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HssStats {
    pub hss_rank: usize,
    pub mem_bytes: usize,
    /// Maximum rank per level, index 0 being the root (always 0).
    pub per_level_ranks: Vec<usize>,
}

#[derive(Serialize)]
struct NodeDump {
    id: usize,
    level: usize,
    start: usize,
    end: usize,
    state: NodeState,
    rank_r: usize,
    rank_c: usize,
    d_dims: Option<[usize; 2]>,
    b12_dims: Option<[usize; 2]>,
    b21_dims: Option<[usize; 2]>,
    counters: NodeCounters,
}

/// Maximum order accepted by [`HssMatrix::reconstruct_dense`].
pub const DENSE_LIMIT: usize = 20_000;

#[derive(Debug)]
pub struct HssMatrix {
    tree: ClusterTree,
    root: HssNode,
    matvec_flops: AtomicU64,
}

impl HssMatrix {
    pub fn from_parts(tree: ClusterTree, root: HssNode) -> Self {
        Self {
            tree,
            root,
            matvec_flops: AtomicU64::new(0),
        }
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn root(&self) -> &HssNode {
        &self.root
    }

    pub fn is_compressed(&self) -> bool {
        let mut ok = true;
        self.root.walk(&mut |n| ok &= n.state == NodeState::Compressed);
        ok
    }

    /// Nodes in pre-order.
    pub fn nodes(&self) -> Vec<&HssNode> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| out.push(n));
        out
    }

    /// Total flops spent in [`matvec`](Self::matvec) calls so far.
    pub fn matvec_flops(&self) -> u64 {
        self.matvec_flops.load(Ordering::Relaxed)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matvec_counted(x).map(|(y, _)| y)
    }

    /// `y = H x` by an up-sweep through the `V` bases and a down-sweep through
    /// `B` and the `U` bases; also returns the flops of this call.
    pub fn matvec_counted(&self, x: &[f64]) -> Result<(Vec<f64>, u64)> {
        if x.len() != self.n() {
            return Err(HssError::DimensionMismatch(format!("vector length {} vs order {}", x.len(), self.n())));
        }
        if !self.is_compressed() {
            return Err(HssError::NotCompressed);
        }
        let mut flops = 0u64;
        let mut xhat = vec![Vec::new(); self.tree.len()];
        up_sweep(&self.root, x, &mut xhat, &mut flops);
        let mut y = vec![0.0; self.n()];
        down_sweep(&self.root, x, &xhat, Vec::new(), &mut y, &mut flops);
        self.matvec_flops.fetch_add(flops, Ordering::Relaxed);
        Ok((y, flops))
    }

    /// Dense `N x N` realization, expanding the nested bases recursively.
    pub fn reconstruct_dense(&self) -> Result<DenseMatrix> {
        let n = self.n();
        if n > DENSE_LIMIT {
            return Err(HssError::TooLarge { n, limit: DENSE_LIMIT });
        }
        if !self.is_compressed() {
            return Err(HssError::NotCompressed);
        }
        let mut out = DenseMatrix::zeros(n, n);
        expand(&self.root, &mut out);
        Ok(out)
    }

    pub fn stats(&self) -> HssStats {
        let mut per_level = vec![0; self.tree.levels()];
        let mut entries = 0;
        self.root.walk(&mut |nd| {
            per_level[nd.level] = per_level[nd.level].max(nd.rank_r().max(nd.rank_c()));
            entries += nd.stored_entries();
        });
        HssStats {
            hss_rank: per_level.iter().copied().max().unwrap_or(0),
            mem_bytes: 8 * entries,
            per_level_ranks: per_level,
        }
    }

    /// JSON structure dump with per-node state, ranks and block sizes.
    pub fn to_json(&self) -> String {
        let dims = |x: &Option<DenseMatrix>| x.as_ref().map(|a| [a.rows(), a.cols()]);
        let nodes: Vec<NodeDump> = self
            .nodes()
            .into_iter()
            .map(|nd| NodeDump {
                id: nd.id,
                level: nd.level,
                start: nd.range.start,
                end: nd.range.end,
                state: nd.state,
                rank_r: nd.rank_r(),
                rank_c: nd.rank_c(),
                d_dims: dims(&nd.d),
                b12_dims: dims(&nd.b12),
                b21_dims: dims(&nd.b21),
                counters: nd.counters.clone(),
            })
            .collect();
        serde_json::to_string_pretty(&nodes).expect("hss dump serializes")
    }
}

fn up_sweep(nd: &HssNode, x: &[f64], xhat: &mut [Vec<f64>], flops: &mut u64) {
    let local: Vec<f64> = match &nd.children {
        None => x[nd.range.clone()].to_vec(),
        Some(ch) => {
            up_sweep(&ch[0], x, xhat, flops);
            up_sweep(&ch[1], x, xhat, flops);
            [xhat[ch[0].id].as_slice(), xhat[ch[1].id].as_slice()].concat()
        }
    };
    if let Some(v) = &nd.v {
        *flops += v.apply_flops(1);
        xhat[nd.id] = v.apply_t_vec(&local);
    }
}

// `yhat` is the coefficient vector in the span of this node's U (empty at the root).
fn down_sweep(nd: &HssNode, x: &[f64], xhat: &[Vec<f64>], yhat: Vec<f64>, y: &mut [f64], flops: &mut u64) {
    let expanded = match &nd.u {
        Some(u) if !yhat.is_empty() => {
            *flops += u.apply_flops(1);
            u.apply_vec(&yhat)
        }
        Some(u) => vec![0.0; u.rows()],
        None => Vec::new(),
    };
    match &nd.children {
        None => {
            let d = nd.d.as_ref().expect("compressed leaf has D");
            let mut out = d.matvec(&x[nd.range.clone()]);
            *flops += 2 * (d.rows() * d.cols()) as u64;
            if !expanded.is_empty() {
                out.iter_mut().zip(&expanded).for_each(|(o, e)| *o += e);
            }
            y[nd.range.clone()].copy_from_slice(&out);
        }
        Some(ch) => {
            let (r1, r2) = (ch[0].rank_r(), ch[1].rank_r());
            let (mut y1, mut y2) = if expanded.is_empty() {
                (vec![0.0; r1], vec![0.0; r2])
            } else {
                (expanded[..r1].to_vec(), expanded[r1..].to_vec())
            };
            let b12 = nd.b12.as_ref().expect("compressed node has B12");
            let b21 = nd.b21.as_ref().expect("compressed node has B21");
            for (a, b) in y1.iter_mut().zip(b12.matvec(&xhat[ch[1].id])) {
                *a += b;
            }
            for (a, b) in y2.iter_mut().zip(b21.matvec(&xhat[ch[0].id])) {
                *a += b;
            }
            *flops += 2 * (b12.rows() * b12.cols() + b21.rows() * b21.cols()) as u64;
            down_sweep(&ch[0], x, xhat, y1, y, flops);
            down_sweep(&ch[1], x, xhat, y2, y, flops);
        }
    }
}

// Writes the node's diagonal block into `out` and returns its expanded (U, V).
fn expand(nd: &HssNode, out: &mut DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (ubig_local, vbig_local) = match &nd.children {
        None => {
            let d = nd.d.as_ref().expect("compressed leaf has D");
            out.set_block(nd.range.start, nd.range.start, d);
            (None, None)
        }
        Some(ch) => {
            let (u1, v1) = expand(&ch[0], out);
            let (u2, v2) = expand(&ch[1], out);
            let b12 = nd.b12.as_ref().expect("compressed node has B12");
            let b21 = nd.b21.as_ref().expect("compressed node has B21");
            out.set_block(ch[0].range.start, ch[1].range.start, &u1.matmul(b12).matmul(&v2.transpose()));
            out.set_block(ch[1].range.start, ch[0].range.start, &u2.matmul(b21).matmul(&v1.transpose()));
            (Some((u1, u2)), Some((v1, v2)))
        }
    };
    let big = |basis: &Option<IdResult>, kids: Option<(DenseMatrix, DenseMatrix)>| -> DenseMatrix {
        let m = nd.range.len();
        let Some(b) = basis else {
            return DenseMatrix::zeros(m, 0);
        };
        let t = b.to_dense();
        match kids {
            None => t,
            Some((k1, k2)) => {
                let r1 = k1.cols();
                k1.matmul(&t.row_range(0..r1)).vcat(&k2.matmul(&t.row_range(r1..t.rows())))
            }
        }
    };
    (big(&nd.u, ubig_local), big(&nd.v, vbig_local))
}
