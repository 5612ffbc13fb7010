//! Adaptive HSS construction from random samples and element extraction.

mod node;

pub use node::NodeScratch;

use serde::Serialize;

use crate::dense::{randn, DenseMatrix, RngStream};
use crate::error::{HssError, Result};
use crate::flops::{Phase, PhaseFlops};
use crate::hss::{HssMatrix, HssNode, NodeState};
use crate::operators::MatrixSource;
use crate::tree::ClusterTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Samples double each round; IDs use the oversampling-scaled rule.
    Doubling,
    /// `delta_d` samples per round with the four-condition stopping test.
    Incrementing,
    /// One round with exactly `d0` samples.
    KnownRank,
    /// Start over with twice the samples after every failure.
    HardRestart,
}

/// Stopping test used by [`Strategy::Incrementing`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Relative/absolute conditions on the projected samples.
    Standard,
    /// Absolute-only probabilistic 2-norm bound with parameter `alpha`.
    Hmt { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionConfig {
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub d0: usize,
    pub delta_d: usize,
    /// `None` means `min(N, 5000)`.
    pub d_max: Option<usize>,
    pub strategy: Strategy,
    pub p: usize,
    pub seed: u64,
    pub criterion: Criterion,
    /// Compress sibling subtrees on different threads.
    pub parallel: bool,
    /// Keep per-node samples after compression (for inspection in tests).
    pub keep_scratch: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            eps_rel: 1e-6,
            eps_abs: 1e-8,
            d0: 128,
            delta_d: 64,
            d_max: None,
            strategy: Strategy::Incrementing,
            p: 10,
            seed: 1,
            criterion: Criterion::Standard,
            parallel: false,
            keep_scratch: false,
        }
    }
}

pub const DEFAULT_D_MAX: usize = 5000;

impl CompressionConfig {
    pub fn resolved_d_max(&self, n: usize) -> usize {
        self.d_max.unwrap_or(n.min(DEFAULT_D_MAX))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(HssError::InvalidConfig(m));
        if self.d0 == 0 {
            return bad("d0 must be at least 1".into());
        }
        if self.delta_d == 0 && self.strategy == Strategy::Incrementing {
            return bad("delta_d must be at least 1".into());
        }
        if self.resolved_d_max(n) < self.d0.min(n) {
            return bad(format!("d_max {} below d0 {}", self.resolved_d_max(n), self.d0));
        }
        if !(self.eps_rel >= 0.0 && self.eps_abs >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        if let Criterion::Hmt { alpha } = self.criterion {
            if alpha <= 1.0 || self.eps_abs <= 0.0 {
                return bad("the HMT criterion needs alpha > 1 and a positive absolute tolerance".into());
            }
        }
        Ok(())
    }
}

/// Sample matrices shared by all nodes: `R`, `S^r = A R`, `S^c = Aᵀ R`.
#[derive(Clone, Debug)]
pub struct SampleState {
    pub r: DenseMatrix,
    pub sr: DenseMatrix,
    pub sc: DenseMatrix,
    /// Columns added by the latest enlargement.
    pub delta_d: usize,
    rng: RngStream,
}

impl SampleState {
    pub fn new(src: &dyn MatrixSource, d: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let r = randn(&mut rng, src.n(), d);
        let (sr, sc) = src.multiply(&r);
        Self {
            r,
            sr,
            sc,
            delta_d: d,
            rng,
        }
    }

    pub fn d(&self) -> usize {
        self.r.cols()
    }

    /// Appends `dd` fresh columns `R̄`, `A R̄`, `Aᵀ R̄`.
    pub fn enlarge(&mut self, src: &dyn MatrixSource, dd: usize) {
        let rb = randn(&mut self.rng, src.n(), dd);
        let (sr, sc) = src.multiply(&rb);
        self.r.append_cols(&rb);
        self.sr.append_cols(&sr);
        self.sc.append_cols(&sc);
        self.delta_d = dd;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundTrace {
    /// Sample columns available during this traversal.
    pub d: usize,
    pub added: usize,
    pub compressed: usize,
    pub partial: usize,
    pub untouched: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CompressionReport {
    pub strategy: Strategy,
    /// Sample columns of the final (successful) attempt.
    pub final_d: usize,
    /// Sample enlargements (adaptive strategies) or restarts (hard restart).
    pub adapt_steps: usize,
    pub restarts: usize,
    /// Random columns drawn over all attempts.
    pub sampled_columns: usize,
    pub flops: PhaseFlops,
    pub rounds: Vec<RoundTrace>,
    /// State transitions and restart-boundary structure held in every round.
    pub invariants_ok: bool,
}

/// Compresses `src` on `tree` according to `cfg.strategy`.
pub fn compress(src: &dyn MatrixSource, tree: &ClusterTree, cfg: &CompressionConfig) -> Result<(HssMatrix, CompressionReport)> {
    match cfg.strategy {
        Strategy::Doubling | Strategy::Incrementing => {
            let (res, rep) = run(src, tree, cfg, cfg.strategy, cfg.d0, cfg.resolved_d_max(src.n()))?;
            res.map(|h| (h, rep))
        }
        Strategy::KnownRank => compress_known_rank(src, tree, cfg.d0, cfg),
        Strategy::HardRestart => compress_hard_restart(src, tree, cfg),
    }
}

/// Single round with exactly `d` sample columns.
pub fn compress_known_rank(
    src: &dyn MatrixSource,
    tree: &ClusterTree,
    d: usize,
    cfg: &CompressionConfig,
) -> Result<(HssMatrix, CompressionReport)> {
    let (res, rep) = run(src, tree, cfg, Strategy::KnownRank, d, d)?;
    res.map(|h| (h, rep))
}

/// Restarts from scratch with twice the samples whenever some node fails.
pub fn compress_hard_restart(
    src: &dyn MatrixSource,
    tree: &ClusterTree,
    cfg: &CompressionConfig,
) -> Result<(HssMatrix, CompressionReport)> {
    let d_max = cfg.resolved_d_max(src.n());
    let mut d = cfg.d0.min(d_max);
    let mut flops = PhaseFlops::default();
    let mut sampled = 0;
    let mut restarts = 0;
    let mut rounds = Vec::new();
    let mut ok = true;
    loop {
        let (res, rep) = run(src, tree, cfg, Strategy::HardRestart, d, d)?;
        flops += rep.flops;
        sampled += rep.sampled_columns;
        rounds.extend(rep.rounds);
        ok &= rep.invariants_ok;
        match res {
            Ok(h) => {
                let report = CompressionReport {
                    strategy: Strategy::HardRestart,
                    final_d: d,
                    adapt_steps: restarts,
                    restarts,
                    sampled_columns: sampled,
                    flops,
                    rounds,
                    invariants_ok: ok,
                };
                return Ok((h, report));
            }
            Err(HssError::MaxRankReached { .. }) if d < d_max => {
                restarts += 1;
                d = (2 * d).min(d_max);
            }
            Err(HssError::MaxRankReached { partial, .. }) => {
                return Err(HssError::MaxRankReached { d, d_max, partial });
            }
            Err(e) => return Err(e),
        }
    }
}

type Attempt = (Result<HssMatrix>, CompressionReport);

// Adaptive loop starting from `d_start` samples and growing up to `d_max`.
// Source errors abort; running out of samples is reported in the attempt.
fn run(
    src: &dyn MatrixSource,
    tree: &ClusterTree,
    cfg: &CompressionConfig,
    strategy: Strategy,
    d_start: usize,
    d_max: usize,
) -> Result<Attempt> {
    let n = src.n();
    if tree.n() != n {
        return Err(HssError::DimensionMismatch(format!("tree covers {} indices, matrix has order {n}", tree.n())));
    }
    cfg.validate(n)?;

    let mut flops = PhaseFlops::default();
    let mut d = d_start.min(d_max);
    let mut samples = SampleState::new(src, d, cfg.seed);
    flops.add(Phase::Sampling, src.multiply_flops(d));
    let mut sampled = d;
    let mut root = HssNode::skeleton(tree, 0);
    let mut new = 0..d;
    let mut rounds = Vec::new();
    let mut ok = true;
    let mut adapt_steps = 0;
    let mut before = states(&root, tree.len());

    let failure = loop {
        let ctx = node::Ctx {
            src,
            r: &samples.r,
            sr: &samples.sr,
            sc: &samples.sc,
            cfg,
            strategy,
        };
        flops += node::visit(&mut root, &ctx, new.clone())?;
        let after = states(&root, tree.len());
        ok &= legal_transitions(&before, &after) && boundary_ok(tree, &after);
        rounds.push(RoundTrace {
            d,
            added: new.len(),
            compressed: count(&after, NodeState::Compressed),
            partial: count(&after, NodeState::PartiallyCompressed),
            untouched: count(&after, NodeState::Untouched),
        });
        before = after;

        if root.state == NodeState::Compressed {
            break None;
        }
        if d >= d_max || strategy == Strategy::KnownRank || strategy == Strategy::HardRestart {
            let partial = (0..tree.len())
                .filter(|&i| before[i] == NodeState::PartiallyCompressed)
                .collect();
            break Some(HssError::MaxRankReached { d, d_max, partial });
        }
        let dd = match strategy {
            Strategy::Doubling => d,
            _ => cfg.delta_d,
        }
        .min(d_max - d);
        samples.enlarge(src, dd);
        flops.add(Phase::Sampling, src.multiply_flops(dd));
        sampled += dd;
        new = d..d + dd;
        d += dd;
        adapt_steps += 1;
    };

    let report = CompressionReport {
        strategy,
        final_d: d,
        adapt_steps,
        restarts: 0,
        sampled_columns: sampled,
        flops,
        rounds,
        invariants_ok: ok,
    };
    if let Some(e) = failure {
        return Ok((Err(e), report));
    }
    if !cfg.keep_scratch {
        node::clear_scratch(&mut root);
    }
    Ok((Ok(HssMatrix::from_parts(tree.clone(), root)), report))
}

fn states(root: &HssNode, len: usize) -> Vec<NodeState> {
    let mut out = vec![NodeState::Untouched; len];
    root.walk(&mut |n| out[n.id] = n.state);
    out
}

fn count(states: &[NodeState], s: NodeState) -> usize {
    states.iter().filter(|&&x| x == s).count()
}

fn legal_transitions(before: &[NodeState], after: &[NodeState]) -> bool {
    use NodeState::*;
    before.iter().zip(after).all(|(b, a)| {
        matches!(
            (b, a),
            (Untouched, _) | (PartiallyCompressed, PartiallyCompressed | Compressed) | (Compressed, Compressed)
        )
    })
}

// Compressed nodes have compressed children; partially compressed nodes have
// compressed descendants and untouched ancestors.
fn boundary_ok(tree: &ClusterTree, st: &[NodeState]) -> bool {
    for (i, node) in tree.nodes().iter().enumerate() {
        if let Some([a, b]) = node.children {
            let kids_done = st[a] == NodeState::Compressed && st[b] == NodeState::Compressed;
            if st[i] != NodeState::Untouched && !kids_done {
                return false;
            }
        }
        if st[i] == NodeState::PartiallyCompressed {
            let mut p = node.parent;
            while let Some(j) = p {
                if st[j] != NodeState::Untouched {
                    return false;
                }
                p = tree.node(j).parent;
            }
        }
    }
    true
}
