//! Per-node work of the compression traversal.

use std::ops::Range;

use crate::adaptive::{IncrementalBasis, StopCriteria};
use crate::dense::{interp_decomp, DenseMatrix, HmtParams, IdOptions, IdResult};
use crate::error::{HssError, Result};
use crate::flops::{Phase, PhaseFlops};
use crate::hss::{HssNode, NodeState};
use crate::operators::MatrixSource;

use super::{CompressionConfig, Criterion, Strategy};

const ROW: usize = 0;
const COL: usize = 1;

/// Scratch carried by a node while compression runs.
#[derive(Debug)]
pub struct NodeScratch {
    /// Local samples; restricted to the selected rows once compressed.
    pub(crate) s: [DenseMatrix; 2],
    /// Reduced random blocks: `Vᵀ R` (row side) and `Uᵀ R` (column side).
    pub(crate) r: [DenseMatrix; 2],
    inc: [Option<IncrementalBasis>; 2],
    inc_done: [bool; 2],
}

/// Read-only data shared by all workers during one traversal.
pub(crate) struct Ctx<'a> {
    pub src: &'a dyn MatrixSource,
    pub r: &'a DenseMatrix,
    pub sr: &'a DenseMatrix,
    pub sc: &'a DenseMatrix,
    pub cfg: &'a CompressionConfig,
    pub strategy: Strategy,
}

impl Ctx<'_> {
    fn d(&self) -> usize {
        self.r.cols()
    }
}

/// Post-order visit of the subtree rooted at `nd`; `new` are the sample
/// columns appended since the previous traversal.
pub(crate) fn visit(nd: &mut HssNode, ctx: &Ctx<'_>, new: Range<usize>) -> Result<PhaseFlops> {
    let mut f = PhaseFlops::default();

    if let Some(ch) = nd.children.as_mut() {
        let [a, b] = &mut **ch;
        let (fa, fb) = if ctx.cfg.parallel {
            rayon::join(|| visit(a, ctx, new.clone()), || visit(b, ctx, new.clone()))
        } else {
            (visit(a, ctx, new.clone()), visit(b, ctx, new.clone()))
        };
        f += fa?;
        f += fb?;
        if a.state != NodeState::Compressed || b.state != NodeState::Compressed {
            return Ok(f);
        }
        if nd.b12.is_none() {
            let b12 = ctx.src.extract(&a.ir, &b.ic)?;
            let b21 = ctx.src.extract(&b.ir, &a.ic)?;
            f.add(Phase::Extraction, ctx.src.extract_flops(b12.rows() * b12.cols() + b21.rows() * b21.cols()));
            nd.b12 = Some(b12);
            nd.b21 = Some(b21);
        }
    } else if nd.d.is_none() {
        let idx: Vec<usize> = nd.range.clone().collect();
        let d = ctx.src.extract(&idx, &idx)?;
        f.add(Phase::Extraction, ctx.src.extract_flops(idx.len() * idx.len()));
        nd.d = Some(d);
    }

    if nd.is_root() {
        nd.state = NodeState::Compressed;
        return Ok(f);
    }

    let cols = if nd.state == NodeState::Untouched { 0..ctx.d() } else { new };
    if cols.is_empty() {
        return Ok(f);
    }
    let [sr_new, sc_new] = local_samples(nd, ctx, cols.clone(), &mut f);

    match nd.state {
        NodeState::Compressed => {
            let sel = [&nd.u, &nd.v].map(|b| b.as_ref().expect("compressed node has bases").selected.clone());
            let red = reduce(nd, ctx, cols, &mut f);
            let s = nd.scratch.as_mut().expect("scratch present during compression");
            s.s[ROW].append_cols(&sr_new.select_rows(&sel[ROW]));
            s.s[COL].append_cols(&sc_new.select_rows(&sel[COL]));
            s.r[ROW].append_cols(&red[ROW]);
            s.r[COL].append_cols(&red[COL]);
            return Ok(f);
        }
        NodeState::Untouched => {
            nd.scratch = Some(Box::new(NodeScratch {
                s: [sr_new, sc_new],
                r: [DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, 0)],
                inc: [None, None],
                inc_done: [false, false],
            }));
        }
        NodeState::PartiallyCompressed => {
            let s = nd.scratch.as_mut().expect("scratch present during compression");
            s.s[ROW].append_cols(&sr_new);
            s.s[COL].append_cols(&sc_new);
        }
    }

    for side in [ROW, COL] {
        try_side(nd, ctx, side, cols.clone(), &mut f);
    }

    if nd.u.is_some() && nd.v.is_some() {
        finalize(nd, ctx, &mut f);
    } else {
        nd.state = NodeState::PartiallyCompressed;
        nd.counters.partial_rounds += 1;
    }
    Ok(f)
}

// Local samples of the Hankel blocks for columns `cols`: `[τ.Sr, τ.Sc]`.
fn local_samples(nd: &HssNode, ctx: &Ctx<'_>, cols: Range<usize>, f: &mut PhaseFlops) -> [DenseMatrix; 2] {
    let c = cols.len();
    match &nd.children {
        None => {
            let d = nd.d.as_ref().expect("leaf has D");
            let m = nd.range.len();
            let rl = ctx.r.block(nd.range.clone(), cols.clone());
            let mut sr = ctx.sr.block(nd.range.clone(), cols.clone());
            let mut sc = ctx.sc.block(nd.range.clone(), cols);
            sr.axpy(-1.0, &d.matmul(&rl));
            sc.axpy(-1.0, &d.tr_matmul(&rl));
            f.add(Phase::ComputeSamples, 2 * DenseMatrix::gemm_flops(m, m, c) + 2 * (m * c) as u64);
            [sr, sc]
        }
        Some(ch) => {
            let (a, b) = (&ch[0], &ch[1]);
            let (sa, sb) = (scratch(a), scratch(b));
            let b12 = nd.b12.as_ref().expect("B12 extracted");
            let b21 = nd.b21.as_ref().expect("B21 extracted");
            let part = |s: &DenseMatrix, b: &DenseMatrix, r: &DenseMatrix, transpose: bool| {
                let mut out = s.col_range(cols.clone());
                let rc = r.col_range(cols.clone());
                let prod = if transpose { b.tr_matmul(&rc) } else { b.matmul(&rc) };
                out.axpy(-1.0, &prod);
                out
            };
            let sr = part(&sa.s[ROW], b12, &sb.r[ROW], false).vcat(&part(&sb.s[ROW], b21, &sa.r[ROW], false));
            let sc = part(&sa.s[COL], b21, &sb.r[COL], true).vcat(&part(&sb.s[COL], b12, &sa.r[COL], true));
            let bsz = (b12.rows() * b12.cols() + b21.rows() * b21.cols()) as u64;
            f.add(Phase::ComputeSamples, 2 * 2 * bsz * c as u64 + ((sr.rows() + sc.rows()) * c) as u64);
            [sr, sc]
        }
    }
}

fn scratch(nd: &HssNode) -> &NodeScratch {
    nd.scratch.as_deref().expect("compressed child keeps its scratch during compression")
}

// Reduced random blocks for columns `cols`: `[Vᵀ R_loc, Uᵀ R_loc]`.
fn reduce(nd: &HssNode, ctx: &Ctx<'_>, cols: Range<usize>, f: &mut PhaseFlops) -> [DenseMatrix; 2] {
    let u = nd.u.as_ref().expect("U set");
    let v = nd.v.as_ref().expect("V set");
    let (lr, lc) = match &nd.children {
        None => {
            let rl = ctx.r.block(nd.range.clone(), cols.clone());
            (rl.clone(), rl)
        }
        Some(ch) => {
            let (sa, sb) = (scratch(&ch[0]), scratch(&ch[1]));
            (
                sa.r[ROW].col_range(cols.clone()).vcat(&sb.r[ROW].col_range(cols.clone())),
                sa.r[COL].col_range(cols.clone()).vcat(&sb.r[COL].col_range(cols.clone())),
            )
        }
    };
    f.add(Phase::ReduceSamples, v.apply_flops(cols.len()) + u.apply_flops(cols.len()));
    [v.apply_t(&lr), u.apply_t(&lc)]
}

fn try_side(nd: &mut HssNode, ctx: &Ctx<'_>, side: usize, cols: Range<usize>, f: &mut PhaseFlops) {
    let done = if side == ROW { nd.u.is_some() } else { nd.v.is_some() };
    if done {
        return;
    }
    let cfg = ctx.cfg;
    let scale = nd.level.max(1) as f64;
    let (tr, ta) = (cfg.eps_rel / scale, cfg.eps_abs / scale);
    let m_orig = nd.range.len();
    let n_orig = ctx.src.n() - m_orig;
    let scratch = nd.scratch.as_mut().expect("scratch present during compression");
    let s = &scratch.s[side];

    let (opts, tr, ta) = match ctx.strategy {
        Strategy::Doubling | Strategy::HardRestart => (
            IdOptions {
                hmt: Some(HmtParams {
                    d: s.cols(),
                    m_orig,
                    n_orig,
                }),
                oversampling: Some(cfg.p),
            },
            tr,
            ta,
        ),
        Strategy::KnownRank => (
            IdOptions {
                hmt: None,
                oversampling: Some(cfg.p),
            },
            tr,
            ta,
        ),
        Strategy::Incrementing => {
            if !scratch.inc_done[side] {
                let basis = scratch.inc[side].get_or_insert_with(|| IncrementalBasis::new(s.rows()));
                let crit = StopCriteria { eps_rel: tr, eps_abs: ta };
                let alpha = match cfg.criterion {
                    Criterion::Standard => None,
                    Criterion::Hmt { alpha } => Some(alpha),
                };
                let out = basis.push_block(&s.col_range(cols), &crit, alpha);
                f.add(Phase::Orthogonalize, out.orth_flops);
                f.add(Phase::Qr, out.qr_flops);
                nd.counters.qr_calls[side] += out.qr_called as usize;
                scratch.inc_done[side] = out.converged;
            }
            if !scratch.inc_done[side] {
                return;
            }
            match cfg.criterion {
                Criterion::Standard => (IdOptions::default(), tr, ta),
                Criterion::Hmt { .. } => (
                    IdOptions {
                        hmt: Some(HmtParams {
                            d: s.cols(),
                            m_orig,
                            n_orig,
                        }),
                        oversampling: None,
                    },
                    0.0,
                    ta,
                ),
            }
        }
    };

    nd.counters.id_calls[side] += 1;
    match interp_decomp(&s.transpose(), tr, ta, opts) {
        Ok(out) => {
            f.add(Phase::Id, out.flops);
            if side == ROW {
                nd.u = Some(out.id);
            } else {
                nd.v = Some(out.id);
            }
            scratch.inc[side] = None;
        }
        Err(HssError::IdFailed { .. }) => {
            nd.counters.id_failures[side] += 1;
            // Incrementing keeps sampling if the final factorization broke down.
            scratch.inc_done[side] = false;
        }
        Err(e) => unreachable!("interp_decomp only fails with IdFailed: {e}"),
    }
}

fn finalize(nd: &mut HssNode, ctx: &Ctx<'_>, f: &mut PhaseFlops) {
    let red = reduce(nd, ctx, 0..ctx.d(), f);
    let u: &IdResult = nd.u.as_ref().expect("U set");
    let v: &IdResult = nd.v.as_ref().expect("V set");
    let (ir, ic) = match &nd.children {
        None => (
            u.selected.iter().map(|&j| nd.range.start + j).collect(),
            v.selected.iter().map(|&j| nd.range.start + j).collect(),
        ),
        Some(ch) => {
            let rows: Vec<usize> = [ch[0].ir.as_slice(), ch[1].ir.as_slice()].concat();
            let cols: Vec<usize> = [ch[0].ic.as_slice(), ch[1].ic.as_slice()].concat();
            (
                u.selected.iter().map(|&j| rows[j]).collect(),
                v.selected.iter().map(|&j| cols[j]).collect(),
            )
        }
    };
    let (usel, vsel) = (u.selected.clone(), v.selected.clone());
    nd.ir = ir;
    nd.ic = ic;
    let s = nd.scratch.as_mut().expect("scratch present during compression");
    s.s[ROW] = s.s[ROW].select_rows(&usel);
    s.s[COL] = s.s[COL].select_rows(&vsel);
    s.r = red;
    s.inc = [None, None];
    nd.state = NodeState::Compressed;
}

/// Drops all scratch data once compression has finished.
pub(crate) fn clear_scratch(root: &mut HssNode) {
    root.walk_mut(&mut |n| n.scratch = None);
}
