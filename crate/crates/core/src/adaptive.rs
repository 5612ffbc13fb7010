//! Adaptive randomized range finders (Doubling and Incrementing) and the
//! stopping-criterion evaluator.

use serde::Serialize;

use crate::dense::{block_gram_schmidt, hmt_factor, norm2, qr_counted, randn, rrqr, rrqr_scaled, DenseMatrix, RngStream};
use crate::error::{HssError, Result};

/// Relative and absolute tolerances of the stopping test. `ρ` is always the
/// first diagonal entry of the first block's triangular factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StopCriteria {
    pub eps_rel: f64,
    pub eps_abs: f64,
}

/// Which stopping conditions held.
///
/// * `c1`: `min |R̄_ii| < ε_r ρ`
/// * `c2`: `min |R̄_ii| < ε_a`
/// * `c3`: `‖Ŝ‖_F < ε_r ‖S‖_F`
/// * `c4`: `‖Ŝ‖_F < ε_a √d`
/// * `hmt`: `α √(2/π) max_i ‖Ŝ e_i‖ ≤ ε_a`
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Fired {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c4: bool,
    pub hmt: bool,
}

impl Fired {
    pub fn any(&self) -> bool {
        self.c1 || self.c2 || self.c3 || self.c4 || self.hmt
    }

    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.c1, "C1"),
            (self.c2, "C2"),
            (self.c3, "C3"),
            (self.c4, "C4"),
            (self.hmt, "HMT"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }

    fn merge(&mut self, o: Fired) {
        self.c1 |= o.c1;
        self.c2 |= o.c2;
        self.c3 |= o.c3;
        self.c4 |= o.c4;
        self.hmt |= o.hmt;
    }
}

fn eval_fnorm(sh_norm: f64, s_norm: f64, crit: &StopCriteria, d: usize) -> Fired {
    Fired {
        c3: sh_norm < crit.eps_rel * s_norm,
        c4: sh_norm < crit.eps_abs * (d as f64).sqrt(),
        ..Fired::default()
    }
}

fn eval_diag(diag: &[f64], rho: f64, crit: &StopCriteria) -> Fired {
    let Some(min) = diag.iter().copied().reduce(f64::min) else {
        return Fired::default();
    };
    Fired {
        c1: min < crit.eps_rel * rho,
        c2: min < crit.eps_abs,
        ..Fired::default()
    }
}

/// Evaluates all four conditions for block `s` (with `d` columns), its
/// projection `sh`, and the diagonal of the projected block's QR factor.
pub fn eval_stop(sh: &DenseMatrix, s: &DenseMatrix, r_diag: &[f64], rho: f64, crit: &StopCriteria, d: usize) -> Fired {
    let mut f = eval_fnorm(sh.fro_norm(), s.fro_norm(), crit, d);
    f.merge(eval_diag(r_diag, rho, crit));
    f
}

/// Result of feeding one sample block to an [`IncrementalBasis`].
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockOutcome {
    pub fired: Fired,
    pub converged: bool,
    pub orth_flops: u64,
    pub qr_flops: u64,
    pub qr_called: bool,
}

/// Orthonormal basis grown block by block with iterated block Gram–Schmidt.
#[derive(Clone, Debug)]
pub struct IncrementalBasis {
    q: DenseMatrix,
    rho: Option<f64>,
}

impl IncrementalBasis {
    pub fn new(rows: usize) -> Self {
        Self {
            q: DenseMatrix::zeros(rows, 0),
            rho: None,
        }
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// Projects `s_k` against the basis, tests the stopping conditions and,
    /// if none holds, appends the new directions. With `hmt_alpha` the
    /// probabilistic 2-norm bound replaces the four conditions.
    pub fn push_block(&mut self, s_k: &DenseMatrix, crit: &StopCriteria, hmt_alpha: Option<f64>) -> BlockOutcome {
        let rows = self.q.rows();
        assert_eq!(s_k.rows(), rows, "sample block row mismatch");
        let mut out = BlockOutcome::default();
        if self.q.cols() >= rows {
            out.converged = true;
            return out;
        }
        let (sh, of) = block_gram_schmidt(&self.q, s_k);
        out.orth_flops = of;
        let sh_norm = sh.fro_norm();

        match hmt_alpha {
            Some(alpha) => {
                let max_col = (0..sh.cols()).map(|j| norm2(sh.col(j))).fold(0.0, f64::max);
                out.fired.hmt = hmt_bound(max_col, alpha, 1).bound <= crit.eps_abs;
            }
            None => out.fired = eval_fnorm(sh_norm, s_k.fro_norm(), crit, s_k.cols()),
        }
        if out.fired.any() || sh_norm == 0.0 {
            out.converged = true;
            return out;
        }

        let res = qr_counted(&sh);
        out.qr_flops = res.flops;
        out.qr_called = true;
        let rho = *self.rho.get_or_insert(res.diag.first().copied().unwrap_or(0.0));
        if hmt_alpha.is_none() {
            out.fired.merge(eval_diag(&res.diag, rho, crit));
            if out.fired.any() {
                out.converged = true;
                return out;
            }
        }
        let room = rows - self.q.cols();
        let take = res.q.cols().min(room);
        self.q.append_cols(&res.q.col_range(0..take));
        out.converged = self.q.cols() >= rows;
        out
    }
}

/// Source of fresh sample columns `A ω` of a fixed target block.
pub trait ColumnSampler {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn sample(&mut self, k: usize) -> DenseMatrix;
}

/// Samples an explicitly stored block with Gaussian vectors.
pub struct DenseBlockSampler {
    a: DenseMatrix,
    rng: RngStream,
}

impl DenseBlockSampler {
    pub fn new(a: DenseMatrix, seed: u64) -> Self {
        Self {
            a,
            rng: RngStream::new(seed),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }
}

impl ColumnSampler for DenseBlockSampler {
    fn rows(&self) -> usize {
        self.a.rows()
    }

    fn cols(&self) -> usize {
        self.a.cols()
    }

    fn sample(&mut self, k: usize) -> DenseMatrix {
        self.a.matmul(&randn(&mut self.rng, self.a.cols(), k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub d_before: usize,
    pub d_added: usize,
    pub fired: Fired,
    pub flops: u64,
    pub rank_if_final: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdaptTrace {
    pub rounds: Vec<RoundRecord>,
    pub rrqr_calls: usize,
    pub qr_calls: usize,
}

impl AdaptTrace {
    pub fn total_flops(&self) -> u64 {
        self.rounds.iter().map(|r| r.flops).sum()
    }
}

/// Doubling range finder: pivoted QR with the oversampling-scaled rule on
/// the accumulated samples; round `k` is accepted when the rank is at most
/// `2^(k-1) d0` (or full), otherwise `2^(k-1) d0 + p` columns are added.
pub fn rs_doubling(
    sampler: &mut dyn ColumnSampler,
    d0: usize,
    p: usize,
    eps_rel: f64,
    eps_abs: f64,
) -> Result<(DenseMatrix, AdaptTrace)> {
    let (m, n) = (sampler.rows(), sampler.cols());
    let full = m.min(n);
    let cap = full + p;
    let mut trace = AdaptTrace::default();
    let mut s = sampler.sample((d0 + p).min(cap));
    let mut added = s.cols();
    let mut k = 0u32;
    loop {
        let d = s.cols();
        let res = rrqr_scaled(&s, eps_rel, eps_abs, true, |j| hmt_factor(j, d, full));
        trace.rrqr_calls += 1;
        let target = d0 << k;
        let accept = res.rank <= target || res.rank == full;
        trace.rounds.push(RoundRecord {
            d_before: d - added,
            d_added: added,
            fired: Fired::default(),
            flops: res.flops,
            rank_if_final: accept.then_some(res.rank),
        });
        if accept {
            return Ok((res.q, trace));
        }
        if d >= cap {
            return Err(HssError::MaxColumns { limit: cap });
        }
        added = (target + p).min(cap - d);
        s.append_cols(&sampler.sample(added));
        k += 1;
    }
}

/// Incrementing range finder: blocks of `delta_d` samples are orthogonalized
/// against the current basis until a stopping condition fires; a single
/// pivoted QR over all raw samples then yields the final basis.
pub fn rs_incrementing(
    sampler: &mut dyn ColumnSampler,
    d0: usize,
    delta_d: usize,
    eps_rel: f64,
    eps_abs: f64,
) -> Result<(DenseMatrix, AdaptTrace)> {
    let (m, n) = (sampler.rows(), sampler.cols());
    let cap = m.min(n) + delta_d;
    let crit = StopCriteria { eps_rel, eps_abs };
    let mut trace = AdaptTrace::default();
    let mut basis = IncrementalBasis::new(m);
    let mut all = DenseMatrix::zeros(m, 0);
    let mut block = sampler.sample(d0.min(cap));
    loop {
        let d_before = all.cols();
        all.append_cols(&block);
        let out = basis.push_block(&block, &crit, None);
        trace.qr_calls += out.qr_called as usize;
        trace.rounds.push(RoundRecord {
            d_before,
            d_added: block.cols(),
            fired: out.fired,
            flops: out.orth_flops + out.qr_flops,
            rank_if_final: None,
        });
        if out.converged {
            break;
        }
        if all.cols() >= cap {
            return Err(HssError::MaxColumns { limit: cap });
        }
        block = sampler.sample(delta_d.min(cap - all.cols()));
    }
    let res = rrqr(&all, eps_rel, eps_abs);
    trace.rrqr_calls += 1;
    let last = trace.rounds.last_mut().expect("at least one round");
    last.flops += res.flops;
    last.rank_if_final = Some(res.rank);
    Ok((res.q, trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HmtBound {
    pub bound: f64,
    pub failure_prob: f64,
}

/// `‖B‖₂ ≤ α √(2/π) max_i ‖B ω_i‖`, failing with probability `α^(-p)`.
pub fn hmt_bound(max_col_norm: f64, alpha: f64, p: usize) -> HmtBound {
    HmtBound {
        bound: alpha * (2.0 / std::f64::consts::PI).sqrt() * max_col_norm,
        failure_prob: alpha.powi(-(p as i32)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::RngStream;

    fn low_rank(m: usize, n: usize, k: usize, seed: u64) -> DenseMatrix {
        let mut rng = RngStream::new(seed);
        randn(&mut rng, m, k).matmul(&randn(&mut rng, k, n))
    }

    fn orth_err(q: &DenseMatrix) -> f64 {
        q.tr_matmul(q).sub(&DenseMatrix::identity(q.cols())).fro_norm()
    }

    #[test]
    fn eval_stop_cases() {
        let crit = StopCriteria {
            eps_rel: 1e-8,
            eps_abs: 1e-8,
        };
        let s = low_rank(6, 3, 2, 1);
        let f = eval_stop(&DenseMatrix::zeros(6, 3), &s, &[], 1.0, &crit, 3);
        assert!(f.c3 && f.c4 && !f.c1 && !f.c2);

        let zero = StopCriteria {
            eps_rel: 0.0,
            eps_abs: 0.0,
        };
        assert!(!eval_stop(&DenseMatrix::zeros(6, 3), &s, &[0.0], 1.0, &zero, 3).any());

        let crit = StopCriteria {
            eps_rel: 1e-8,
            eps_abs: 0.0,
        };
        let f = eval_stop(&s, &s, &[1.0, 1e-9], 1.0, &crit, 3);
        assert!(f.c1 && !f.c2 && !f.c3 && !f.c4);
        assert_eq!(f.names(), vec!["C1"]);
    }

    #[test]
    fn doubling_small_rank_one_round() {
        let mut s = DenseBlockSampler::new(low_rank(60, 50, 3, 2), 9);
        let (q, t) = rs_doubling(&mut s, 8, 4, 1e-10, 1e-10).unwrap();
        assert_eq!(q.cols(), 3);
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rrqr_calls, 1);
    }

    #[test]
    fn doubling_rank_forty_schedule() {
        let mut s = DenseBlockSampler::new(low_rank(100, 100, 40, 3), 9);
        let (q, t) = rs_doubling(&mut s, 8, 4, 1e-10, 1e-10).unwrap();
        assert_eq!(q.cols(), 40);
        // ceil(log2(40/8)) + 1 rounds.
        assert_eq!(t.rounds.len(), 4);
        assert_eq!(t.rrqr_calls, t.rounds.len());
        assert!(orth_err(&q) < 1e-10);
    }

    #[test]
    fn doubling_zero_block() {
        let mut s = DenseBlockSampler::new(DenseMatrix::zeros(20, 20), 1);
        let (q, t) = rs_doubling(&mut s, 8, 4, 1e-6, 1e-6).unwrap();
        assert_eq!(q.cols(), 0);
        assert_eq!(t.rounds.len(), 1);
    }

    #[test]
    fn doubling_full_rank_short_block() {
        let mut s = DenseBlockSampler::new(randn(&mut RngStream::new(4), 30, 30), 2);
        let (q, _) = rs_doubling(&mut s, 8, 4, 1e-12, 1e-12).unwrap();
        assert_eq!(q.cols(), 30);
    }

    #[test]
    fn incrementing_spanned_block() {
        let mut s = DenseBlockSampler::new(low_rank(50, 50, 3, 5), 1);
        let (q, t) = rs_incrementing(&mut s, 8, 8, 1e-10, 1e-10).unwrap();
        assert_eq!(q.cols(), 3);
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rrqr_calls, 1);
    }

    #[test]
    fn incrementing_rank_forty_schedule() {
        let mut s = DenseBlockSampler::new(low_rank(100, 100, 40, 6), 1);
        let (q, t) = rs_incrementing(&mut s, 8, 8, 1e-10, 1e-10).unwrap();
        assert_eq!(q.cols(), 40);
        let expect = (40 - 8usize).div_ceil(8) + 1;
        assert!(t.rounds.len().abs_diff(expect) <= 1, "rounds {}", t.rounds.len());
        assert_eq!(t.rrqr_calls, 1);
        for w in t.rounds.windows(2) {
            assert!(w[1].d_before > w[0].d_before);
        }
        assert!(orth_err(&q) < 1e-10);
    }

    #[test]
    fn hmt_bound_values() {
        let b = hmt_bound(2.0, 10.0, 10);
        assert!((b.failure_prob - 1e-10).abs() < 1e-24);
        assert!((b.bound - 20.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert_eq!(hmt_bound(0.0, 10.0, 10).bound, 0.0);
    }

    #[test]
    fn incremental_basis_saturates() {
        let mut b = IncrementalBasis::new(4);
        let crit = StopCriteria {
            eps_rel: 0.0,
            eps_abs: 0.0,
        };
        let s = randn(&mut RngStream::new(1), 4, 6);
        let out = b.push_block(&s, &crit, None);
        assert!(out.converged);
        assert_eq!(b.q().cols(), 4);
    }
}
