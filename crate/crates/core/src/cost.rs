//! Analytic flop and communication model for the adaptive sampling schemes.
//!
//! Communication is priced as a pair `[messages, words]`. All logarithms are
//! base 2. Closed forms come with exact term-by-term sums so the asymptotic
//! expressions can be checked.

use std::ops::{Add, AddAssign, Mul};

use serde::Serialize;

use crate::error::{HssError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CostPair {
    pub messages: f64,
    pub words: f64,
}

impl CostPair {
    pub const ZERO: CostPair = CostPair { messages: 0.0, words: 0.0 };

    pub fn new(messages: f64, words: f64) -> Self {
        CostPair { messages, words }
    }

    /// Largest componentwise relative deviation from `other`.
    pub fn rel_diff(&self, other: &CostPair) -> f64 {
        let r = |a: f64, b: f64| {
            if a == b {
                0.0
            } else {
                (a - b).abs() / a.abs().max(b.abs())
            }
        };
        r(self.messages, other.messages).max(r(self.words, other.words))
    }
}

impl Add for CostPair {
    type Output = CostPair;
    fn add(self, o: CostPair) -> CostPair {
        CostPair::new(self.messages + o.messages, self.words + o.words)
    }
}

impl AddAssign for CostPair {
    fn add_assign(&mut self, o: CostPair) {
        *self = *self + o;
    }
}

impl Mul<f64> for CostPair {
    type Output = CostPair;
    fn mul(self, s: f64) -> CostPair {
        CostPair::new(self.messages * s, self.words * s)
    }
}

impl std::iter::Sum for CostPair {
    fn sum<I: Iterator<Item = CostPair>>(iter: I) -> CostPair {
        iter.fold(CostPair::ZERO, Add::add)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MachineParams {
    /// Process count.
    pub p: usize,
    /// Block size.
    pub nb: usize,
    /// Levels of process halving.
    pub levels: usize,
}

impl MachineParams {
    pub fn new(p: usize, nb: usize, levels: usize) -> Result<Self> {
        if p == 0 || nb == 0 {
            return Err(HssError::InvalidConfig("P and NB must be positive".into()));
        }
        Ok(MachineParams { p, nb, levels })
    }
}

fn lg(p: usize) -> f64 {
    (p as f64).log2()
}

fn sqrt(p: usize) -> f64 {
    (p as f64).sqrt()
}

/// Broadcast of `w` words among `p` processes.
pub fn cost_broadcast(p: usize, w: f64) -> CostPair {
    let l = lg(p.max(1));
    CostPair::new(l, w * l)
}

/// A cost whose stated precondition may not hold. The value is still computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Checked {
    pub cost: CostPair,
    pub precondition_ok: bool,
}

/// Householder QR of an `m × n` block over `p` processes; assumes `m/p ≥ n`.
pub fn cost_pdgeqrf(m: usize, n: usize, p: usize) -> Checked {
    let l = lg(p.max(1));
    Checked {
        cost: CostPair::new(2.0 * n as f64 * l, m as f64 * n as f64 / sqrt(p.max(1)) * l),
        precondition_ok: m >= n * p.max(1),
    }
}

/// Column-pivoted QR; one more broadcast per column than [`cost_pdgeqrf`].
pub fn cost_pdgeqpf(m: usize, n: usize, p: usize) -> Checked {
    let mut c = cost_pdgeqrf(m, n, p);
    c.cost.messages = 3.0 * n as f64 * lg(p.max(1));
    c
}

/// `[log₂P · N/NB, log₂P · N²/√P]`, priced verbatim.
pub fn cost_scalapack_panel(n: usize, nb: usize, p: usize) -> CostPair {
    let l = lg(p.max(1));
    CostPair::new(l * n as f64 / nb as f64, l * (n as f64).powi(2) / sqrt(p.max(1)))
}

/// Number of doublings from `d0` to reach `r`, rounded up.
pub fn doubling_steps(r: usize, d0: usize) -> usize {
    let mut s = 0;
    while d0 << s < r {
        s += 1;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DoublingComm {
    pub steps: usize,
    pub closed_form: CostPair,
    pub term_sum: CostPair,
}

/// Pivoted QR on `d0·2^k` columns for `k = 0..=s`.
pub fn cost_doubling_comm(r: usize, d0: usize, m: usize, p: usize) -> DoublingComm {
    let (l, sp) = (lg(p.max(1)), sqrt(p.max(1)));
    let s = doubling_steps(r, d0.max(1));
    let (r, m, d0) = (r as f64, m as f64, d0 as f64);
    let term_sum = (0..=s)
        .map(|k| {
            let dk = d0 * 2f64.powi(k as i32);
            CostPair::new(3.0 * dk * l, m * dk / sp * l)
        })
        .sum();
    DoublingComm {
        steps: s,
        closed_form: CostPair::new(6.0 * r * l, 2.0 * m * r / sp * l),
        term_sum,
    }
}

/// Older ID pricing: `[2r/NB · log P, 2rm/√P · log P]`.
pub fn cost_doubling_comm_legacy(r: usize, m: usize, mp: &MachineParams) -> CostPair {
    let l = lg(mp.p);
    let (r, m) = (r as f64, m as f64);
    CostPair::new(2.0 * r / mp.nb as f64 * l, 2.0 * r * m / sqrt(mp.p) * l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IncrementingComm {
    pub steps: usize,
    pub gs: CostPair,
    pub qr: CostPair,
    pub final_rrqr: CostPair,
    /// `qr + final_rrqr`; Gram–Schmidt is lower order and reported separately.
    pub total: CostPair,
    pub gs_term_sum: CostPair,
    pub qr_term_sum: CostPair,
}

pub fn cost_incrementing_comm(r: usize, delta_d: usize, m: usize, p: usize) -> IncrementingComm {
    let (l, sp) = (lg(p.max(1)), sqrt(p.max(1)));
    let steps = r.div_ceil(delta_d.max(1));
    let (rf, mf, dd) = (r as f64, m as f64, delta_d as f64);
    let qr = CostPair::new(2.0 * rf * l, mf * rf / sp * l);
    let final_rrqr = CostPair::new(3.0 * rf * l, mf * rf / sp * l);
    let gs = CostPair::new(4.0 * rf, 4.0 * (mf * rf + rf * rf / 2.0) / sp);
    let gs_term_sum = (1..=steps)
        .map(|k| CostPair::new(4.0 * dd, 4.0 * dd * (mf + dd * k as f64) / sp))
        .sum();
    let qr_term_sum = (0..steps).map(|_| cost_pdgeqrf(m, delta_d, p).cost).sum();
    IncrementingComm {
        steps,
        gs,
        qr,
        final_rrqr,
        total: qr + final_rrqr,
        gs_term_sum,
        qr_term_sum,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Redistribution {
    pub restarts: usize,
    pub per_restart: CostPair,
    /// Closed form over all `r/Δd` restarts.
    pub all_restarts: CostPair,
    pub term_sum: CostPair,
    pub receiver: CostPair,
    pub sender: CostPair,
}

/// Sample redistribution across `levels` halvings of `p` processes.
pub fn cost_redistribution(m: usize, delta_d: usize, r: usize, p: usize, levels: usize) -> Result<Redistribution> {
    if p < 2 {
        return Err(HssError::InvalidConfig("redistribution needs P >= 2".into()));
    }
    if delta_d == 0 {
        return Err(HssError::InvalidConfig("delta_d must be positive".into()));
    }
    let (pf, mf, dd, rf, lf) = (p as f64, m as f64, delta_d as f64, r as f64, levels as f64);
    let restarts = r.div_ceil(delta_d);
    let per_restart = CostPair::new(2.0 * pf, lf * mf * dd / pf);
    Ok(Redistribution {
        restarts,
        per_restart,
        all_restarts: CostPair::new(2.0 * pf * rf / dd, lf * mf * rf / pf),
        term_sum: per_restart * restarts as f64,
        receiver: CostPair::new(pf / 2.0, mf / 2.0 * dd / pf),
        sender: CostPair::new(pf, mf / 2.0 * dd / (pf / 2.0)),
    })
}

/// Older redistribution pricing: `[2P · log(r/d0), 2rm/P · L]`.
pub fn cost_redistribution_legacy(m: usize, r: usize, d0: usize, mp: &MachineParams) -> CostPair {
    let (pf, rf, mf) = (mp.p as f64, r as f64, m as f64);
    CostPair::new(2.0 * pf * (rf / d0 as f64).log2(), 2.0 * rf * mf / pf * mp.levels as f64)
}

/// Which operand stays in place in a distributed `C = A·B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stationary {
    A,
    B,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GemmCost {
    pub stationary: Stationary,
    pub cost: CostPair,
}

/// `C (M×N) = A (M×K) · B (K×N)`, keeping the largest operand stationary.
///
/// Ties prefer `C`, then `A`, then `B`.
pub fn cost_pxgemm(m: usize, k: usize, n: usize, p: usize) -> GemmCost {
    let sp = sqrt(p.max(1));
    let (mf, kf, nf) = (m as f64, k as f64, n as f64);
    let (a, b, c) = (mf * kf, kf * nf, mf * nf);
    let (stationary, messages, words) = if c >= a && c >= b {
        (Stationary::C, kf, a + b)
    } else if a >= b {
        (Stationary::A, nf, b + c)
    } else {
        (Stationary::B, mf, a + c)
    };
    GemmCost {
        stationary,
        cost: CostPair::new(messages, words / sp),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlopEstimate {
    pub steps: usize,
    /// Exact step sum.
    pub total: f64,
    /// Leading asymptotic term.
    pub leading: f64,
    /// Step sum when the rank is just missed at the last round.
    pub worst_case: f64,
    /// `[4mr², 16mr²]`.
    pub bracket: [f64; 2],
}

/// Pivoted QR on `2^k d0 + p` columns for `k = 1..=N`, then a final `2mr²`.
pub fn flops_doubling(m: usize, r: usize, d0: usize, p: usize) -> FlopEstimate {
    let (mf, rf, d0f, pf) = (m as f64, r as f64, d0.max(1) as f64, p as f64);
    let steps = doubling_steps(r, d0.max(1));
    let round = |k: usize| 2.0 * mf * (d0f * 2f64.powi(k as i32) + pf).powi(2);
    let total = (1..=steps).map(round).sum::<f64>() + 2.0 * mf * rf * rf;
    // Rank just missed: the rounds end at 2r columns and the final RRQR runs
    // on all of them. Oversampling is lower order and left out here.
    let top = 2.0 * rf;
    let worst_rounds: f64 = (0..)
        .map(|j| top / 2f64.powi(j))
        .take_while(|c| *c >= 2.0 * d0f)
        .map(|c| 2.0 * mf * c * c)
        .sum();
    let worst_case = worst_rounds + 2.0 * mf * top * rf;
    let mr2 = mf * rf * rf;
    FlopEstimate {
        steps,
        total,
        leading: (8.0 / 3.0) * mr2 + 2.0 * mr2,
        worst_case,
        bracket: [4.0 * mr2, 16.0 * mr2],
    }
}

/// QR of the first `d0` block, then per step `8m·q·Δd + 2mΔd²` with `q`
/// basis columns so far, then a final `2mr²`.
pub fn flops_incrementing(m: usize, r: usize, d0: usize, delta_d: usize) -> FlopEstimate {
    let (mf, rf, d0f, dd) = (m as f64, r as f64, d0.max(1) as f64, delta_d.max(1) as f64);
    let extra = r.saturating_sub(d0).div_ceil(delta_d.max(1));
    let step = |k: usize| 8.0 * mf * (d0f + (k - 1) as f64 * dd) * dd + 2.0 * mf * dd * dd;
    let total = 2.0 * mf * d0f * d0f + (1..=extra).map(step).sum::<f64>() + 2.0 * mf * rf * rf;
    let worst_case = total + step(extra + 1);
    let mr2 = mf * rf * rf;
    FlopEstimate {
        steps: extra + 1,
        total,
        leading: 4.0 * mr2 + 2.0 * mr2,
        worst_case,
        bracket: [4.0 * mr2, 16.0 * mr2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: CostPair, b: CostPair, tol: f64) -> bool {
        a.rel_diff(&b) <= tol
    }

    #[test]
    fn broadcast() {
        assert_eq!(cost_broadcast(1, 50.0), CostPair::ZERO);
        assert_eq!(cost_broadcast(16, 100.0), CostPair::new(4.0, 400.0));
        let d = cost_broadcast(32, 7.0) + cost_broadcast(16, 7.0) * -1.0;
        assert!(close(d, CostPair::new(1.0, 7.0), 1e-12));
    }

    #[test]
    fn qr_pairs() {
        let a = cost_pdgeqrf(4096, 64, 4);
        assert_eq!(a.cost, CostPair::new(256.0, 262144.0));
        assert!(a.precondition_ok);
        assert_eq!(cost_pdgeqpf(4096, 64, 4).cost, CostPair::new(384.0, 262144.0));
        assert_eq!(cost_pdgeqrf(4096, 0, 4).cost, CostPair::ZERO);
        assert_eq!(cost_pdgeqpf(4096, 0, 4).cost, CostPair::ZERO);
        assert!(!cost_pdgeqrf(100, 64, 4).precondition_ok);
        let (x, y) = (cost_pdgeqpf(1000, 10, 16).cost, cost_pdgeqpf(9000, 10, 16).cost);
        assert!((x.messages / x.words * 1000.0 - y.messages / y.words * 9000.0).abs() < 1e-9);
    }

    #[test]
    fn doubling_comm() {
        let c = cost_doubling_comm(512, 8, 100_000, 64);
        assert_eq!(c.steps, 6);
        assert_eq!(c.closed_form, CostPair::new(18432.0, 7.68e7));
        // Geometric sum oracle: Σ 2^k = 2^{s+1} - 1.
        let want = CostPair::new(3.0 * 8.0 * 127.0 * 6.0, 1e5 * 8.0 * 127.0 / 8.0 * 6.0);
        assert!(close(c.term_sum, want, 1e-12));
        let ratio = c.term_sum.messages / c.closed_form.messages;
        assert!((0.99..=1.01).contains(&ratio), "{ratio}");
        let c0 = cost_doubling_comm(8, 8, 100, 16);
        assert_eq!(c0.steps, 0);
        assert!((c0.term_sum.messages / c0.closed_form.messages - 0.5).abs() < 1e-12);
    }

    #[test]
    fn incrementing_comm() {
        let c = cost_incrementing_comm(512, 64, 100_000, 64);
        let w = 1e5 * 512.0 / 8.0 * 6.0;
        assert_eq!(c.qr, CostPair::new(2.0 * 512.0 * 6.0, w));
        assert_eq!(c.final_rrqr, CostPair::new(3.0 * 512.0 * 6.0, w));
        assert_eq!(c.total, CostPair::new(5.0 * 512.0 * 6.0, 2.0 * w));
        let d = cost_doubling_comm(512, 8, 100_000, 64);
        assert_eq!(c.total.messages / d.closed_form.messages, 5.0 / 6.0);
        assert!(close(c.gs_term_sum, c.gs, 0.02));
        assert!(close(c.qr_term_sum, c.qr, 1e-12));
    }

    #[test]
    fn redistribution() {
        let c = cost_redistribution(10_000, 64, 64, 64, 3).unwrap();
        assert_eq!(c.per_restart, CostPair::new(128.0, 30000.0));
        assert_eq!(c.all_restarts, c.per_restart);
        assert_eq!(c.receiver, CostPair::new(32.0, 5000.0));
        assert_eq!(c.sender, CostPair::new(64.0, 10000.0));
        let c = cost_redistribution(10_000, 64, 640, 64, 3).unwrap();
        assert!(close(c.all_restarts, c.term_sum, 1e-12));
        assert!(cost_redistribution(10, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn legacy_variants() {
        let mp = MachineParams::new(64, 32, 3).unwrap();
        assert_eq!(cost_doubling_comm_legacy(512, 1000, &mp), CostPair::new(2.0 * 16.0 * 6.0, 2.0 * 512.0 * 1000.0 / 8.0 * 6.0));
        assert_eq!(cost_redistribution_legacy(1000, 512, 8, &mp), CostPair::new(128.0 * 6.0, 2.0 * 512.0 * 1000.0 / 64.0 * 3.0));
    }

    #[test]
    fn scalapack_panel() {
        assert_eq!(cost_scalapack_panel(1024, 64, 16), CostPair::new(64.0, 4.0 * 1024.0 * 1024.0 / 4.0));
    }

    #[test]
    fn pxgemm_cases() {
        let g = cost_pxgemm(100_000, 100, 100, 64);
        assert_eq!(g.stationary, Stationary::C);
        assert_eq!(g.cost.messages, 100.0);
        assert!((g.cost.words / (100.0 * 1e5 / 8.0) - 1.0).abs() < 2e-3);
        let g = cost_pxgemm(50, 50, 50, 4);
        assert_eq!(g.stationary, Stationary::C);
        assert_eq!(g.cost, CostPair::new(50.0, 2.0 * 2500.0 / 2.0));
        assert_eq!(cost_pxgemm(1000, 1000, 10, 1).stationary, Stationary::A);
        assert_eq!(cost_pxgemm(10, 1000, 1000, 1).stationary, Stationary::B);
        assert_eq!(cost_pxgemm(10, 1000, 1000, 1).cost, CostPair::new(10.0, 10_000.0 + 10_000.0));
    }

    #[test]
    fn flop_models() {
        let (m, d0) = (10_000, 8);
        let d = flops_doubling(m, 512, d0, 0);
        assert!((d.total / d.leading - 1.0).abs() <= 0.35);
        let d = flops_doubling(m, 64, 64, 10);
        assert_eq!(d.total, 2.0 * m as f64 * 64.0 * 64.0);
        for r in [64, 100, 512, 1000, 4096] {
            let d = flops_doubling(m, r, d0, 10);
            assert!(d.worst_case <= d.bracket[1], "{r}: {d:?}");
        }
        let i = flops_incrementing(m, 512, 16, 16);
        assert!((i.total / i.leading - 1.0).abs() <= 0.30);
        let i = flops_incrementing(m, 64, 64, 64);
        assert_eq!(i.total, 4.0 * m as f64 * 64.0 * 64.0);
        let ratio = flops_incrementing(m, 512, 16, 16).leading / flops_doubling(m, 512, 16, 10).leading;
        assert!((ratio - 1.2857).abs() < 1e-3);
    }

    fn pair() -> impl Strategy<Value = CostPair> {
        (0.0f64..1e6, 0.0f64..1e9).prop_map(|(a, b)| CostPair::new(a, b))
    }

    proptest! {
        #[test]
        fn cost_pair_algebra(a in pair(), b in pair(), c in pair()) {
            prop_assert_eq!(a + b, b + a);
            prop_assert!(((a + b) + c).rel_diff(&(a + (b + c))) < 1e-12);
        }

        #[test]
        fn closed_forms_match_sums(s in 16u32..24, d0 in 1usize..16, p in 2usize..1024, m in 1000usize..1_000_000) {
            let r = d0 << s;
            let c = cost_doubling_comm(r, d0, m, p);
            prop_assert!(c.term_sum.rel_diff(&c.closed_form) <= 0.05);
            let dd = d0;
            let i = cost_incrementing_comm(r.min(dd * 64), dd, m.max(r), p);
            prop_assert!(i.qr_term_sum.rel_diff(&i.qr) <= 0.05);
            let steps = 16 + (s as usize - 16) * 4;
            let g = cost_incrementing_comm(dd * steps, dd, m, p);
            prop_assert!(g.gs_term_sum.rel_diff(&g.gs) <= 0.05);
            let red = cost_redistribution(m, dd, dd * steps, p, 3).unwrap();
            prop_assert!(red.term_sum.rel_diff(&red.all_restarts) <= 0.05);
        }

        #[test]
        fn incrementing_needs_fewer_messages(r in 1usize..5000, d0 in 1usize..64, dd in 1usize..64, p in 2usize..4096) {
            let i = cost_incrementing_comm(r, dd, 10_000, p);
            let d = cost_doubling_comm(r, d0, 10_000, p);
            prop_assert!(i.total.messages < d.closed_form.messages);
        }
    }
}
