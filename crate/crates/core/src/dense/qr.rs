use super::matrix::{dot, norm2};
use super::DenseMatrix;

/// Output of a (possibly truncated) column-pivoted Householder QR.
///
/// `s.select_cols(&perm)[:, ..] ≈ q * r` where `r` is `rank x cols` in pivoted
/// column order.
#[derive(Clone, Debug)]
pub struct RrqrResult {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    pub perm: Vec<usize>,
    pub rank: usize,
    /// `|R_kk|` for the accepted steps.
    pub diag: Vec<f64>,
    pub flops: u64,
}

struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    // Applies I - beta v vᵀ to x (the trailing part starting at the pivot row).
    #[inline]
    fn apply(&self, x: &mut [f64]) {
        let s = self.beta * dot(&self.v, x);
        if s != 0.0 {
            for (xi, vi) in x.iter_mut().zip(&self.v) {
                *xi -= s * vi;
            }
        }
    }
}

/// Householder QR core. With `pivot`, columns are chosen by largest remaining
/// norm and `stop(k, |R_kk|, |R_11|)` is asked before step `k`; returning
/// true truncates at rank `k`.
fn householder(
    s: &DenseMatrix,
    pivot: bool,
    want_q: bool,
    mut stop: impl FnMut(usize, f64, f64) -> bool,
) -> RrqrResult {
    let (m, n) = (s.rows(), s.cols());
    let kmax = m.min(n);
    let mut w = s.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut flops: u64 = 0;

    let mut vn1: Vec<f64> = Vec::new();
    let mut vn2: Vec<f64> = Vec::new();
    if pivot {
        vn1 = (0..n).map(|j| norm2(w.col(j))).collect();
        vn2 = vn1.clone();
        flops += 2 * (m * n) as u64;
    }

    let mut refl: Vec<Option<Reflector>> = Vec::with_capacity(kmax);
    let mut r11: Option<f64> = None;
    let mut rank = 0;

    for k in 0..kmax {
        if pivot {
            let mut p = argmax_from(&vn1, k);
            if w.col(p)[k..].iter().all(|&x| x == 0.0) {
                // Downdated norms may hide a nonzero column; recompute exactly.
                for j in k..n {
                    vn1[j] = norm2(&w.col(j)[k..]);
                    vn2[j] = vn1[j];
                }
                flops += 2 * ((m - k) * (n - k)) as u64;
                p = argmax_from(&vn1, k);
                if vn1[p] == 0.0 {
                    break;
                }
            }
            if p != k {
                w.swap_cols(k, p);
                perm.swap(k, p);
                vn1.swap(k, p);
                vn2.swap(k, p);
            }
        }

        let nrm = norm2(&w.col(k)[k..]);
        flops += 2 * (m - k) as u64;
        let ref11 = *r11.get_or_insert(nrm);
        if pivot && stop(k, nrm, ref11) {
            break;
        }

        if nrm == 0.0 {
            refl.push(None);
            rank = k + 1;
            continue;
        }

        let x0 = w.get(k, k);
        let alpha = if x0 >= 0.0 { -nrm } else { nrm };
        let mut v = w.col(k)[k..].to_vec();
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        let h = Reflector { v, beta: 2.0 / vtv };
        {
            let col = w.col_mut(k);
            col[k] = alpha;
            col[k + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        for j in k + 1..n {
            h.apply(&mut w.col_mut(j)[k..]);
        }
        flops += 4 * ((m - k) * (n - k - 1)) as u64 + 3 * (m - k) as u64;

        if pivot {
            for j in k + 1..n {
                if vn1[j] == 0.0 {
                    continue;
                }
                let t = w.get(k, j).abs() / vn1[j];
                let t = ((1.0 + t) * (1.0 - t)).max(0.0);
                let t2 = t * (vn1[j] / vn2[j]).powi(2);
                // Recompute once the running norm drops below 0.1x its reference.
                if t2 <= 0.01 {
                    vn1[j] = norm2(&w.col(j)[k + 1..]);
                    vn2[j] = vn1[j];
                    flops += 2 * (m - k - 1) as u64;
                } else {
                    vn1[j] *= t.sqrt();
                }
            }
        }

        refl.push(Some(h));
        rank = k + 1;
    }

    let r = DenseMatrix::from_fn(rank, n, |i, j| if i <= j { w.get(i, j) } else { 0.0 });
    let diag = (0..rank).map(|k| w.get(k, k).abs()).collect();

    let q = if want_q {
        let mut q = DenseMatrix::from_fn(m, rank, |i, j| if i == j { 1.0 } else { 0.0 });
        for k in (0..rank).rev() {
            if let Some(h) = &refl[k] {
                for j in k..rank {
                    h.apply(&mut q.col_mut(j)[k..]);
                }
                flops += 4 * ((m - k) * (rank - k)) as u64;
            }
        }
        q
    } else {
        DenseMatrix::zeros(m, 0)
    };

    RrqrResult {
        q,
        r,
        perm,
        rank,
        diag,
        flops,
    }
}

// First index of the maximum (ties keep the earliest column).
fn argmax_from(v: &[f64], k: usize) -> usize {
    let mut p = k;
    for j in k + 1..v.len() {
        if v[j] > v[p] {
            p = j;
        }
    }
    p
}

/// Thin Householder QR without pivoting: `Q` is `m x min(m,n)`, `R` is
/// `min(m,n) x n` upper triangular.
pub fn qr(s: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let res = qr_counted(s);
    (res.q, res.r)
}

/// [`qr`] returning the full result including flop count.
pub fn qr_counted(s: &DenseMatrix) -> RrqrResult {
    householder(s, false, true, |_, _, _| false)
}

/// Column-pivoted QR truncated at the first `k` with
/// `|R_{k+1,k+1}| <= eps_abs` or `|R_{k+1,k+1}| <= eps_rel |R_11|`.
pub fn rrqr(s: &DenseMatrix, eps_rel: f64, eps_abs: f64) -> RrqrResult {
    rrqr_scaled(s, eps_rel, eps_abs, true, |_| 1.0)
}

/// Pivoted QR where both tolerances at step `k` are divided by `factor(k)`.
/// An infinite factor forbids truncation at that `k`.
pub fn rrqr_scaled(
    s: &DenseMatrix,
    eps_rel: f64,
    eps_abs: f64,
    want_q: bool,
    factor: impl Fn(usize) -> f64,
) -> RrqrResult {
    householder(s, true, want_q, |k, nrm, r11| {
        let f = factor(k);
        nrm <= eps_abs / f || nrm <= eps_rel * r11 / f
    })
}

/// Oversampling-aware factor `1 + 4 sqrt(d) / (d - k - 1) * sqrt(min_mn)`
/// for accepting rank `k` from `d` samples; infinite when `d - k - 1 <= 0`.
pub fn hmt_factor(k: usize, d: usize, min_mn: usize) -> f64 {
    if d > k + 1 {
        1.0 + 4.0 * (d as f64).sqrt() / (d - k - 1) as f64 * (min_mn as f64).sqrt()
    } else {
        f64::INFINITY
    }
}

/// Pivoted QR with the oversampling-scaled stopping rule. `m_orig`, `n_orig`
/// are the sizes of the original Hankel block, not of `s`.
pub fn rrqr_hmt(
    s: &DenseMatrix,
    d0: usize,
    p: usize,
    m_orig: usize,
    n_orig: usize,
    eps_rel: f64,
    eps_abs: f64,
) -> RrqrResult {
    let d = d0 + p;
    let min_mn = m_orig.min(n_orig);
    rrqr_scaled(s, eps_rel, eps_abs, true, |k| hmt_factor(k, d, min_mn))
}

pub(crate) fn rrqr_no_q(
    s: &DenseMatrix,
    eps_rel: f64,
    eps_abs: f64,
    factor: impl Fn(usize) -> f64,
) -> RrqrResult {
    rrqr_scaled(s, eps_rel, eps_abs, false, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::rng::{randn, RngStream};

    fn orth_err(q: &DenseMatrix) -> f64 {
        q.tr_matmul(q).sub(&DenseMatrix::identity(q.cols())).fro_norm()
    }

    #[test]
    fn qr_identity() {
        let (q, r) = qr(&DenseMatrix::identity(3));
        for i in 0..3 {
            assert!((q.get(i, i).abs() - 1.0).abs() < 1e-15);
            assert!((r.get(i, i).abs() - 1.0).abs() < 1e-15);
        }
        assert!(q.matmul(&r).sub(&DenseMatrix::identity(3)).fro_norm() < 1e-15);
    }

    #[test]
    fn qr_random_residual() {
        let s = randn(&mut RngStream::new(2), 8, 3);
        let (q, r) = qr(&s);
        assert!(q.matmul(&r).sub(&s).fro_norm() / s.fro_norm() <= 1e-12);
        assert!(orth_err(&q) <= 1e-12 * 3.0);
        for i in 0..r.rows() {
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn qr_duplicated_column_is_deficient() {
        let mut s = randn(&mut RngStream::new(4), 6, 3);
        let c0 = s.col(0).to_vec();
        s.col_mut(2).copy_from_slice(&c0);
        let (_, r) = qr(&s);
        let two_norm_upper = s.fro_norm();
        let min_diag = (0..3).map(|i| r.get(i, i).abs()).fold(f64::INFINITY, f64::min);
        assert!(min_diag <= 1e-12 * two_norm_upper);
    }

    #[test]
    fn qr_wide_and_zero_columns() {
        let mut s = randn(&mut RngStream::new(9), 3, 5);
        s.col_mut(0).iter_mut().for_each(|x| *x = 0.0);
        let (q, r) = qr(&s);
        assert_eq!((q.cols(), r.rows(), r.cols()), (3, 3, 5));
        assert!(q.matmul(&r).sub(&s).fro_norm() < 1e-13 * s.fro_norm());
    }

    #[test]
    fn rrqr_separated_diag() {
        let s = DenseMatrix::from_diag(&[4.0, 2.0, 1e-20]);
        let res = rrqr(&s, 1e-8, 0.0);
        assert_eq!(res.rank, 2);
        assert_eq!(res.perm[..2], [0, 1]);
        assert_eq!(res.q.cols(), 2);
    }

    #[test]
    fn rrqr_zero_matrix() {
        let res = rrqr(&DenseMatrix::zeros(5, 4), 1e-8, 1e-8);
        assert_eq!(res.rank, 0);
        assert_eq!(res.q.cols(), 0);
        let res = rrqr(&DenseMatrix::zeros(5, 4), 0.0, 0.0);
        assert_eq!(res.rank, 0);
    }

    #[test]
    fn rrqr_pivoted_residual() {
        let s = randn(&mut RngStream::new(5), 12, 7);
        let res = rrqr(&s, 0.0, 0.0);
        assert_eq!(res.rank, 7);
        let sp = s.select_cols(&res.perm);
        assert!(res.q.matmul(&res.r).sub(&sp).fro_norm() < 1e-13 * s.fro_norm());
        // Pivoting makes the diagonal non-increasing.
        for w in res.diag.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn hmt_factor_value() {
        let f = hmt_factor(10, 138, 1000);
        let expect = 1.0 + 4.0 * 138f64.sqrt() / 127.0 * 1000f64.sqrt();
        assert!((f - expect).abs() < 1e-12);
        assert!((f - 12.70).abs() < 0.01);
        assert!(hmt_factor(9, 10, 5).is_infinite());
    }

    #[test]
    fn rrqr_hmt_zero_and_limit() {
        let z = rrqr_hmt(&DenseMatrix::zeros(6, 12), 8, 4, 100, 100, 1e-3, 1e-3);
        assert_eq!(z.rank, 0);
        let s = randn(&mut RngStream::new(6), 10, 6);
        let a = rrqr(&s, 1e-2, 1e-2);
        let b = rrqr_scaled(&s, 1e-2, 1e-2, true, |_| 1.0);
        assert_eq!(a.rank, b.rank);
        assert_eq!(a.perm, b.perm);
        assert_eq!(a.r, b.r);
    }

    #[test]
    fn rrqr_hmt_needs_slack() {
        // Exact rank 3 from 4 samples: F is infinite at k=3, so no truncation.
        let a = randn(&mut RngStream::new(1), 20, 3);
        let b = randn(&mut RngStream::new(2), 3, 4);
        let s = a.matmul(&b);
        let res = rrqr_hmt(&s, 4, 0, 20, 20, 1e-8, 1e-8);
        assert_eq!(res.rank, 4);
        let res = rrqr_hmt(&s, 3, 5, 20, 20, 1e-8, 1e-8);
        assert_eq!(rrqr(&s, 1e-8, 1e-8).rank, 3);
        assert!(res.rank >= 3);
    }
}
