use serde::Serialize;

use super::qr::{hmt_factor, rrqr_no_q};
use super::DenseMatrix;
use crate::error::{HssError, Result};

/// Row interpolative decomposition `S ≈ Π [I; E] S(J, :)`.
///
/// Row `perm[i]` of the basis is the unit vector `e_i` for `i < rank` and row
/// `E(i - rank, :)` otherwise. `selected == perm[..rank]`. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdResult {
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub coeff: DenseMatrix,
    pub perm: Vec<usize>,
    pub rank: usize,
}

/// Tolerance scaling used when the ID doubles as an adaptive stopping test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HmtParams {
    /// Number of sample columns the factor is computed for.
    pub d: usize,
    pub m_orig: usize,
    pub n_orig: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdOptions {
    pub hmt: Option<HmtParams>,
    /// When set, ranks above `samples - p` (that are not full) count as failure.
    pub oversampling: Option<usize>,
}

/// Smallest admissible `|R_kk|` of the selected block before back-substitution.
pub const R1_GUARD: f64 = 1e-300;

impl IdResult {
    /// Rank-0 decomposition of `m` rows.
    pub fn empty(m: usize) -> Self {
        Self {
            selected: Vec::new(),
            coeff: DenseMatrix::zeros(m, 0),
            perm: (0..m).collect(),
            rank: 0,
        }
    }

    /// Trivial decomposition selecting every row.
    pub fn identity(m: usize) -> Self {
        Self {
            selected: (0..m).collect(),
            coeff: DenseMatrix::zeros(0, m),
            perm: (0..m).collect(),
            rank: m,
        }
    }

    pub fn rows(&self) -> usize {
        self.perm.len()
    }

    /// `U X` for `X` of shape `rank x c`.
    pub fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(x.rows(), self.rank, "IdResult::apply dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows(), x.cols());
        let ex = self.coeff.matmul(x);
        for j in 0..x.cols() {
            let (xc, ec) = (x.col(j), ex.col(j));
            let oc = out.col_mut(j);
            for (i, &p) in self.perm.iter().enumerate() {
                oc[p] = if i < self.rank { xc[i] } else { ec[i - self.rank] };
            }
        }
        out
    }

    /// `Uᵀ Y` for `Y` of shape `rows x c`.
    pub fn apply_t(&self, y: &DenseMatrix) -> DenseMatrix {
        assert_eq!(y.rows(), self.rows(), "IdResult::apply_t dimension mismatch");
        let top = y.select_rows(&self.selected);
        if self.rank == self.rows() {
            return top;
        }
        let rest = y.select_rows(&self.perm[self.rank..]);
        top.add(&self.coeff.tr_matmul(&rest))
    }

    /// `U x` for a vector.
    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let ex = self.coeff.matvec(x);
        let mut out = vec![0.0; self.rows()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = if i < self.rank { x[i] } else { ex[i - self.rank] };
        }
        out
    }

    /// `Uᵀ y` for a vector.
    pub fn apply_t_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.selected.iter().map(|&i| y[i]).collect();
        if self.rank < self.rows() {
            let rest: Vec<f64> = self.perm[self.rank..].iter().map(|&i| y[i]).collect();
            for (o, v) in out.iter_mut().zip(self.coeff.tr_matvec(&rest)) {
                *o += v;
            }
        }
        out
    }

    /// Flops of [`apply`](Self::apply) / [`apply_t`](Self::apply_t) on `c` columns.
    pub fn apply_flops(&self, c: usize) -> u64 {
        DenseMatrix::gemm_flops(self.rows() - self.rank, self.rank, c)
    }

    /// Explicit `rows x rank` basis.
    pub fn to_dense(&self) -> DenseMatrix {
        self.apply(&DenseMatrix::identity(self.rank))
    }

    /// Number of stored coefficient entries.
    pub fn stored_entries(&self) -> usize {
        self.coeff.rows() * self.coeff.cols()
    }
}

/// Outcome of [`interp_decomp`] with its flop count.
#[derive(Clone, Debug)]
pub struct IdOutcome {
    pub id: IdResult,
    pub flops: u64,
}

/// Row ID of `S` from its transpose `s_t = Sᵀ` (`samples x rows`), using a
/// truncated column-pivoted QR `s_t Π = Q [R1 R2]` and `E = (R1⁻¹ R2)ᵀ`.
pub fn interp_decomp(s_t: &DenseMatrix, eps_rel: f64, eps_abs: f64, opts: IdOptions) -> Result<IdOutcome> {
    let (samples, m) = (s_t.rows(), s_t.cols());
    let res = match opts.hmt {
        Some(h) => {
            let min_mn = h.m_orig.min(h.n_orig);
            rrqr_no_q(s_t, eps_rel, eps_abs, |k| hmt_factor(k, h.d, min_mn))
        }
        None => rrqr_no_q(s_t, eps_rel, eps_abs, |_| 1.0),
    };
    let k = res.rank;
    let mut flops = res.flops;

    if let Some(p) = opts.oversampling {
        if k > samples.saturating_sub(p) && k < m {
            return Err(HssError::IdFailed {
                rank: k,
                samples,
                oversampling: p,
            });
        }
    }
    if res.diag.iter().any(|&d| d < R1_GUARD) {
        return Err(HssError::IdFailed {
            rank: k,
            samples,
            oversampling: opts.oversampling.unwrap_or(0),
        });
    }

    // Back-substitution R1 T = R2, then E = Tᵀ.
    let nr = m - k;
    let mut t = DenseMatrix::from_fn(k, nr, |i, j| res.r.get(i, k + j));
    for j in 0..nr {
        let c = t.col_mut(j);
        for i in (0..k).rev() {
            let mut v = c[i];
            for l in i + 1..k {
                v -= res.r.get(i, l) * c[l];
            }
            c[i] = v / res.r.get(i, i);
        }
    }
    flops += (k * k * nr) as u64;

    let coeff = t.transpose();
    Ok(IdOutcome {
        id: IdResult {
            selected: res.perm[..k].to_vec(),
            coeff,
            perm: res.perm,
            rank: k,
        },
        flops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::rng::{randn, RngStream};

    fn residual(s: &DenseMatrix, id: &IdResult) -> f64 {
        id.apply(&s.select_rows(&id.selected)).sub(s).fro_norm()
    }

    #[test]
    fn duplicate_row() {
        let s = DenseMatrix::from_rows(&[&[1.0, 2.0, -3.0], &[1.0, 2.0, -3.0]]);
        let id = interp_decomp(&s.transpose(), 1e-12, 1e-12, IdOptions::default()).unwrap().id;
        assert_eq!(id.rank, 1);
        assert_eq!(id.selected, vec![0]);
        assert_eq!(id.coeff.rows(), 1);
        assert!((id.coeff.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_input() {
        let id = interp_decomp(&DenseMatrix::zeros(4, 6), 1e-8, 1e-8, IdOptions::default())
            .unwrap()
            .id;
        assert_eq!(id.rank, 0);
        assert!(id.selected.is_empty());
        assert_eq!((id.coeff.rows(), id.coeff.cols()), (6, 0));
        assert_eq!(id.apply(&DenseMatrix::zeros(0, 3)), DenseMatrix::zeros(6, 3));
    }

    #[test]
    fn exact_rank_two() {
        let mut rng = RngStream::new(12);
        let s = randn(&mut rng, 8, 2).matmul(&randn(&mut rng, 2, 4));
        let id = interp_decomp(&s.transpose(), 1e-12, 0.0, IdOptions::default()).unwrap().id;
        assert_eq!(id.rank, 2);
        assert!(residual(&s, &id) <= 1e-12 * s.fro_norm());
    }

    #[test]
    fn apply_matches_dense_basis() {
        let mut rng = RngStream::new(3);
        let s = randn(&mut rng, 10, 3).matmul(&randn(&mut rng, 3, 6));
        let id = interp_decomp(&s.transpose(), 1e-10, 0.0, IdOptions::default()).unwrap().id;
        let u = id.to_dense();
        let y = randn(&mut rng, 10, 2);
        assert!(u.tr_matmul(&y).sub(&id.apply_t(&y)).fro_norm() < 1e-13);
        let x = randn(&mut rng, 3, 1);
        let ux = id.apply_vec(x.col(0));
        assert!(u.matmul(&x).col(0).iter().zip(&ux).all(|(a, b)| (a - b).abs() < 1e-13));
        let uty = id.apply_t_vec(y.col(0));
        let dense = u.tr_matmul(&y.col_range(0..1));
        assert!(dense.col(0).iter().zip(&uty).all(|(a, b)| (a - b).abs() < 1e-13));
        // Selected rows of the basis form the identity.
        assert_eq!(u.select_rows(&id.selected), DenseMatrix::identity(id.rank));
    }

    #[test]
    fn oversampling_failure() {
        let s = randn(&mut RngStream::new(5), 30, 12);
        let opts = IdOptions {
            hmt: None,
            oversampling: Some(4),
        };
        // 12 samples of a rank-12 block of 30 rows: saturated, must fail.
        let err = interp_decomp(&s.transpose(), 1e-10, 1e-10, opts).unwrap_err();
        assert!(matches!(err, HssError::IdFailed { rank: 12, .. }));
        // All rows selected is exact and accepted.
        let s = randn(&mut RngStream::new(5), 5, 12);
        assert!(interp_decomp(&s.transpose(), 1e-10, 1e-10, opts).is_ok());
    }

    #[test]
    fn identity_and_empty() {
        let i = IdResult::identity(4);
        let x = randn(&mut RngStream::new(1), 4, 2);
        assert_eq!(i.apply(&x), x);
        assert_eq!(i.apply_t(&x), x);
        let e = IdResult::empty(3);
        assert_eq!(e.apply_t(&randn(&mut RngStream::new(1), 3, 2)).rows(), 0);
    }
}
