//! Dense kernels checked against an independent SVD.

use hssrand::dense::{interp_decomp, randn, rrqr, IdOptions};
use hssrand::{DenseMatrix, RngStream};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(a.rows(), a.cols(), a.as_slice())
}

fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `U diag(σ) Vᵀ` with random orthonormal factors.
fn with_spectrum(m: usize, n: usize, sigma: &[f64], seed: u64) -> DenseMatrix {
    let mut rng = RngStream::new(seed);
    let k = sigma.len();
    let (u, _) = hssrand::dense::qr(&randn(&mut rng, m, k));
    let (v, _) = hssrand::dense::qr(&randn(&mut rng, n, k));
    let mut us = u.clone();
    for (j, s) in sigma.iter().enumerate() {
        for x in us.col_mut(j) {
            *x *= s;
        }
    }
    us.matmul(&v.transpose())
}

#[test]
fn rrqr_rank_matches_svd_gap() {
    // Separated spectrum: RRQR and SVD agree on the numerical rank.
    let sigma: Vec<f64> = (0..30).map(|i| if i < 12 { 10f64.powi(-i / 4) } else { 1e-13 }).collect();
    let a = with_spectrum(80, 60, &sigma, 5);
    let sv = singular_values(&a);
    let eps_rank = sv.iter().filter(|&&s| s > 1e-8 * sv[0]).count();
    let res = rrqr(&a, 1e-8, 0.0);
    assert_eq!(eps_rank, 12);
    assert_eq!(res.rank, eps_rank);
    let resid = a.select_cols(&res.perm).sub(&res.q.matmul(&res.r)).fro_norm();
    assert!(resid <= 1e-10 * a.fro_norm());
}

#[test]
fn rrqr_truncation_error_tracks_svd_tail() {
    let sigma: Vec<f64> = (0..40).map(|i| 0.5f64.powi(i)).collect();
    let a = with_spectrum(70, 50, &sigma, 6);
    let res = rrqr(&a, 1e-6, 0.0);
    let k = res.rank;
    let sv = singular_values(&a);
    let resid = a.select_cols(&res.perm).sub(&res.q.matmul(&res.r));
    let tail: f64 = sv[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
    // Pivoted QR is within a modest factor of the optimal truncation.
    assert!(resid.fro_norm() >= tail * (1.0 - 1e-8));
    assert!(resid.fro_norm() <= 50.0 * tail.max(1e-6 * sv[0]));
}

fn matrix(m: usize, n: usize, k: usize) -> impl Strategy<Value = DenseMatrix> {
    any::<u64>().prop_map(move |seed| {
        let mut rng = RngStream::new(seed);
        randn(&mut rng, m, k).matmul(&randn(&mut rng, k, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rrqr_residual_below_tolerance(a in matrix(40, 30, 8), eps in 1e-12f64..1e-3) {
        let res = rrqr(&a, eps, 0.0);
        let resid = a.select_cols(&res.perm).sub(&res.q.matmul(&res.r));
        // Trailing block bounded by the stopping test times sqrt(columns).
        prop_assert!(resid.fro_norm() <= eps * res.diag.first().copied().unwrap_or(0.0) * 30f64.sqrt() * 4.0 + 1e-12 * a.fro_norm());
        let qtq = res.q.tr_matmul(&res.q).sub(&DenseMatrix::identity(res.rank));
        prop_assert!(qtq.fro_norm() < 1e-12 * (res.rank.max(1) as f64));
        prop_assert!(res.diag.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn id_reconstructs_low_rank_rows(a in matrix(50, 20, 6)) {
        // Row ID of a 50 x 20 matrix of rank 6: A ≈ U A(J, :).
        let out = interp_decomp(&a.transpose(), 1e-12, 0.0, IdOptions::default()).unwrap();
        let id = out.id;
        prop_assert_eq!(id.rank, 6);
        let approx = id.apply(&a.select_rows(&id.selected));
        prop_assert!(approx.sub(&a).fro_norm() <= 1e-9 * a.fro_norm());
        let u = id.to_dense();
        for (i, &r) in id.selected.iter().enumerate() {
            for j in 0..id.rank {
                prop_assert_eq!(u.get(r, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn svd_rank_bounds_rrqr_rank(a in matrix(30, 30, 10)) {
        let sv = singular_values(&a);
        let res = rrqr(&a, 1e-10, 0.0);
        let svd_rank = sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count();
        prop_assert_eq!(res.rank, svd_rank);
    }
}
