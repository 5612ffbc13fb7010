use super::DenseMatrix;

/// `(I - Q Qᵀ)² S`, applied as two successive projection passes.
/// Returns the projected block and its flop count.
pub fn block_gram_schmidt(q: &DenseMatrix, s: &DenseMatrix) -> (DenseMatrix, u64) {
    assert_eq!(q.rows(), s.rows(), "block_gram_schmidt row mismatch");
    if q.cols() == 0 {
        return (s.clone(), 0);
    }
    let mut out = s.clone();
    for _ in 0..2 {
        let c = q.tr_matmul(&out);
        out.axpy(-1.0, &q.matmul(&c));
    }
    let (m, k, n) = (q.rows(), q.cols(), s.cols());
    (out, 2 * (2 * DenseMatrix::gemm_flops(m, k, n) + (m * n) as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::qr::qr;
    use crate::dense::rng::{randn, RngStream};

    #[test]
    fn empty_basis_is_identity() {
        let s = randn(&mut RngStream::new(1), 5, 3);
        let (sh, f) = block_gram_schmidt(&DenseMatrix::zeros(5, 0), &s);
        assert_eq!(sh, s);
        assert_eq!(f, 0);
    }

    #[test]
    fn in_range_input_vanishes() {
        let mut rng = RngStream::new(2);
        let (q, _) = qr(&randn(&mut rng, 10, 3));
        let s = q.matmul(&randn(&mut rng, 3, 4));
        let (sh, _) = block_gram_schmidt(&q, &s);
        assert!(sh.fro_norm() <= 1e-12 * s.fro_norm());
    }

    #[test]
    fn result_is_orthogonal_to_basis() {
        let mut rng = RngStream::new(3);
        let (q, _) = qr(&randn(&mut rng, 10, 3));
        let s = randn(&mut rng, 10, 2);
        let (sh, _) = block_gram_schmidt(&q, &s);
        assert!(q.tr_matmul(&sh).fro_norm() <= 1e-12);
    }
}
