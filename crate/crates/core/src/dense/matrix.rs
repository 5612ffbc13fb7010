use std::fmt;
use std::ops::Range;

/// Column-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:>12.4e}", self.get(i, j))?;
            }
            if self.cols > 8 {
                write!(f, " ...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Wraps column-major `data`. Panics if the length does not match.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        Self::from_fn(m, n, |i, j| {
            assert_eq!(rows[i].len(), n, "ragged rows");
            rows[i][j]
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let m = self.rows;
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.data.split_at_mut(hi * m);
        left[lo * m..(lo + 1) * m].swap_with_slice(&mut right[..m]);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn fro_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// `self * other`, accumulating column by column so that sub-block
    /// products use the same summation order as the full product.
    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for j in 0..n {
            let bj = other.col(j);
            let cj = out.col_mut(j);
            for (p, &b) in bj.iter().enumerate().take(k) {
                if b == 0.0 {
                    continue;
                }
                let ap = &self.data[p * m..(p + 1) * m];
                for (c, &a) in cj.iter_mut().zip(ap) {
                    *c += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other`
    pub fn tr_matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(
            self.rows, other.rows,
            "tr_matmul dimension mismatch {}x{}ᵀ * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (k, n) = (self.cols, other.cols);
        let mut out = Self::zeros(k, n);
        for j in 0..n {
            let bj = other.col(j);
            for i in 0..k {
                out.data[j * k + i] = dot(self.col(i), bj);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (yi, &a) in y.iter_mut().zip(self.col(j)) {
                *yi += a * xj;
            }
        }
        y
    }

    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        (0..self.cols).map(|j| dot(self.col(j), x)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |i, j| self.get(idx[i], j))
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Self::from_col_major(self.rows, idx.len(), data)
    }

    pub fn col_range(&self, r: Range<usize>) -> Self {
        let data = self.data[r.start * self.rows..r.end * self.rows].to_vec();
        Self::from_col_major(self.rows, r.len(), data)
    }

    pub fn row_range(&self, r: Range<usize>) -> Self {
        Self::from_fn(r.len(), self.cols, |i, j| self.get(r.start + i, j))
    }

    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| {
            self.get(rows.start + i, cols.start + j)
        })
    }

    pub fn set_block(&mut self, row0: usize, col0: usize, b: &DenseMatrix) {
        assert!(row0 + b.rows <= self.rows && col0 + b.cols <= self.cols);
        for j in 0..b.cols {
            let dst = &mut self.data[(col0 + j) * self.rows + row0..][..b.rows];
            dst.copy_from_slice(b.col(j));
        }
    }

    /// Appends the columns of `other` on the right.
    pub fn append_cols(&mut self, other: &DenseMatrix) {
        if self.cols == 0 && self.rows == 0 {
            *self = other.clone();
            return;
        }
        assert_eq!(self.rows, other.rows, "append_cols row mismatch");
        self.data.extend_from_slice(&other.data);
        self.cols += other.cols;
    }

    pub fn hcat(&self, other: &DenseMatrix) -> Self {
        let mut out = self.clone();
        out.append_cols(other);
        out
    }

    pub fn vcat(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.cols, other.cols, "vcat column mismatch");
        let rows = self.rows + other.rows;
        let mut data = Vec::with_capacity(rows * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(self.col(j));
            data.extend_from_slice(other.col(j));
        }
        Self::from_col_major(rows, self.cols, data)
    }

    /// Flop count charged for `(m x k) * (k x n)`.
    pub fn gemm_flops(m: usize, k: usize, n: usize) -> u64 {
        2 * (m as u64) * (k as u64) * (n as u64)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm with scaling so tiny or huge entries do not under/overflow.
pub fn norm2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let b = DenseMatrix::from_rows(&[&[1.0, 0.0, -1.0], &[2.0, 1.0, 0.0]]);
        let c = a.matmul(&b);
        let expect = DenseMatrix::from_rows(&[&[5.0, 2.0, -1.0], &[11.0, 4.0, -3.0], &[17.0, 6.0, -5.0]]);
        assert_eq!(c, expect);
        assert_eq!(a.tr_matmul(&a), a.transpose().matmul(&a));
    }

    #[test]
    fn concatenation_and_selection() {
        let a = DenseMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64);
        let b = DenseMatrix::from_fn(3, 1, |i, _| -(i as f64));
        let h = a.hcat(&b);
        assert_eq!(h.cols(), 3);
        assert_eq!(h.col(2), b.col(0));
        let v = a.vcat(&a);
        assert_eq!(v.rows(), 6);
        assert_eq!(v.get(4, 1), a.get(1, 1));
        let s = a.select_rows(&[2, 0]);
        assert_eq!(s.get(0, 1), 21.0);
        let mut e = DenseMatrix::zeros(0, 0);
        e.append_cols(&a);
        assert_eq!(e, a);
    }

    #[test]
    fn swap_cols_both_orders() {
        let mut a = DenseMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64);
        let orig = a.clone();
        a.swap_cols(2, 0);
        assert_eq!(a.col(0), orig.col(2));
        assert_eq!(a.col(2), orig.col(0));
        a.swap_cols(1, 1);
        assert_eq!(a.col(1), orig.col(1));
    }

    #[test]
    fn norm2_is_scale_safe() {
        assert_eq!(norm2(&[]), 0.0);
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        let tiny = norm2(&[3e-300, 4e-300]);
        assert!((tiny / 5e-300 - 1.0).abs() < 1e-14);
    }
}
