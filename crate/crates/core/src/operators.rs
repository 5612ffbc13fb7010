//! Partially matrix-free input contract and built-in kernels.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::dense::{qr, randn, DenseMatrix, RngStream};
use crate::error::{HssError, Result};

/// A square matrix known through random sampling and element extraction.
///
/// `multiply` and `extract` must describe the same matrix. Indices are 0-based.
pub trait MatrixSource: Send + Sync {
    fn n(&self) -> usize;

    /// `(A R, Aᵀ R)`.
    fn multiply(&self, r: &DenseMatrix) -> (DenseMatrix, DenseMatrix);

    /// The sub-block `A(rows, cols)`.
    fn extract(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix>;

    /// Flops charged for one call of `multiply` with `d` columns.
    fn multiply_flops(&self, d: usize) -> u64;

    /// Flops charged for extracting `entries` elements.
    fn extract_flops(&self, entries: usize) -> u64 {
        entries as u64
    }

    fn to_dense(&self) -> Result<DenseMatrix> {
        let all: Vec<usize> = (0..self.n()).collect();
        self.extract(&all, &all)
    }
}

fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= n) {
        Some(&index) => Err(HssError::IndexOutOfRange { index, n }),
        None => Ok(()),
    }
}

fn check_rows(r: &DenseMatrix, n: usize) {
    assert_eq!(r.rows(), n, "random block has {} rows, operator has order {}", r.rows(), n);
}

/// `D_kk = 2^(-53 (k-1) / r)` for 1-based `k`.
pub fn param_diag(k: usize, r: usize) -> f64 {
    assert!(k >= 1 && r >= 1);
    (-53.0 * (k - 1) as f64 / r as f64).exp2()
}

/// `α I + β U D Vᵀ` with `U`, `V` orthonormal `n x r`, kept in factored form.
#[derive(Clone, Debug)]
pub struct ParamKernel {
    n: usize,
    alpha: f64,
    beta: f64,
    u: DenseMatrix,
    v: DenseMatrix,
    d: Vec<f64>,
}

impl ParamKernel {
    /// `decay` selects `D_kk = param_diag(k, r)`; otherwise `D = I`.
    pub fn new(n: usize, r: usize, alpha: f64, beta: f64, decay: bool, seed: u64) -> Result<Self> {
        if r > n {
            return Err(HssError::InvalidConfig(format!("rank {r} exceeds order {n}")));
        }
        let mut rng = RngStream::new(seed);
        let (u, _) = qr(&randn(&mut rng, n, r));
        let (v, _) = qr(&randn(&mut rng, n, r));
        let d = (1..=r).map(|k| if decay { param_diag(k, r) } else { 1.0 }).collect();
        Ok(Self { n, alpha, beta, u, v, d })
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    // α R + β X diag(D) Yᵀ R
    fn apply(&self, x: &DenseMatrix, y: &DenseMatrix, r: &DenseMatrix) -> DenseMatrix {
        let mut out = r.scaled(self.alpha);
        if self.beta != 0.0 && !self.d.is_empty() {
            let mut c = y.tr_matmul(r);
            for j in 0..c.cols() {
                for (ci, di) in c.col_mut(j).iter_mut().zip(&self.d) {
                    *ci *= di;
                }
            }
            out.axpy(self.beta, &x.matmul(&c));
        }
        out
    }
}

impl MatrixSource for ParamKernel {
    fn n(&self) -> usize {
        self.n
    }

    fn multiply(&self, r: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        check_rows(r, self.n);
        (self.apply(&self.u, &self.v, r), self.apply(&self.v, &self.u, r))
    }

    fn extract(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix> {
        check_indices(rows, self.n)?;
        check_indices(cols, self.n)?;
        let k = self.d.len();
        // Row-gathered factors so each entry is a contiguous dot product.
        let ur: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| (0..k).map(|l| self.u.get(i, l) * self.d[l]).collect())
            .collect();
        let vc: Vec<Vec<f64>> = cols.iter().map(|&j| (0..k).map(|l| self.v.get(j, l)).collect()).collect();
        Ok(DenseMatrix::from_fn(rows.len(), cols.len(), |a, b| {
            let diag = if rows[a] == cols[b] { self.alpha } else { 0.0 };
            let low: f64 = ur[a].iter().zip(&vc[b]).map(|(x, y)| x * y).sum();
            diag + self.beta * low
        }))
    }

    fn multiply_flops(&self, d: usize) -> u64 {
        let (n, r, d) = (self.n as u64, self.d.len() as u64, d as u64);
        2 * (4 * n * r * d + r * d + 3 * n * d)
    }

    fn extract_flops(&self, entries: usize) -> u64 {
        (2 * self.d.len() as u64 + 2) * entries as u64
    }
}

/// Symmetric Toeplitz matrix `A(i, j) = t_{|i-j|}`.
#[derive(Clone, Debug)]
pub struct ToeplitzKernel {
    t: Vec<f64>,
}

impl ToeplitzKernel {
    pub fn new(n: usize, generator: impl Fn(usize) -> f64) -> Self {
        Self {
            t: (0..n).map(generator).collect(),
        }
    }

    /// Default smooth generator `t_k = 1 / (1 + k)`.
    pub fn harmonic(n: usize) -> Self {
        Self::new(n, |k| 1.0 / (1.0 + k as f64))
    }

    pub fn symbol(&self) -> &[f64] {
        &self.t
    }
}

impl MatrixSource for ToeplitzKernel {
    fn n(&self) -> usize {
        self.t.len()
    }

    fn multiply(&self, r: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let n = self.t.len();
        check_rows(r, n);
        let mut s = DenseMatrix::zeros(n, r.cols());
        for j in 0..r.cols() {
            let (rc, sc) = (r.col(j), s.col_mut(j));
            for (i, si) in sc.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &x) in rc.iter().enumerate() {
                    acc += self.t[i.abs_diff(k)] * x;
                }
                *si = acc;
            }
        }
        // Symmetric: Aᵀ R = A R.
        (s.clone(), s)
    }

    fn extract(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix> {
        let n = self.t.len();
        check_indices(rows, n)?;
        check_indices(cols, n)?;
        Ok(DenseMatrix::from_fn(rows.len(), cols.len(), |a, b| self.t[rows[a].abs_diff(cols[b])]))
    }

    fn multiply_flops(&self, d: usize) -> u64 {
        let n = self.t.len() as u64;
        2 * n * n * d as u64
    }
}

/// Explicitly stored square matrix.
#[derive(Clone, Debug)]
pub struct ExplicitDense {
    a: DenseMatrix,
}

impl ExplicitDense {
    pub fn new(a: DenseMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(HssError::DimensionMismatch(format!("matrix is {}x{}, not square", a.rows(), a.cols())));
        }
        if !a.all_finite() {
            return Err(HssError::Parse("matrix has non-finite entries".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    /// Reads a little-endian `u64 rows, u64 cols, f64 data[col-major]` file.
    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut f = BufReader::new(fs::File::open(path)?);
        let mut hdr = [0u8; 16];
        f.read_exact(&mut hdr)?;
        let rows = u64::from_le_bytes(hdr[..8].try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(hdr[8..].try_into().expect("8 bytes")) as usize;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        let want = rows
            .checked_mul(cols)
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| HssError::Parse("header dimensions overflow".into()))?;
        if bytes.len() != want {
            return Err(HssError::Parse(format!(
                "expected {want} data bytes for {rows}x{cols}, found {}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(DenseMatrix::from_col_major(rows, cols, data))
    }

    pub fn save_binary(a: &DenseMatrix, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        f.write_all(&(a.rows() as u64).to_le_bytes())?;
        f.write_all(&(a.cols() as u64).to_le_bytes())?;
        for v in a.as_slice() {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads one matrix row per line, comma separated.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in f.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| HssError::Parse(format!("line {}: {e}", ln + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(HssError::Parse(format!("line {}: ragged row", ln + 1)));
                }
            }
            rows.push(row);
        }
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        Self::new(DenseMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    /// Dispatches on extension: `.csv` is text, everything else binary.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::load_csv(path),
            _ => Self::load_binary(path),
        }
    }
}

impl MatrixSource for ExplicitDense {
    fn n(&self) -> usize {
        self.a.rows()
    }

    fn multiply(&self, r: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        check_rows(r, self.a.rows());
        (self.a.matmul(r), self.a.tr_matmul(r))
    }

    fn extract(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix> {
        let n = self.a.rows();
        check_indices(rows, n)?;
        check_indices(cols, n)?;
        Ok(DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| self.a.get(rows[i], cols[j])))
    }

    fn multiply_flops(&self, d: usize) -> u64 {
        let n = self.a.rows();
        2 * DenseMatrix::gemm_flops(n, n, d)
    }

    fn to_dense(&self) -> Result<DenseMatrix> {
        Ok(self.a.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn param_identity() {
        let k = ParamKernel::new(20, 4, 1.0, 0.0, false, 1).unwrap();
        let r = randn(&mut RngStream::new(2), 20, 3);
        let (sr, sc) = k.multiply(&r);
        assert_eq!(sr, r);
        assert_eq!(sc, r);
    }

    #[test]
    fn param_extract_diagonal() {
        let k = ParamKernel::new(10, 3, 2.0, 0.0, true, 1).unwrap();
        assert_eq!(k.extract(&[2], &[2]).unwrap().get(0, 0), 2.0);
        assert!(matches!(k.extract(&[10], &[0]), Err(HssError::IndexOutOfRange { index: 10, n: 10 })));
    }

    #[test]
    fn param_diag_values() {
        assert_eq!(param_diag(1, 200), 1.0);
        assert_eq!(param_diag(201, 200), 2f64.powi(-53));
        let v = param_diag(101, 200);
        assert!((v - 2f64.powf(-26.5)).abs() < 1e-22);
        assert!((v - 1.05e-8).abs() < 0.01e-8);
        assert!(param_diag(301, 200) <= 2f64.powi(-53));
    }

    #[test]
    fn param_factors_orthonormal() {
        let k = ParamKernel::new(40, 6, 1.0, 1.0, true, 3).unwrap();
        for f in [k.u(), k.v()] {
            let e = f.tr_matmul(f).sub(&DenseMatrix::identity(6)).fro_norm();
            assert!(e < 1e-13);
        }
        assert!(k.diag().iter().all(|&d| d > 0.0 && d <= 1.0));
    }

    #[test]
    fn param_matches_dense() {
        let k = ParamKernel::new(50, 8, 1.5, -0.7, true, 9).unwrap();
        let a = ExplicitDense::new(k.to_dense().unwrap()).unwrap();
        let r = randn(&mut RngStream::new(4), 50, 5);
        let (s1, t1) = k.multiply(&r);
        let (s2, t2) = a.multiply(&r);
        assert!(s1.sub(&s2).fro_norm() <= 1e-12 * s2.fro_norm());
        assert!(t1.sub(&t2).fro_norm() <= 1e-12 * t2.fro_norm());
    }

    #[test]
    fn explicit_unit_vector() {
        let a = DenseMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let src = ExplicitDense::new(a.clone()).unwrap();
        let mut e1 = DenseMatrix::zeros(4, 1);
        e1.set(0, 0, 1.0);
        let (sr, sc) = src.multiply(&e1);
        assert_eq!(sr.col(0), a.col(0));
        assert_eq!(sc.col(0), a.transpose().col(0));
    }

    #[test]
    fn toeplitz_extract() {
        let t = ToeplitzKernel::harmonic(6);
        let b = t.extract(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(b, DenseMatrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]));
    }

    #[test]
    fn explicit_rejects_non_square() {
        assert!(ExplicitDense::new(DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = randn(&mut RngStream::new(8), 5, 5);
        let p = dir.path().join("a.bin");
        ExplicitDense::save_binary(&a, &p).unwrap();
        assert_eq!(ExplicitDense::load(&p).unwrap().matrix(), &a);

        let c = dir.path().join("a.csv");
        let text: String = (0..5)
            .map(|i| (0..5).map(|j| format!("{:e}", a.get(i, j))).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        fs::write(&c, text).unwrap();
        assert_eq!(ExplicitDense::load(&c).unwrap().matrix(), &a);

        fs::write(&c, "1,2\n3\n").unwrap();
        assert!(ExplicitDense::load(&c).is_err());
    }

    fn consistency(src: &dyn MatrixSource, rows: &[usize], cols: &[usize]) -> f64 {
        let n = src.n();
        let mut e = DenseMatrix::zeros(n, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            e.set(c, j, 1.0);
        }
        let (sr, _) = src.multiply(&e);
        let via_mult = sr.select_rows(rows);
        src.extract(rows, cols).unwrap().sub(&via_mult).max_abs()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn multiply_extract_consistent(
            seed in 0u64..1000,
            rows in proptest::collection::vec(0usize..60, 1..8),
            cols in proptest::collection::vec(0usize..60, 1..8),
        ) {
            let p = ParamKernel::new(60, 7, 1.0, 2.0, seed % 2 == 0, seed).unwrap();
            prop_assert!(consistency(&p, &rows, &cols) <= 1e-13);
            let t = ToeplitzKernel::harmonic(60);
            prop_assert!(consistency(&t, &rows, &cols) <= 1e-13);
            let d = ExplicitDense::new(randn(&mut RngStream::new(seed), 60, 60)).unwrap();
            prop_assert!(consistency(&d, &rows, &cols) <= 1e-13);
        }
    }
}
