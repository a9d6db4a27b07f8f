//! Dense row-major matrices, singular value decomposition, matrix norms and
//! the centering projections that pick canonical representatives of the
//! MNL equivalence classes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest one count as zero
/// when reporting numerical rank.
pub const RANK_RTOL: f64 = 1e-12;

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Thin singular value decomposition `m = u * diag(sigma) * v^T`.
///
/// `u` is `rows x p`, `v` is `cols x p` with `p = min(rows, cols)`, and
/// `sigma` is sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Nuclear,
    Frobenius,
    Spectral,
    /// Largest absolute entry.
    Linf,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Rejects empty shapes, a
    /// length mismatch and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Rectangular `rows x cols` matrix with `diag` on its main diagonal.
    pub fn from_diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for (i, &x) in diag.iter().enumerate().take(rows.min(cols)) {
            m.data[i * cols + i] = x;
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

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw entries. Callers must keep them finite.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.cols + j] = x;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.cols + j] += x;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Matrix, scale: f64) -> Result<Matrix> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Matrix { rows, cols, data }
    }
}

/// Thin SVD with singular values in nonincreasing order.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::invalid("svd of a matrix with non-finite entries"));
    }
    let dec = nalgebra::linalg::SVD::try_new(m.to_nalgebra(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical {
            iteration: 0,
            reason: "SVD failed to converge".into(),
        })?;
    let u = dec.u.as_ref().expect("u requested");
    let v_t = dec.v_t.as_ref().expect("v requested");
    Ok(Svd {
        u: Matrix::from_nalgebra(u),
        sigma: dec.singular_values.iter().copied().collect(),
        v: Matrix::from_nalgebra(&v_t.transpose()),
    })
}

/// Singular values only, nonincreasing.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::invalid("svd of a matrix with non-finite entries"));
    }
    let sv = m.to_nalgebra().singular_values();
    let mut sigma: Vec<f64> = sv.iter().copied().collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

impl Svd {
    /// `u * diag(sigma) * v^T`, with `sigma` replaced by `shrunk`.
    pub fn recompose_with(&self, shrunk: &[f64]) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for (p, &s) in shrunk.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = self.u.get(i, p) * s;
                if a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(i);
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += a * self.v.get(j, p);
                }
            }
        }
        out
    }

    pub fn recompose(&self) -> Matrix {
        self.recompose_with(&self.sigma)
    }

    /// Number of singular values above `rtol * sigma_1`.
    pub fn rank(&self, rtol: f64) -> usize {
        rank_of(&self.sigma, rtol)
    }
}

pub(crate) fn rank_of(sigma: &[f64], rtol: f64) -> usize {
    match sigma.first() {
        Some(&s1) if s1 > 0.0 => sigma.iter().filter(|&&s| s > rtol * s1).count(),
        _ => 0,
    }
}

/// Numerical rank using [`RANK_RTOL`].
pub fn rank(m: &Matrix) -> Result<usize> {
    Ok(rank_of(&singular_values(m)?, RANK_RTOL))
}

pub fn norm(m: &Matrix, kind: NormKind) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::invalid("norm of a matrix with non-finite entries"));
    }
    Ok(match kind {
        NormKind::Frobenius => m.frobenius_sq().sqrt(),
        NormKind::Linf => m.max_abs(),
        NormKind::Nuclear => singular_values(m)?.iter().sum(),
        NormKind::Spectral => singular_values(m)?.first().copied().unwrap_or(0.0),
    })
}

/// Projection onto matrices whose rows each sum to zero.
pub fn center_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let cols = m.cols() as f64;
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / cols;
        row.iter_mut().for_each(|x| *x -= mean);
    }
    out
}

/// Projection onto matrices whose entries sum to zero.
pub fn center_global(m: &Matrix) -> Matrix {
    let mean = m.sum() / m.as_slice().len() as f64;
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|x| *x -= mean);
    out
}

/// Renders the matrix CSV format: one line per row, comma separated,
/// 17 significant digits, no header.
pub fn to_csv_string(m: &Matrix) -> String {
    let mut s = String::with_capacity(m.rows() * m.cols() * 24);
    for i in 0..m.rows() {
        for (j, x) in m.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{x:.16e}").expect("write to String");
        }
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str, origin: &Path) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    reason: format!("bad number {tok:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            reason: "empty matrix file".into(),
        });
    }
    Matrix::from_rows(&rows)
}

pub fn read_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn write_csv(m: &Matrix, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        for x in &s.sigma {
            assert!((x - 1.0).abs() < 1e-14);
        }
        let d = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = svd(&d).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14);
        assert!((s.sigma[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        for (r, c) in [(8, 5), (5, 8), (1, 4), (6, 6)] {
            let m = random_matrix(r, c, 7 + r as u64);
            let s = svd(&m).unwrap();
            let rel = s.recompose().sub(&m).unwrap().frobenius_sq().sqrt() / m.frobenius_sq().sqrt();
            assert!(rel < 1e-10, "{r}x{c}: rel err {rel}");
            let utu = s.u.transpose().matmul(&s.u).unwrap();
            let vtv = s.v.transpose().matmul(&s.v).unwrap();
            let p = r.min(c);
            assert!(max_abs_diff(&utu, &Matrix::identity(p)) < 1e-10);
            assert!(max_abs_diff(&vtv, &Matrix::identity(p)) < 1e-10);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.sigma.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = Matrix {
            rows: 1,
            cols: 2,
            data: vec![1.0, f64::NAN],
        };
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn norms_of_small_matrices() {
        let d = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((norm(&d, NormKind::Nuclear).unwrap() - 4.0).abs() < 1e-14);
        assert!((norm(&d, NormKind::Spectral).unwrap() - 3.0).abs() < 1e-14);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((norm(&m, NormKind::Frobenius).unwrap() - 30f64.sqrt()).abs() < 1e-14);
        assert_eq!(norm(&m, NormKind::Linf).unwrap(), 4.0);
    }

    #[test]
    fn rank_ignores_rounding_noise() {
        let u = random_matrix(6, 2, 1);
        let v = random_matrix(2, 5, 2);
        assert_eq!(rank(&u.matmul(&v).unwrap()).unwrap(), 2);
        assert_eq!(rank(&Matrix::zeros(3, 3)).unwrap(), 0);
    }

    #[test]
    fn centering_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(center_rows(&m).as_slice(), &[-1.0, 0.0, 1.0]);
        let m = Matrix::from_rows(&[vec![2.0, 2.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(center_rows(&m).as_slice(), &[0.0, 0.0, -2.0, 2.0]);
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(center_global(&m).as_slice(), &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(center_global(&Matrix::zeros(2, 3)), Matrix::zeros(2, 3));
        let m = Matrix::from_rows(&[vec![4.0]]).unwrap();
        assert_eq!(center_global(&m).as_slice(), &[0.0]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = random_matrix(3, 4, 11);
        let text = to_csv_string(&m);
        assert_eq!(parse_csv(&text, Path::new("mem")).unwrap(), m);
        assert!(text.lines().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(matches!(
            parse_csv("1,2\n3,x\n", Path::new("mem")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_csv("1,2\n3\n", Path::new("mem")).is_err());
        assert!(parse_csv("\n", Path::new("mem")).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0..10.0f64, r * c)
                .prop_map(move |data| Matrix::new(r, c, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn centering_is_a_contracting_idempotent_projection(m in arb_matrix()) {
            let c = center_rows(&m);
            let scale = 1e-12 * m.cols() as f64 * m.max_abs().max(1.0);
            for i in 0..c.rows() {
                prop_assert!(c.row(i).iter().sum::<f64>().abs() <= scale);
            }
            prop_assert!(c.frobenius_sq() <= m.frobenius_sq() * (1.0 + 1e-12) + 1e-24);
            prop_assert!(max_abs_diff(&center_rows(&c), &c) <= 1e-12 * m.max_abs().max(1.0));
            let g = center_global(&m);
            prop_assert!(g.sum().abs() <= 1e-12 * m.as_slice().len() as f64 * m.max_abs().max(1.0));
            prop_assert!(max_abs_diff(&center_global(&g), &g) <= 1e-12 * m.max_abs().max(1.0));
        }

        #[test]
        fn transpose_has_same_spectrum(m in arb_matrix()) {
            let a = singular_values(&m).unwrap();
            let b = singular_values(&m.transpose()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn norm_ordering(m in arb_matrix()) {
            let nuc = norm(&m, NormKind::Nuclear).unwrap();
            let fro = norm(&m, NormKind::Frobenius).unwrap();
            let spec = norm(&m, NormKind::Spectral).unwrap();
            let slack = 1e-10 * (1.0 + nuc);
            prop_assert!(nuc + slack >= fro);
            prop_assert!(fro + slack >= spec);
        }
    }
}
