//! Dense row-major matrices and the handful of kernels the rest of the crate
//! needs. All reductions run left-to-right so results are bit-stable.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    ///
    /// Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Matrix, b: f64) -> Result<Self> {
        self.check_same("lincomb", other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Appends `column` as a new last column.
    pub fn with_column(&self, column: &[f64]) -> Result<Self> {
        if column.len() != self.rows {
            return Err(Error::ShapeMismatch {
                op: "with_column",
                left: self.shape(),
                right: (column.len(), 1),
            });
        }
        let mut data = Vec::with_capacity(self.rows * (self.cols + 1));
        for (i, c) in column.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(*c);
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols + 1,
            data,
        })
    }

    /// Keeps the listed rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    fn check_same(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    // i-k-j order: each output entry still accumulates over k in ascending order.
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let b_row = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    Ok(out)
}

/// `result[j][k] = ‖row_j(a) − row_k(b)‖₂`.
pub fn pairwise_euclidean(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "pairwise_euclidean",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |j, k| {
        a.row(j)
            .iter()
            .zip(b.row(k))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }))
}

pub fn frobenius_dot(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.check_same("frobenius_dot", b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Anything that exposes its trainable parameters as an ordered list of flat
/// segments (a matrix is one segment; a network is weights and biases per layer).
pub trait ParamView {
    fn segments(&self) -> Vec<&[f64]>;
}

impl ParamView for Matrix {
    fn segments(&self) -> Vec<&[f64]> {
        vec![&self.data]
    }
}

/// Sum of squared entrywise differences over every parameter segment.
pub fn sq_norm_diff<P: ParamView + ?Sized>(a: &P, b: &P) -> Result<f64> {
    let (sa, sb) = (a.segments(), b.segments());
    if sa.len() != sb.len() {
        return Err(Error::LayerCount {
            op: "sq_norm_diff",
            left: sa.len(),
            right: sb.len(),
        });
    }
    let mut total = 0.0;
    for (x, y) in sa.iter().zip(&sb) {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "sq_norm_diff",
                left: (x.len(), 1),
                right: (y.len(), 1),
            });
        }
        for (p, q) in x.iter().zip(y.iter()) {
            total += (p - q) * (p - q);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(3, 4, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn permutation_swaps_columns() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let p = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(
            matmul(&a, &p).unwrap(),
            Matrix::from_rows(&[[2.0, 1.0], [4.0, 3.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a[(i, k)] * b[(k, j)];
                }
                assert_eq!(c[(i, j)], s);
            }
        }
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        assert!(tn
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        match err {
            Error::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn euclidean_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 3, &mut rng);
        let d = pairwise_euclidean(&a, &a).unwrap();
        for i in 0..4 {
            assert_eq!(d[(i, i)], 0.0);
        }
        let d = pairwise_euclidean(
            &Matrix::from_rows(&[[0.0, 0.0]]),
            &Matrix::from_rows(&[[3.0, 4.0]]),
        )
        .unwrap();
        assert_eq!(d[(0, 0)], 5.0);

        let b = random(6, 3, &mut rng);
        let d = pairwise_euclidean(&a, &b).unwrap();
        assert_eq!(d.shape(), (4, 6));
        for j in 0..4 {
            for k in 0..6 {
                let mut s = 0.0;
                for c in 0..3 {
                    let diff = a[(j, c)] - b[(k, c)];
                    s += diff * diff;
                }
                assert!((d[(j, k)] - s.sqrt()).abs() < 1e-12);
            }
        }
        assert!(pairwise_euclidean(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn frobenius_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random(3, 3, &mut rng);
        assert_eq!(frobenius_dot(&m, &Matrix::zeros(3, 3)).unwrap(), 0.0);
        let i2 = Matrix::identity(2);
        assert_eq!(frobenius_dot(&i2, &i2).unwrap(), 2.0);
        let n = random(3, 3, &mut rng);
        let flat: f64 = m
            .as_slice()
            .iter()
            .zip(n.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        assert_eq!(frobenius_dot(&m, &n).unwrap(), flat);
        assert!(frobenius_dot(&m, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn sq_norm_diff_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(4, 5, &mut rng);
        assert_eq!(sq_norm_diff(&m, &m).unwrap(), 0.0);
        let shifted = m.map(|v| v + 1.0);
        assert!((sq_norm_diff(&shifted, &m).unwrap() - 20.0).abs() < 1e-12);
        assert!(sq_norm_diff(&m, &Matrix::zeros(5, 4)).is_ok());
        assert!(sq_norm_diff(&m, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn new_validates() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, 2.0]).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-2.0f64..2.0, rows * cols)
                .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
        }

        proptest! {
            #[test]
            fn associativity(a in mat(3, 4), b in mat(4, 2), c in mat(2, 5)) {
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())));
                }
            }

            #[test]
            fn euclidean_symmetry(a in mat(3, 4), b in mat(5, 4)) {
                let ab = pairwise_euclidean(&a, &b).unwrap();
                let ba = pairwise_euclidean(&b, &a).unwrap();
                prop_assert_eq!(ab, ba.transpose());
            }

            #[test]
            fn sq_norm_diff_nonnegative(a in mat(3, 3), b in mat(3, 3)) {
                let d = sq_norm_diff(&a, &b).unwrap();
                prop_assert!(d >= 0.0);
                prop_assert_eq!(d == 0.0, a == b);
            }
        }
    }
}
