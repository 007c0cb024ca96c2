//! Dense kernels for truncated Hilbert-space operators.
//!
//! Matrices are row-major. Bilinear maps `H -> L(V, H)` are stored as
//! 3-tensors `T[i][j][k]` with `((T x) v)_i = sum_{j,k} T[i][j][k] x_j v_k`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim_err, Error, Result};
use crate::model::RulePerturbation;
use crate::scalar::{dot, norm2, Scalar};

/// Default iteration cap for power iterations.
pub const DEFAULT_POWER_ITERS: usize = 100_000;

/// Default number of grid points for [`semigroup_bound`].
pub const DEFAULT_SEMIGROUP_GRID: usize = 1001;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(d: &[S]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    /// Scalar multiple of the identity.
    pub fn scaled_identity(n: usize, c: S) -> Self {
        Self::diag(&vec![c; n])
    }

    /// Builds from a row-major buffer.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!("buffer of length {} cannot be {rows}x{cols}", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("ragged rows");
        }
        Ok(Self { rows: r, cols: c, data: rows.iter().flatten().copied().collect() })
    }

    /// Builds entrywise from a closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Single-column matrix.
    pub fn column(v: &[S]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    /// Nested-row copy.
    pub fn to_rows(&self) -> Vec<Vec<S>> {
        self.data.chunks(self.cols.max(1)).map(<[S]>::to_vec).take(self.rows).collect()
    }

    /// Column `j` as a vector.
    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Matrix product; panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![S::zero(); n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == S::zero() {
                    continue;
                }
                let brow = &other.data[k * p..(k + 1) * p];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self { rows: n, cols: p, data: out }
    }

    /// `self^T * other` without forming the transpose.
    pub fn tr_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tr_matmul dimension");
        let (n, m, p) = (self.cols, self.rows, other.cols);
        let mut out = vec![S::zero(); n * p];
        for k in 0..m {
            let arow = &self.data[k * n..(k + 1) * n];
            let brow = &other.data[k * p..(k + 1) * p];
            for (i, &a) in arow.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let orow = &mut out[i * p..(i + 1) * p];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self { rows: n, cols: p, data: out }
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.cols, x.len(), "matvec dimension");
        self.data.chunks(self.cols.max(1)).take(self.rows).map(|row| dot(row, x)).collect()
    }

    /// `self^T x`.
    pub fn tr_matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.rows, x.len(), "tr_matvec dimension");
        let mut out = vec![S::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn scale(&self, c: S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| c * x).collect() }
    }

    /// `self + c * other` in place.
    pub fn axpy_inplace(&mut self, c: S, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: S, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy_inplace(c, other);
        out
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        let half = S::of(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| half * (self.get(i, j) + self.get(j, i)))
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).fold(S::zero(), |acc, i| acc + self.get(i, i))
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest deviation from symmetry.
    pub fn asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> S {
        (0..self.cols)
            .map(|j| (0..self.rows).fold(S::zero(), |acc, i| acc + self.get(i, j).abs()))
            .fold(S::zero(), S::max)
    }

    /// Frobenius inner product.
    pub fn frobenius_dot(&self, other: &Self) -> S {
        dot(&self.data, &other.data)
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if !self.is_square() || self.rows != rhs.rows {
            return dim_err(format!("solve: {:?} against {:?}", self.shape(), rhs.shape()));
        }
        let n = self.rows;
        let p = rhs.cols;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        let scale = self.max_abs();
        let tiny = scale * S::eps() * S::of_usize(n.max(1));
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular { step: None });
            }
            if piv != col {
                for k in 0..n {
                    a.swap(col * n + k, piv * n + k);
                }
                for k in 0..p {
                    b.swap(col * p + k, piv * p + k);
                }
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                if f == S::zero() {
                    continue;
                }
                for k in col..n {
                    let v = a[col * n + k];
                    a[r * n + k] -= f * v;
                }
                for k in 0..p {
                    let v = b[col * p + k];
                    b[r * p + k] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            let d = a[col * n + col];
            for k in 0..p {
                let mut s = b[col * p + k];
                for j in col + 1..n {
                    s -= a[col * n + j] * b[j * p + k];
                }
                b[col * p + k] = s / d;
            }
        }
        Ok(Self { rows: n, cols: p, data: b })
    }

    /// Solves `self * x = rhs` for a vector right-hand side.
    pub fn solve_vec(&self, rhs: &[S]) -> Result<Vec<S>> {
        Ok(self.solve(&Self::column(rhs))?.data)
    }

    /// Matrix inverse.
    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in ascending order and the matching orthonormal
    /// eigenvectors as columns. Only the symmetric part of `self` is used.
    pub fn sym_eig(&self) -> (Vec<S>, Self) {
        assert!(self.is_square(), "sym_eig needs a square matrix");
        let n = self.rows;
        let mut a = self.symmetrize();
        let mut v = Self::identity(n);
        let total = a.frobenius_dot(&a);
        for _sweep in 0..100 {
            let mut off = S::zero();
            for p in 0..n {
                for q in 0..n {
                    if p != q {
                        off += a.get(p, q) * a.get(p, q);
                    }
                }
            }
            if off <= total * S::eps() * S::eps() || off == S::zero() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq == S::zero() {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (S::of(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let t = if theta == S::zero() { S::one() } else { t };
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap_or(std::cmp::Ordering::Equal));
        let vals = idx.iter().map(|&i| a.get(i, i)).collect();
        let vecs = Self::from_fn(n, n, |r, c| v.get(r, idx[c]));
        (vals, vecs)
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_sym_eig(&self) -> S {
        self.sym_eig().0.first().copied().unwrap_or_else(S::zero)
    }
}

impl<S: Scalar> std::ops::Add for &Matrix<S> {
    type Output = Matrix<S>;
    fn add(self, rhs: Self) -> Matrix<S> {
        self.axpy(S::one(), rhs)
    }
}

impl<S: Scalar> std::ops::Sub for &Matrix<S> {
    type Output = Matrix<S>;
    fn sub(self, rhs: Self) -> Matrix<S> {
        self.axpy(-S::one(), rhs)
    }
}

impl<S: Scalar> std::ops::Mul for &Matrix<S> {
    type Output = Matrix<S>;
    fn mul(self, rhs: Self) -> Matrix<S> {
        self.matmul(rhs)
    }
}

impl<S: Scalar> Serialize for Matrix<S> {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Matrix<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<S>> = Vec::deserialize(d)?;
        let m = Matrix::from_rows(&rows).map_err(serde::de::Error::custom)?;
        if !m.is_finite() {
            return Err(serde::de::Error::custom("matrix entries must be finite"));
        }
        Ok(m)
    }
}

/// Bilinear map `H x V -> H` (or `U x V -> H`) stored as `T[i][j][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<S> {
    out_dim: usize,
    in1_dim: usize,
    in2_dim: usize,
    data: Vec<S>,
}

/// Name used by the configuration schema.
pub type Bilinear3Tensor<S> = Tensor3<S>;

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(out_dim: usize, in1_dim: usize, in2_dim: usize) -> Self {
        Self { out_dim, in1_dim, in2_dim, data: vec![S::zero(); out_dim * in1_dim * in2_dim] }
    }

    /// Builds entrywise from a closure over `(i, j, k)`.
    pub fn from_fn(
        out_dim: usize,
        in1_dim: usize,
        in2_dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(out_dim * in1_dim * in2_dim);
        for i in 0..out_dim {
            for j in 0..in1_dim {
                for k in 0..in2_dim {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { out_dim, in1_dim, in2_dim, data }
    }

    /// Builds from `[i][j][k]` nesting.
    pub fn from_nested(t: &[Vec<Vec<S>>]) -> Result<Self> {
        let o = t.len();
        let a = t.first().map_or(0, Vec::len);
        let b = t.first().and_then(|x| x.first()).map_or(0, Vec::len);
        if t.iter().any(|m| m.len() != a || m.iter().any(|r| r.len() != b)) {
            return dim_err("ragged 3-tensor");
        }
        Ok(Self { out_dim: o, in1_dim: a, in2_dim: b, data: t.iter().flatten().flatten().copied().collect() })
    }

    /// Tensor whose only `k`-slice is `m`, for a one-dimensional `V`.
    pub fn from_single_slice(m: &Matrix<S>) -> Self {
        Self::from_fn(m.rows(), m.cols(), 1, |i, j, _| m.get(i, j))
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in1_dim(&self) -> usize {
        self.in1_dim
    }

    pub fn in2_dim(&self) -> usize {
        self.in2_dim
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.out_dim, self.in1_dim, self.in2_dim)
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.in1_dim + j) * self.in2_dim + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> S {
        self.data[self.idx(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: S) {
        let n = self.idx(i, j, k);
        self.data[n] = v;
    }

    /// `slice(., ., k)` as an `out_dim x in1_dim` matrix.
    pub fn slice(&self, k: usize) -> Matrix<S> {
        Matrix::from_fn(self.out_dim, self.in1_dim, |i, j| self.get(i, j, k))
    }

    /// The operator `x |-> (T x) v` as an `out_dim x in1_dim` matrix.
    pub fn contract_second(&self, v: &[S]) -> Matrix<S> {
        assert_eq!(v.len(), self.in2_dim, "contract_second dimension");
        Matrix::from_fn(self.out_dim, self.in1_dim, |i, j| {
            (0..self.in2_dim).fold(S::zero(), |acc, k| acc + self.get(i, j, k) * v[k])
        })
    }

    /// The operator `T x` in `L(V, H)` as an `out_dim x in2_dim` matrix.
    pub fn apply(&self, x: &[S]) -> Matrix<S> {
        assert_eq!(x.len(), self.in1_dim, "apply dimension");
        Matrix::from_fn(self.out_dim, self.in2_dim, |i, k| {
            (0..self.in1_dim).fold(S::zero(), |acc, j| acc + self.get(i, j, k) * x[j])
        })
    }

    /// Trilinear form `sum T[i][j][k] z_i x_j y_k`.
    pub fn trilinear(&self, z: &[S], x: &[S], y: &[S]) -> S {
        let mut acc = S::zero();
        for i in 0..self.out_dim {
            for j in 0..self.in1_dim {
                for k in 0..self.in2_dim {
                    acc += self.get(i, j, k) * z[i] * x[j] * y[k];
                }
            }
        }
        acc
    }

    pub fn scale(&self, c: S) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x = c * *x);
        out
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: S, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims(), "tensor axpy shape");
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Nested `[i][j][k]` copy.
    pub fn to_nested(&self) -> Vec<Vec<Vec<S>>> {
        (0..self.out_dim)
            .map(|i| (0..self.in1_dim).map(|j| (0..self.in2_dim).map(|k| self.get(i, j, k)).collect()).collect())
            .collect()
    }

    /// Hilbert-Schmidt norm of the coordinate array.
    pub fn hs_norm(&self) -> S {
        norm2(&self.data)
    }
}

impl<S: Scalar> Serialize for Tensor3<S> {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Tensor3<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let t: Vec<Vec<Vec<S>>> = Vec::deserialize(d)?;
        let t = Tensor3::from_nested(&t).map_err(serde::de::Error::custom)?;
        if !t.is_finite() {
            return Err(serde::de::Error::custom("tensor entries must be finite"));
        }
        Ok(t)
    }
}

/// Eigensystem of the trace-class noise covariance on `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct CovarianceSpec<S: Scalar> {
    pub dim_v: usize,
    pub eigenvalues: Vec<S>,
    pub eigenvectors: Matrix<S>,
}

impl<S: Scalar> CovarianceSpec<S> {
    /// Covariance diagonal in the standard basis.
    pub fn diagonal(eigenvalues: Vec<S>) -> Self {
        let n = eigenvalues.len();
        Self { dim_v: n, eigenvalues, eigenvectors: Matrix::identity(n) }
    }

    pub fn trace(&self) -> S {
        self.eigenvalues.iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Eigenvector `k` (column `k`).
    pub fn eigenvector(&self, k: usize) -> Vec<S> {
        self.eigenvectors.col(k)
    }

    /// Dense covariance matrix `V diag(q) V^T`.
    pub fn dense(&self) -> Matrix<S> {
        let v = &self.eigenvectors;
        let scaled = Matrix::from_fn(self.dim_v, self.dim_v, |i, k| v.get(i, k) * self.eigenvalues[k]);
        scaled.matmul(&v.transpose())
    }

    /// Checks dimensions, ordering, sign, positivity of the trace and orthonormality.
    pub fn validate(&self) -> Result<()> {
        if self.eigenvalues.len() != self.dim_v || self.eigenvectors.shape() != (self.dim_v, self.dim_v) {
            return dim_err("covariance eigensystem does not match dim_v");
        }
        if self.eigenvalues.iter().any(|&q| !(q >= S::zero()) || !q.is_finite()) {
            return Err(Error::Invalid("covariance eigenvalues must be finite and nonnegative".into()));
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invalid("covariance eigenvalues must be nonincreasing".into()));
        }
        if !(self.trace() > S::zero()) {
            return Err(Error::Invalid("covariance trace must be positive".into()));
        }
        let gram = self.eigenvectors.tr_matmul(&self.eigenvectors);
        let dev = (&gram - &Matrix::identity(self.dim_v)).max_abs();
        if dev > S::of(1e-12).max(S::of(16.0) * S::eps()) {
            return Err(Error::Invalid(format!("eigenvectors not orthonormal (deviation {dev})")));
        }
        Ok(())
    }
}

/// Address of one coordinate of a rule perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockCoord {
    A { i: usize, j: usize },
    B { i: usize, j: usize },
    F2 { i: usize, j: usize, k: usize },
}

/// Fixed enumeration of the coordinates of `(dA, dB, dF2)`.
///
/// Block order: `dA` row-major, then `dB` row-major, then `dF2` with
/// `(i, j, k)` lexicographic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisEnumeration {
    pub dims: (usize, usize, usize),
    pub order: Vec<BlockCoord>,
}

impl BasisEnumeration {
    /// Enumeration for `(d_H, d_U, d_V)`.
    pub fn new(d_h: usize, d_u: usize, d_v: usize) -> Self {
        let mut order = Vec::with_capacity(d_h * d_h + d_h * d_u + d_h * d_h * d_v);
        for i in 0..d_h {
            for j in 0..d_h {
                order.push(BlockCoord::A { i, j });
            }
        }
        for i in 0..d_h {
            for j in 0..d_u {
                order.push(BlockCoord::B { i, j });
            }
        }
        for i in 0..d_h {
            for j in 0..d_h {
                for k in 0..d_v {
                    order.push(BlockCoord::F2 { i, j, k });
                }
            }
        }
        Self { dims: (d_h, d_u, d_v), order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of a coordinate in the enumeration.
    pub fn index_of(&self, c: BlockCoord) -> usize {
        let (h, u, v) = self.dims;
        match c {
            BlockCoord::A { i, j } => i * h + j,
            BlockCoord::B { i, j } => h * h + i * u + j,
            BlockCoord::F2 { i, j, k } => h * h + h * u + (i * h + j) * v + k,
        }
    }

    /// Index range occupied by each block.
    pub fn block_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let (h, u, v) = self.dims;
        let a = h * h;
        let b = a + h * u;
        [0..a, a..b, b..b + h * h * v]
    }
}

fn check_perturbation_dims<S: Scalar>(p: &RulePerturbation<S>, e: &BasisEnumeration) -> Result<()> {
    let (h, u, v) = e.dims;
    if p.delta_a.shape() != (h, h) || p.delta_b.shape() != (h, u) || p.delta_f2.dims() != (h, h, v) {
        return dim_err(format!(
            "perturbation shapes {:?}/{:?}/{:?} do not match enumeration dims {:?}",
            p.delta_a.shape(),
            p.delta_b.shape(),
            p.delta_f2.dims(),
            e.dims
        ));
    }
    Ok(())
}

/// Coordinates of a perturbation in enumeration order.
pub fn flatten<S: Scalar>(p: &RulePerturbation<S>, e: &BasisEnumeration) -> Result<Vec<S>> {
    check_perturbation_dims(p, e)?;
    Ok(e.order
        .iter()
        .map(|c| match *c {
            BlockCoord::A { i, j } => p.delta_a.get(i, j),
            BlockCoord::B { i, j } => p.delta_b.get(i, j),
            BlockCoord::F2 { i, j, k } => p.delta_f2.get(i, j, k),
        })
        .collect())
}

/// Inverse of [`flatten`].
pub fn unflatten<S: Scalar>(x: &[S], e: &BasisEnumeration) -> Result<RulePerturbation<S>> {
    if x.len() != e.len() {
        return dim_err(format!("coordinate vector of length {} for enumeration of length {}", x.len(), e.len()));
    }
    let (h, u, v) = e.dims;
    let mut p = RulePerturbation::zeros(h, u, v);
    for (c, &val) in e.order.iter().zip(x) {
        match *c {
            BlockCoord::A { i, j } => p.delta_a.set(i, j, val),
            BlockCoord::B { i, j } => p.delta_b.set(i, j, val),
            BlockCoord::F2 { i, j, k } => p.delta_f2.set(i, j, k, val),
        }
    }
    Ok(p)
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm<S: Scalar>(m: &Matrix<S>) -> S {
    norm2(m.as_slice())
}

/// Outcome of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpNorm<S> {
    pub value: S,
    pub converged: bool,
    pub iterations: usize,
}

/// Spectral norm by power iteration on `m^T m`.
///
/// The Rayleigh quotients of the iterates increase monotonically towards the
/// top eigenvalue, so the reported value never exceeds the true norm. On
/// hitting `iters` the last iterate is returned with `converged = false`.
pub fn op_norm<S: Scalar>(m: &Matrix<S>, iters: usize) -> OpNorm<S> {
    op_norm_warm(m, iters, None).0
}

/// [`op_norm`] with an optional start vector; also returns the final right
/// singular vector estimate for reuse.
pub fn op_norm_warm<S: Scalar>(m: &Matrix<S>, iters: usize, start: Option<&[S]>) -> (OpNorm<S>, Vec<S>) {
    let n = m.cols();
    if n == 0 || m.rows() == 0 || m.max_abs() == S::zero() {
        return (OpNorm { value: S::zero(), converged: true, iterations: 0 }, vec![S::zero(); n]);
    }
    let g = m.tr_matmul(m);
    let mut v = match start {
        Some(s) if s.len() == n && norm2(s) > S::zero() => s.to_vec(),
        _ => {
            let best = (0..n)
                .max_by(|&a, &b| norm2(&g.col(a)).partial_cmp(&norm2(&g.col(b))).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0);
            g.col(best)
        }
    };
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let tol = S::of(1e-13).max(S::of(8.0) * S::eps());
    let mut lambda = dot(&v, &g.matvec(&v));
    let mut converged = false;
    let mut it = 0;
    while it < iters.max(1) {
        it += 1;
        let w = g.matvec(&v);
        let nw = norm2(&w);
        if nw == S::zero() {
            lambda = S::zero();
            converged = true;
            break;
        }
        let next: Vec<S> = w.iter().map(|&x| x / nw).collect();
        let next_lambda = dot(&next, &g.matvec(&next));
        let change = (next_lambda - lambda).abs();
        v = next;
        lambda = next_lambda.max(lambda);
        if change <= tol * lambda {
            converged = true;
            break;
        }
    }
    let value = lambda.max(S::zero()).sqrt().min(hs_norm(m));
    (OpNorm { value, converged, iterations: it }, v)
}

/// Spectral norm with the default iteration cap.
pub fn spectral_norm<S: Scalar>(m: &Matrix<S>) -> S {
    op_norm(m, DEFAULT_POWER_ITERS).value
}

/// Norm of a 3-tensor as a map `H -> L(V, H)`: `sup_{|x|=1} ||T x||_op`.
///
/// Equals the maximum of the trilinear form over unit vectors. Computed by
/// alternating maximisation started from every coordinate slice and from the
/// top singular direction of the `V`-unfolding; the result is a lower
/// estimate that dominates every slice norm.
pub fn tensor_op_norm<S: Scalar>(t: &Tensor3<S>) -> S {
    let (o, a, b) = t.dims();
    if o == 0 || a == 0 || b == 0 || t.hs_norm() == S::zero() {
        return S::zero();
    }
    let mut starts: Vec<Vec<S>> = (0..b)
        .map(|k| {
            let mut e = vec![S::zero(); b];
            e[k] = S::one();
            e
        })
        .collect();
    let unfold = Matrix::from_fn(o * a, b, |r, k| t.get(r / a, r % a, k));
    let (_, y_top) = op_norm_warm(&unfold, 2000, None);
    if norm2(&y_top) > S::zero() {
        starts.push(y_top);
    }
    let mut best = S::zero();
    for y0 in starts {
        best = best.max(hopm(t, y0));
    }
    best
}

fn normalize<S: Scalar>(v: &mut [S]) -> S {
    let n = norm2(v);
    if n > S::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn hopm<S: Scalar>(t: &Tensor3<S>, mut y: Vec<S>) -> S {
    let (o, a, b) = t.dims();
    normalize(&mut y);
    let slice = t.contract_second(&y);
    let (_, mut x) = op_norm_warm(&slice, 2000, None);
    if normalize(&mut x) == S::zero() {
        return S::zero();
    }
    let mut z = slice.matvec(&x);
    if normalize(&mut z) == S::zero() {
        return S::zero();
    }
    let mut val = t.trilinear(&z, &x, &y).abs();
    for _ in 0..1000 {
        let mut nx = vec![S::zero(); a];
        for i in 0..o {
            for j in 0..a {
                for k in 0..b {
                    nx[j] += t.get(i, j, k) * z[i] * y[k];
                }
            }
        }
        normalize(&mut nx);
        let mut ny = vec![S::zero(); b];
        for i in 0..o {
            for j in 0..a {
                for k in 0..b {
                    ny[k] += t.get(i, j, k) * z[i] * nx[j];
                }
            }
        }
        normalize(&mut ny);
        let mut nz = t.apply(&nx).matvec(&ny);
        normalize(&mut nz);
        let nval = t.trilinear(&nz, &nx, &ny).abs();
        y = ny;
        z = nz;
        let done = (nval - val).abs() <= S::of(1e-14).max(S::eps()) * nval;
        val = val.max(nval);
        if done {
            break;
        }
    }
    val
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371_920_351_148_152;

/// `exp(t a)` by scaling and squaring with the degree-13 Pade approximant.
pub fn mat_exp<S: Scalar>(a: &Matrix<S>, t: S) -> Result<Matrix<S>> {
    if !a.is_square() {
        return dim_err(format!("mat_exp needs a square matrix, got {:?}", a.shape()));
    }
    let n = a.rows();
    let ta = a.scale(t);
    let nrm = ta.norm_1();
    if !nrm.is_finite() {
        return Err(Error::Domain("mat_exp argument is not finite".into()));
    }
    let ratio = nrm.to_f64_lossy() / THETA13;
    let s = if ratio > 1.0 { ratio.log2().ceil() as i32 } else { 0 };
    if s > 1000 {
        return Err(Error::Domain(format!("norm {nrm} too large for scaling and squaring")));
    }
    let x = ta.scale(S::of(2f64.powi(-s)));
    let id = Matrix::identity(n);
    let b = |k: usize| S::of(PADE13[k]);
    let x2 = x.matmul(&x);
    let x4 = x2.matmul(&x2);
    let x6 = x4.matmul(&x2);
    let inner_u = x6.scale(b(13)).axpy(b(11), &x4).axpy(b(9), &x2);
    let u_poly = x6.matmul(&inner_u).axpy(b(7), &x6).axpy(b(5), &x4).axpy(b(3), &x2).axpy(b(1), &id);
    let u = x.matmul(&u_poly);
    let inner_v = x6.scale(b(12)).axpy(b(10), &x4).axpy(b(8), &x2);
    let v = x6.matmul(&inner_v).axpy(b(6), &x6).axpy(b(4), &x4).axpy(b(2), &x2).axpy(b(0), &id);
    let mut r = (&v - &u).solve(&(&v + &u))?;
    for _ in 0..s {
        r = r.matmul(&r);
    }
    if !r.is_finite() {
        return Err(Error::Domain("mat_exp overflowed".into()));
    }
    Ok(r)
}

/// Maximum of `||exp(t a)||` over a uniform grid on `[0, horizon]`.
///
/// This is a lower estimate of the true supremum over the interval.
pub fn semigroup_bound<S: Scalar>(a: &Matrix<S>, horizon: S, grid_points: usize) -> Result<S> {
    if grid_points < 2 {
        return Err(Error::Domain("semigroup_bound needs at least two grid points".into()));
    }
    let mut best = S::zero();
    for i in 0..grid_points {
        let t = horizon * S::of_usize(i) / S::of_usize(grid_points - 1);
        best = best.max(spectral_norm(&mat_exp(a, t)?));
    }
    Ok(best)
}
