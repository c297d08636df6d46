//! Sparse complex operators in compressed-row form.
//!
//! Every operator built from ladder matrices on a truncated Fock space has a
//! handful of nonzeros per row, so the master-equation kernels work on this
//! representation and only convert to dense storage for spectral work.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Square complex matrix stored in CSR layout with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, indptr: vec![0; dim + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![C64::new(1.0, 0.0); dim])
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Builds an operator from `(row, col, value)` entries. Duplicates are
    /// summed and exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside {dim}x{dim}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                rows.push(r);
                last = Some((r, c));
            }
        }
        let mut kept_idx = Vec::with_capacity(indices.len());
        let mut kept_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != C64::new(0.0, 0.0) {
                indptr[r + 1] += 1;
                kept_idx.push(c);
                kept_val.push(v);
            }
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        Self { dim, indptr, indices: kept_idx, values: kept_val }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        let n = m.nrows();
        Self::from_triplets(n, (0..n).flat_map(|r| (0..n).map(move |c| (r, c, m[(r, c)]))))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// All nonzero entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v)))
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (r, c, v * s)))
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn pow(&self, p: u32) -> Self {
        (0..p).fold(Self::identity(self.dim), |acc, _| &acc * self)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (largest absolute column sum).
    pub fn norm_1(&self) -> f64 {
        let mut cols = vec![0.0; self.dim];
        for (_, c, v) in self.iter() {
            cols[c] += v.norm();
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Relative Frobenius distance to the adjoint, `‖A − A†‖ / ‖A‖`.
    pub fn hermiticity_error(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        (self - &self.adjoint()).frobenius_norm() / norm
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_diagonal(&self) -> bool {
        self.iter().all(|(r, c, _)| r == c)
    }

    pub fn diagonal_values(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `I_left ⊗ self ⊗ I_right`.
    pub fn kron_identity(&self, left: usize, right: usize) -> Self {
        let d = self.dim;
        let dim = left * d * right;
        let mut entries = Vec::with_capacity(self.nnz() * left * right);
        for l in 0..left {
            for (s, sp, v) in self.iter() {
                for r in 0..right {
                    entries.push(((l * d + s) * right + r, (l * d + sp) * right + r, v));
                }
            }
        }
        Self::from_triplets(dim, entries)
    }

    /// General Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let d = other.dim;
        let mut entries = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                entries.push((r1 * d + r2, c1 * d + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.dim * d, entries)
    }

    /// `Tr(self · ρ)`.
    pub fn expectation(&self, rho: &DMatrix<C64>) -> C64 {
        debug_assert_eq!(rho.nrows(), self.dim);
        self.iter().map(|(r, c, v)| v * rho[(c, r)]).sum()
    }

    /// Sparse matrix-vector product into `out`.
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_into(x, &mut out);
        out
    }

    /// `out += s · self · m` for a dense column-major `m`.
    pub fn left_mul_acc(&self, m: &DMatrix<C64>, s: C64, out: &mut DMatrix<C64>) {
        debug_assert_eq!(m.nrows(), self.dim);
        self.left_mul_slice(m.as_slice(), s, out.as_mut_slice());
    }

    /// `out += s · m · self` for a dense column-major `m`.
    pub fn right_mul_acc(&self, m: &DMatrix<C64>, s: C64, out: &mut DMatrix<C64>) {
        debug_assert_eq!(m.ncols(), self.dim);
        self.right_mul_slice(m.as_slice(), m.nrows(), s, out.as_mut_slice());
    }

    /// Slice form of [`Operator::left_mul_acc`]; `src` and `dst` are
    /// column-major with `self.dim()` rows.
    pub fn left_mul_slice(&self, src: &[C64], s: C64, dst: &mut [C64]) {
        let n = self.dim;
        for (col, ocol) in src.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
            for (r, o) in ocol.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[k] * col[self.indices[k]];
                }
                *o += s * acc;
            }
        }
    }

    /// Slice form of [`Operator::right_mul_acc`]; `src` is column-major with
    /// `rows` rows and `self.dim()` columns.
    pub fn right_mul_slice(&self, src: &[C64], rows: usize, s: C64, dst: &mut [C64]) {
        // (m · S)[:, c] = Σ_k m[:, k] S[k, c]
        for k in 0..self.dim {
            let col = &src[k * rows..(k + 1) * rows];
            for idx in self.indptr[k]..self.indptr[k + 1] {
                let c = self.indices[idx];
                let w = s * self.values[idx];
                let ocol = &mut dst[c * rows..(c + 1) * rows];
                for (o, x) in ocol.iter_mut().zip(col) {
                    *o += w * x;
                }
            }
        }
    }

    pub fn left_mul(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.dim, m.ncols());
        self.left_mul_acc(m, C64::new(1.0, 0.0), &mut out);
        out
    }

    pub fn right_mul(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(m.nrows(), self.dim);
        self.right_mul_acc(m, C64::new(1.0, 0.0), &mut out);
        out
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, actual: self.dim })
        }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        Self::from_triplets(
            self.dim,
            self.iter().chain(other.iter().map(|(r, c, v)| (r, c, v * sign))),
        )
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.combine(rhs, -1.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_re(-1.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimensions differ");
        let n = self.dim;
        let mut acc = vec![C64::new(0.0, 0.0); n];
        let mut seen = vec![usize::MAX; n];
        let mut cols = Vec::new();
        let mut entries = Vec::new();
        for r in 0..n {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    if seen[c] != r {
                        seen[c] = r;
                        acc[c] = C64::new(0.0, 0.0);
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            entries.extend(cols.iter().map(|&c| (r, c, acc[c])));
        }
        Operator::from_triplets(n, entries)
    }
}
