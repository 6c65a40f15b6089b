//! Dense row-major matrices and a deterministic one-sided Jacobi SVD.
//!
//! Shape mismatches in the arithmetic kernels are programming errors and
//! panic with both shapes in the message. Fallible numerics (the SVD,
//! truncation ranges) return [`Result`].

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation is skipped once two columns are orthogonal to working precision.
const ROTATION_TOL: f64 = f64::EPSILON;
/// A sweep whose largest pairwise column coherence is below this ends the iteration.
const CONVERGENCE_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, checking length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics on ragged input; intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Matrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Entries drawn i.i.d. from N(0, 1).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Matrix { rows, cols, data }
    }

    /// A single row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix { rows: 1, cols: values.len(), data: values.to_vec() }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows, "column length {} vs {} rows", values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        assert!(k <= self.cols, "cannot take {k} columns of a {}x{} matrix", self.rows, self.cols);
        Matrix::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    /// Columns `start..end`.
    pub fn column_block(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols, "column block {start}..{end} out of {}", self.cols);
        Matrix::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Writes `block` into columns `start..start + block.cols()`.
    pub fn set_column_block(&mut self, start: usize, block: &Matrix) {
        assert_eq!(block.rows, self.rows, "column block row mismatch");
        assert!(start + block.cols <= self.cols, "column block overflows");
        for i in 0..self.rows {
            for j in 0..block.cols {
                self[(i, start + j)] = block[(i, j)];
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`. Panics when the inner dimensions disagree.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert!(
            self.cols == other.rows,
            "matmul shape mismatch: {}x{} times {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (t, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[t * other.cols..(t + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Fallible variant of [`Matrix::matmul`].
    pub fn try_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul shape mismatch: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.matmul(other))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert!(
            self.cols == other.cols,
            "matmul_t shape mismatch: {}x{} times ({}x{})ᵀ",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert!(
            self.rows == other.rows,
            "t_matmul shape mismatch: ({}x{})ᵀ times {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        for t in 0..self.rows {
            let a_row = self.row(t);
            let b_row = other.row(t);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: {}x{} times vector of {}", self.rows, self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) {
        assert!(
            self.shape() == other.shape(),
            "{op} shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.check_same_shape(other, "add");
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.check_same_shape(other, "sub");
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.check_same_shape(other, "hadamard");
        self.zip_map(other, |a, b| a * b)
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        self.check_same_shape(other, "add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        self.check_same_shape(other, "axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self · diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.cols, "scale_columns: {} factors for {} columns", d.len(), self.cols);
        Matrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * d[j])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Mean over rows, i.e. the column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x * x;
            }
        }
        out.iter().map(|s| s.sqrt()).collect()
    }

    /// Largest |entry| of `selfᵀ·self − I`, the orthonormality defect of the columns.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.t_matmul(self);
        gram.sub(&Matrix::identity(self.cols)).max_abs()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Full singular value decomposition `W = U·diag(sigma)·Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    /// m×m, orthonormal columns.
    pub u: Matrix,
    /// min(m, n) values, descending, non-negative.
    pub sigma: Vec<f64>,
    /// n×n, orthonormal columns.
    pub v: Matrix,
}

/// Principal (top-k) part of an SVD. The discarded complement is the
/// minor subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    pub k: usize,
    pub u_p: Matrix,
    pub sigma_p: Vec<f64>,
    pub v_p: Matrix,
}

impl SvdFactors {
    pub fn rank_count(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    /// `U[:, :r]·diag(sigma)·V[:, :r]ᵀ` with `r = min(m, n)`.
    pub fn reconstruct(&self) -> Matrix {
        let r = self.sigma.len();
        spectral_product(&self.u.leading_columns(r), &self.sigma, &self.v.leading_columns(r))
    }

    pub fn truncate(&self, k: usize) -> Result<TruncatedSvd> {
        truncate_svd(self, k)
    }
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> Matrix {
        reconstruct(self)
    }

    /// (m, n) of the matrix this truncation approximates.
    pub fn orig_shape(&self) -> (usize, usize) {
        (self.u_p.rows(), self.v_p.rows())
    }
}

/// `U·diag(sigma)·Vᵀ` for compatible thin factors. Every spectral
/// reconstruction in the crate goes through this so equal inputs give
/// bit-equal outputs.
pub fn spectral_product(u: &Matrix, sigma: &[f64], v: &Matrix) -> Matrix {
    assert_eq!(u.cols(), sigma.len(), "U has {} columns but {} singular values", u.cols(), sigma.len());
    assert_eq!(v.cols(), sigma.len(), "V has {} columns but {} singular values", v.cols(), sigma.len());
    u.scale_columns(sigma).matmul_t(v)
}

/// Keeps the first `k` singular triplets.
pub fn truncate_svd(f: &SvdFactors, k: usize) -> Result<TruncatedSvd> {
    if k == 0 || k > f.sigma.len() {
        return Err(Error::Range(format!("k = {k} outside 1..={}", f.sigma.len())));
    }
    Ok(TruncatedSvd {
        k,
        u_p: f.u.leading_columns(k),
        sigma_p: f.sigma[..k].to_vec(),
        v_p: f.v.leading_columns(k),
    })
}

/// `W_p = U_p·diag(sigma_p)·V_pᵀ`.
pub fn reconstruct(t: &TruncatedSvd) -> Matrix {
    spectral_product(&t.u_p, &t.sigma_p, &t.v_p)
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Sign convention: every column of `U` has its largest-magnitude entry
/// positive (lowest row index on ties); the paired column of `V` is flipped
/// with it. Columns without a partner follow the same rule on their own.
pub fn svd(w: &Matrix) -> Result<SvdFactors> {
    if !w.is_finite() {
        return Err(Error::Numeric("svd input contains non-finite entries".into()));
    }
    let (m, n) = w.shape();
    let (mut u, sigma, mut v) = if m >= n {
        jacobi_tall(w)?
    } else {
        let (ut, s, vt) = jacobi_tall(&w.transpose())?;
        (vt, s, ut)
    };
    let r = sigma.len();
    for j in 0..u.cols() {
        if leading_entry_negative(&u, j) {
            negate_column(&mut u, j);
            if j < r {
                negate_column(&mut v, j);
            }
        }
    }
    for j in r..v.cols() {
        if leading_entry_negative(&v, j) {
            negate_column(&mut v, j);
        }
    }
    Ok(SvdFactors { u, sigma, v })
}

fn leading_entry_negative(m: &Matrix, j: usize) -> bool {
    let mut best = 0.0f64;
    let mut best_val = 0.0;
    for i in 0..m.rows() {
        let x = m[(i, j)];
        if x.abs() > best {
            best = x.abs();
            best_val = x;
        }
    }
    best_val < 0.0
}

fn negate_column(m: &mut Matrix, j: usize) {
    for i in 0..m.rows() {
        m[(i, j)] = -m[(i, j)];
    }
}

/// SVD of a matrix with `rows >= cols`. Returns (U m×m, sigma, V n×n) with
/// sigma sorted descending; signs are not yet normalized.
fn jacobi_tall(w: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = w.shape();
    debug_assert!(m >= n);
    // column-major working copies
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| w.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    let mut last_off = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_coherence = 0.0f64;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&a[i], &a[j]);
                let scale = (alpha * beta).sqrt();
                max_coherence = max_coherence.max(gamma.abs() / scale);
                if gamma.abs() <= ROTATION_TOL * scale {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        last_off = max_coherence;
        if max_coherence < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS, off_norm: last_off });
    }

    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep column order
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let sigma_max = norms[order[0]];
    let floor = sigma_max * f64::EPSILON;

    let mut sigma = Vec::with_capacity(n);
    let mut u = Matrix::zeros(m, m);
    let mut v_out = Matrix::zeros(n, n);
    let mut filled = vec![false; m];
    for (dst, &src) in order.iter().enumerate() {
        v_out.set_column(dst, &v[src]);
        let s = norms[src];
        if s > floor && s > 0.0 {
            sigma.push(s);
            let col: Vec<f64> = a[src].iter().map(|x| x / s).collect();
            u.set_column(dst, &col);
            filled[dst] = true;
        } else {
            sigma.push(0.0);
        }
    }
    complete_basis(&mut u, &mut filled);
    Ok((u, sigma, v_out))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (x, y) = (&mut lo[i], &mut hi[0]);
    for (p, q) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*p, *q);
        *p = c * a - s * b;
        *q = s * a + c * b;
    }
}

/// Fills unset columns of `u` with an orthonormal completion built from
/// standard basis vectors, picking at each step the basis vector with the
/// largest residual against the columns already present.
fn complete_basis(u: &mut Matrix, filled: &mut [bool]) {
    let m = u.rows();
    for slot in 0..m {
        if filled[slot] {
            continue;
        }
        let present: Vec<usize> = (0..m).filter(|&c| filled[c]).collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..m {
            let covered: f64 = present.iter().map(|&c| u[(i, c)] * u[(i, c)]).sum();
            let residual = 1.0 - covered;
            if residual > best.1 {
                best = (i, residual);
            }
        }
        let mut x = vec![0.0; m];
        x[best.0] = 1.0;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for &c in &present {
                let col = u.column(c);
                let p = dot(&col, &x);
                for (xi, ci) in x.iter_mut().zip(&col) {
                    *xi -= p * ci;
                }
            }
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|xi| *xi /= nx);
        u.set_column(slot, &x);
        filled[slot] = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for t in 0..a.cols() {
                    s += a[(i, t)] * b[(t, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    #[test]
    fn identity_times_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::random_normal(3, 4, &mut rng);
        assert_eq!(Matrix::identity(3).matmul(&m), m);
    }

    #[test]
    fn permutation_swaps_columns() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(a.matmul(&p), Matrix::from_rows(&[&[2.0, 1.0], &[4.0, 3.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix::random_normal(5, 7, &mut rng);
        let b = Matrix::random_normal(7, 3, &mut rng);
        assert_eq!(a.matmul(&b), naive_matmul(&a, &b));
        assert_eq!(a.matmul_t(&b.transpose()), naive_matmul(&a, &b));
        assert_eq!(a.transpose().t_matmul(&b), naive_matmul(&a, &b));
    }

    #[test]
    #[should_panic(expected = "2x3 times 2x3")]
    fn matmul_shape_mismatch_names_shapes() {
        Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3));
    }

    #[test]
    fn try_matmul_reports_shapes() {
        let err = Matrix::zeros(2, 3).try_matmul(&Matrix::zeros(4, 1)).unwrap_err();
        assert!(err.to_string().contains("2x3 times 4x1"));
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn svd_of_identity() {
        let f = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(f.sigma, vec![1.0; 4]);
    }

    #[test]
    fn svd_of_signed_diagonal() {
        let f = svd(&Matrix::from_rows(&[&[3.0, 0.0], &[0.0, -2.0]])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0]);
        assert!(f.reconstruct().sub(&Matrix::from_rows(&[&[3.0, 0.0], &[0.0, -2.0]])).max_abs() < 1e-15);
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Matrix::random_normal(8, 5, &mut rng);
        let f = svd(&w).unwrap();
        let rel = w.sub(&f.reconstruct()).frobenius_norm() / w.frobenius_norm();
        assert!(rel < 1e-10, "{rel}");
        // independent reconstruction through the naive product
        let us = naive_matmul(&f.u.leading_columns(5), &Matrix::diag(&f.sigma));
        let naive = naive_matmul(&us, &f.v.transpose());
        assert!(w.sub(&naive).frobenius_norm() / w.frobenius_norm() < 1e-10);
        assert!(f.u.orthonormality_error() < 1e-10);
        assert!(f.v.orthonormality_error() < 1e-10);
    }

    #[test]
    fn svd_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Matrix::random_normal(3, 7, &mut rng);
        let f = svd(&w).unwrap();
        assert_eq!(f.u.shape(), (3, 3));
        assert_eq!(f.v.shape(), (7, 7));
        assert!(w.sub(&f.reconstruct()).frobenius_norm() < 1e-12 * w.frobenius_norm().max(1.0));
        assert!(f.v.orthonormality_error() < 1e-12);
    }

    #[test]
    fn svd_sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Matrix::random_normal(6, 4, &mut rng);
        let f = svd(&w).unwrap();
        for j in 0..6 {
            assert!(!leading_entry_negative(&f.u, j));
        }
        let g = svd(&w.scale(-1.0)).unwrap();
        assert_eq!(f.sigma, g.sigma);
    }

    #[test]
    fn svd_rank_deficient_has_orthonormal_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Matrix::random_normal(9, 2, &mut rng);
        let b = Matrix::random_normal(2, 6, &mut rng);
        let w = a.matmul(&b);
        let f = svd(&w).unwrap();
        assert_eq!(f.rank_count(1e-9), 2);
        assert!(f.u.orthonormality_error() < 1e-10);
        assert!(f.v.orthonormality_error() < 1e-10);
        assert!(w.sub(&f.reconstruct()).frobenius_norm() < 1e-10 * w.frobenius_norm());
    }

    #[test]
    fn svd_of_zero_matrix() {
        let f = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(f.sigma, vec![0.0, 0.0]);
        assert!(f.u.orthonormality_error() < 1e-15);
    }

    #[test]
    fn svd_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = Matrix::random_normal(10, 10, &mut rng);
        assert_eq!(svd(&w).unwrap(), svd(&w).unwrap());
    }

    #[test]
    fn truncation_prefix_and_range() {
        let f = SvdFactors { u: Matrix::identity(3), sigma: vec![3.0, 2.0, 1.0], v: Matrix::identity(3) };
        assert_eq!(truncate_svd(&f, 2).unwrap().sigma_p, vec![3.0, 2.0]);
        assert!(matches!(truncate_svd(&f, 0), Err(Error::Range(_))));
        assert!(matches!(truncate_svd(&f, 4), Err(Error::Range(_))));
    }

    #[test]
    fn full_truncation_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Matrix::random_normal(6, 4, &mut rng);
        let f = svd(&w).unwrap();
        let t = truncate_svd(&f, 4).unwrap();
        assert!(reconstruct(&t).sub(&f.reconstruct()).max_abs() < 1e-12);
    }

    #[test]
    fn truncation_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let w = Matrix::random_normal(16, 12, &mut rng);
        let f = svd(&w).unwrap();
        let t = truncate_svd(&f, 4).unwrap();
        let explicit = w.sub(&reconstruct(&t)).frobenius_norm().powi(2);
        let tail: f64 = f.sigma[4..].iter().map(|s| s * s).sum();
        assert!((explicit - tail).abs() / tail < 1e-8);
    }

    #[test]
    fn rank_one_reconstruction() {
        let e1 = Matrix::from_rows(&[&[1.0], &[0.0], &[0.0]]);
        let t = TruncatedSvd { k: 1, u_p: e1.clone(), sigma_p: vec![2.0], v_p: e1 };
        let mut expected = Matrix::zeros(3, 3);
        expected[(0, 0)] = 2.0;
        assert_eq!(reconstruct(&t), expected);
    }

    #[test]
    fn reconstruction_rank_bounded_by_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = Matrix::random_normal(10, 8, &mut rng);
        let t = svd(&w).unwrap().truncate(3).unwrap();
        let again = svd(&reconstruct(&t)).unwrap();
        assert!(again.rank_count(1e-9) <= 3);
    }

    #[test]
    fn json_shape_and_round_trip() {
        let m = Matrix::from_rows(&[&[0.1, 1.0 / 3.0], &[-2.5e-300, 1e300]]);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with(r#"{"rows":2,"cols":2,"data":["#));
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}
