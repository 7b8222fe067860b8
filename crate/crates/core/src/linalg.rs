//! Dense Householder factorizations (QR, LQ, QL) and triangular solves.
//!
//! Every factorization normalizes signs so that the diagonal of the
//! triangular factor is nonnegative. Because all loops run in a fixed order
//! with no threading, identical inputs give bit-identical outputs.

use nalgebra::{DMatrix, DVector, RealField};

use crate::error::{Error, Result};

/// Scalar type used throughout the crate (`f32` or `f64`).
pub trait Real: RealField + Copy {}

impl<T: RealField + Copy> Real for T {}

pub type Matrix<T> = DMatrix<T>;
pub type Vector<T> = DVector<T>;

/// Which side of the diagonal may hold nonzeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// A (possibly rectangular) matrix whose entries on the wrong side of the
/// diagonal are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactor<T: Real> {
    matrix: Matrix<T>,
    shape: Triangle,
}

impl<T: Real> TriangularFactor<T> {
    /// Wraps `matrix`, rejecting it if any entry on the wrong side of the
    /// diagonal is nonzero.
    pub fn new(matrix: Matrix<T>, shape: Triangle) -> Result<Self> {
        if !is_triangular(&matrix, shape) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix is not {:?}-triangular",
                matrix.nrows(),
                matrix.ncols(),
                shape
            )));
        }
        Ok(Self { matrix, shape })
    }

    /// Wraps `matrix` after writing exact zeros on the wrong side of the
    /// diagonal.
    pub fn from_masked(mut matrix: Matrix<T>, shape: Triangle) -> Self {
        mask_triangle(&mut matrix, shape);
        Self { matrix, shape }
    }

    pub fn lower(matrix: Matrix<T>) -> Result<Self> {
        Self::new(matrix, Triangle::Lower)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn shape(&self) -> Triangle {
        self.shape
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Index of the first diagonal entry with magnitude `<= floor`, if any.
    pub fn first_degenerate_diagonal(&self, floor: T) -> Option<usize> {
        let k = self.matrix.nrows().min(self.matrix.ncols());
        // NaN diagonals count as degenerate
        (0..k).find(|&i| self.matrix[(i, i)].abs().partial_cmp(&floor) != Some(std::cmp::Ordering::Greater))
    }
}

fn is_triangular<T: Real>(m: &Matrix<T>, shape: Triangle) -> bool {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        for i in 0..rows {
            let wrong_side = match shape {
                Triangle::Lower => j > i,
                Triangle::Upper => i > j,
            };
            if wrong_side && m[(i, j)] != T::zero() {
                return false;
            }
        }
    }
    true
}

fn mask_triangle<T: Real>(m: &mut Matrix<T>, shape: Triangle) {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        for i in 0..rows {
            let wrong_side = match shape {
                Triangle::Lower => j > i,
                Triangle::Upper => i > j,
            };
            if wrong_side {
                m[(i, j)] = T::zero();
            }
        }
    }
}

/// Euclidean norm with scaling against overflow and underflow.
fn scaled_norm<T: Real>(x: &[T]) -> T {
    let mut amax = T::zero();
    for &v in x {
        let a = v.abs();
        if a > amax {
            amax = a;
        }
    }
    if amax == T::zero() || !amax.is_finite() {
        return amax;
    }
    let inv = T::one() / amax;
    let mut s = T::zero();
    for &v in x {
        let y = v * inv;
        s += y * y;
    }
    amax * s.sqrt()
}

/// Householder QR in place. On return the upper triangle of `a` holds `R`
/// (before sign normalization) and the strict lower part holds the
/// reflector tails, with an implicit leading one.
fn householder_in_place<T: Real>(a: &mut Matrix<T>) -> Vec<T> {
    let (rows, cols) = a.shape();
    let p = rows.min(cols);
    let mut taus = Vec::with_capacity(p);
    let data = a.as_mut_slice();
    for k in 0..p {
        let (head, tail) = data.split_at_mut((k + 1) * rows);
        let col = &mut head[k * rows..];
        let alpha = col[k];
        let xnorm = scaled_norm(&col[k + 1..]);
        if xnorm == T::zero() {
            taus.push(T::zero());
            continue;
        }
        let mut beta = alpha.hypot(xnorm);
        if alpha > T::zero() {
            beta = -beta;
        }
        let tau = (beta - alpha) / beta;
        let scale = T::one() / (alpha - beta);
        for x in &mut col[k + 1..] {
            *x *= scale;
        }
        col[k] = beta;
        let v = &col[k + 1..];
        for c in tail.chunks_exact_mut(rows) {
            apply_reflector(v, tau, &mut c[k..]);
        }
        taus.push(tau);
    }
    taus
}

/// Applies `I - tau [1; v][1; v]^T` to the column segment `x`.
#[inline]
fn apply_reflector<T: Real>(v: &[T], tau: T, x: &mut [T]) {
    let (top, rest) = x.split_first_mut().expect("nonempty column segment");
    let mut w = *top;
    for (vi, xi) in v.iter().zip(rest.iter()) {
        w += *vi * *xi;
    }
    if w == T::zero() {
        return;
    }
    w *= tau;
    *top -= w;
    for (vi, xi) in v.iter().zip(rest.iter_mut()) {
        *xi -= w * *vi;
    }
}

/// Row indices `k` whose diagonal entry of `R` is negative.
fn negative_diagonal<T: Real>(a: &Matrix<T>) -> Vec<bool> {
    let p = a.nrows().min(a.ncols());
    (0..p).map(|k| a[(k, k)] < T::zero()).collect()
}

/// Copies the `out_rows x cols` upper-triangular part of a factored matrix,
/// writing exact zeros below the diagonal and applying the sign flips.
fn extract_r<T: Real>(a: &Matrix<T>, out_rows: usize, flips: &[bool]) -> Matrix<T> {
    let cols = a.ncols();
    let mut r = Matrix::zeros(out_rows, cols);
    for j in 0..cols {
        for i in 0..(j + 1).min(out_rows) {
            let v = a[(i, j)];
            r[(i, j)] = if flips[i] { -v } else { v };
        }
    }
    r
}

/// Accumulates the first `q_cols` columns of the orthogonal factor.
fn form_q<T: Real>(a: &Matrix<T>, taus: &[T], q_cols: usize, flips: &[bool]) -> Matrix<T> {
    let rows = a.nrows();
    let mut q = Matrix::identity(rows, q_cols);
    let src = a.as_slice();
    let qdata = q.as_mut_slice();
    for k in (0..taus.len()).rev() {
        let tau = taus[k];
        if tau == T::zero() {
            continue;
        }
        let v = &src[k * rows + k + 1..(k + 1) * rows];
        for c in qdata.chunks_exact_mut(rows).skip(k) {
            apply_reflector(v, tau, &mut c[k..]);
        }
    }
    for (k, &flip) in flips.iter().enumerate() {
        if flip && k < q_cols {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

fn require(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}

/// Complete QR decomposition `M = Q R` of an `n x m` matrix with `n >= m`.
///
/// `Q` is `n x n` orthogonal and `R` is `n x m` upper triangular with a
/// nonnegative diagonal. Rank-deficient inputs are allowed.
pub fn qr_complete<T: Real>(m: &Matrix<T>) -> Result<(Matrix<T>, TriangularFactor<T>)> {
    let (n, k) = m.shape();
    require(n >= k, || format!("qr_complete needs rows >= cols, got {n}x{k}"))?;
    let mut a = m.clone();
    let taus = householder_in_place(&mut a);
    let flips = negative_diagonal(&a);
    let r = extract_r(&a, n, &flips);
    let q = form_q(&a, &taus, n, &flips);
    Ok((q, TriangularFactor { matrix: r, shape: Triangle::Upper }))
}

/// Thin QR decomposition: `Q` is `n x m` with orthonormal columns and `R`
/// is `m x m` upper triangular.
pub fn qr_thin<T: Real>(m: &Matrix<T>) -> Result<(Matrix<T>, TriangularFactor<T>)> {
    let (n, k) = m.shape();
    require(n >= k, || format!("qr_thin needs rows >= cols, got {n}x{k}"))?;
    let mut a = m.clone();
    let taus = householder_in_place(&mut a);
    let flips = negative_diagonal(&a);
    let r = extract_r(&a, k, &flips);
    let q = form_q(&a, &taus, k, &flips);
    Ok((q, TriangularFactor { matrix: r, shape: Triangle::Upper }))
}

/// Complete LQ decomposition `M = L Q` of an `n x m` matrix with `m >= n`,
/// computed as the transpose of a QR decomposition of `M^T`.
pub fn lq_complete<T: Real>(m: &Matrix<T>) -> Result<(TriangularFactor<T>, Matrix<T>)> {
    let (n, k) = m.shape();
    require(k >= n, || format!("lq_complete needs cols >= rows, got {n}x{k}"))?;
    let (q, r) = qr_complete(&m.transpose())?;
    Ok((
        TriangularFactor { matrix: r.matrix.transpose(), shape: Triangle::Lower },
        q.transpose(),
    ))
}

/// Complete QL decomposition `M = Q L` of an `n x m` matrix with `n >= m`.
///
/// Computed from a QR decomposition of `M F_m`: `M = (Q F_n)(F_n R F_m)`.
/// The nonzeros of `L` sit in its bottom `m x m` lower-triangular block.
pub fn ql_complete<T: Real>(m: &Matrix<T>) -> Result<(Matrix<T>, TriangularFactor<T>)> {
    let (n, k) = m.shape();
    require(n >= k, || format!("ql_complete needs rows >= cols, got {n}x{k}"))?;
    let flipped = reverse_columns(m);
    let (q, r) = qr_complete(&flipped)?;
    let q = reverse_columns(&q);
    let l = reverse_rows(&reverse_columns(&r.matrix));
    Ok((q, TriangularFactor { matrix: l, shape: Triangle::Lower }))
}

/// Lower-trapezoidal factor `L` (`rows x min(rows, cols)`) with
/// `L L^T = M M^T`, i.e. the `L` of an LQ decomposition with the orthogonal
/// factor discarded and never formed.
pub fn tria<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    let mut a = m.transpose();
    householder_in_place(&mut a);
    let flips = negative_diagonal(&a);
    // a is cols x rows; its upper part (p x rows) transposed is L.
    let mut l = Matrix::zeros(rows, p);
    for j in 0..p {
        let sign = if flips[j] { -T::one() } else { T::one() };
        for i in j..rows {
            l[(i, j)] = sign * a[(j, i)];
        }
    }
    l
}

/// The `k x k` antidiagonal flip matrix `F_k`.
pub fn flip_matrix<T: Real>(k: usize) -> Matrix<T> {
    Matrix::from_fn(k, k, |i, j| if i + j + 1 == k { T::one() } else { T::zero() })
}

pub fn reverse_columns<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let c = m.ncols();
    Matrix::from_fn(m.nrows(), c, |i, j| m[(i, c - 1 - j)])
}

pub fn reverse_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let r = m.nrows();
    Matrix::from_fn(r, m.ncols(), |i, j| m[(r - 1 - i, j)])
}

fn check_square_nonsingular<T: Real>(t: &TriangularFactor<T>, floor: T) -> Result<usize> {
    let k = t.nrows();
    require(t.ncols() == k, || format!("triangular solve needs a square factor, got {}x{}", k, t.ncols()))?;
    if let Some(index) = t.first_degenerate_diagonal(floor) {
        return Err(Error::SingularTriangular { index, step: None });
    }
    Ok(k)
}

/// Solves `T X = rhs` by forward or backward substitution with a zero floor.
pub fn solve_triangular<T: Real>(t: &TriangularFactor<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    solve_triangular_with_floor(t, rhs, T::zero())
}

/// Solves `T X = rhs`; fails if any `|T_ii| <= floor`.
pub fn solve_triangular_with_floor<T: Real>(
    t: &TriangularFactor<T>,
    rhs: &Matrix<T>,
    floor: T,
) -> Result<Matrix<T>> {
    let k = check_square_nonsingular(t, floor)?;
    require(rhs.nrows() == k, || format!("rhs has {} rows, factor has {k}", rhs.nrows()))?;
    let mut x = rhs.clone();
    let tm = t.matrix.as_slice();
    for b in x.as_mut_slice().chunks_exact_mut(k.max(1)).take(rhs.ncols()) {
        match t.shape {
            Triangle::Lower => {
                for j in 0..k {
                    let col = &tm[j * k..(j + 1) * k];
                    let xj = b[j] / col[j];
                    b[j] = xj;
                    for i in j + 1..k {
                        b[i] -= col[i] * xj;
                    }
                }
            }
            Triangle::Upper => {
                for j in (0..k).rev() {
                    let col = &tm[j * k..(j + 1) * k];
                    let xj = b[j] / col[j];
                    b[j] = xj;
                    for i in 0..j {
                        b[i] -= col[i] * xj;
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Solves `T x = b` for a single vector.
pub fn solve_triangular_vec<T: Real>(t: &TriangularFactor<T>, b: &Vector<T>) -> Result<Vector<T>> {
    let m = Matrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_triangular(t, &m)?;
    Ok(Vector::from_column_slice(x.as_slice()))
}

/// Solves `X T = rhs` (a right division) with a zero floor.
pub fn solve_triangular_right<T: Real>(
    t: &TriangularFactor<T>,
    rhs: &Matrix<T>,
) -> Result<Matrix<T>> {
    let k = check_square_nonsingular(t, T::zero())?;
    require(rhs.ncols() == k, || format!("rhs has {} cols, factor has {k}", rhs.ncols()))?;
    let p = rhs.nrows();
    let mut x = rhs.clone();
    if p == 0 || k == 0 {
        return Ok(x);
    }
    let tm = &t.matrix;
    let order: Vec<usize> = match t.shape {
        Triangle::Lower => (0..k).rev().collect(),
        Triangle::Upper => (0..k).collect(),
    };
    for j in order {
        let others: Vec<usize> = match t.shape {
            Triangle::Lower => (j + 1..k).collect(),
            Triangle::Upper => (0..j).collect(),
        };
        for i in others {
            let tij = tm[(i, j)];
            if tij == T::zero() {
                continue;
            }
            let (xi, xj) = two_columns(&mut x, i, j);
            for r in 0..p {
                xj[r] -= xi[r] * tij;
            }
        }
        let d = tm[(j, j)];
        for v in x.column_mut(j).iter_mut() {
            *v /= d;
        }
    }
    Ok(x)
}

/// Borrows column `i` immutably and column `j` mutably (`i != j`).
fn two_columns<T: Real>(m: &mut Matrix<T>, i: usize, j: usize) -> (&[T], &mut [T]) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    if i < j {
        let (a, b) = data.split_at_mut(j * rows);
        (&a[i * rows..(i + 1) * rows], &mut b[..rows])
    } else {
        let (a, b) = data.split_at_mut(i * rows);
        (&b[..rows], &mut a[j * rows..(j + 1) * rows])
    }
}

/// Largest absolute entry of `a - b`; `NaN` if any entry is `NaN`.
pub fn max_abs_diff<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    let mut m = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y).abs();
        if d.partial_cmp(&d).is_none() {
            return d;
        }
        if d > m {
            m = d;
        }
    }
    m
}
