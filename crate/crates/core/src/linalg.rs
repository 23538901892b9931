//! Small dense linear algebra.
//!
//! Everything in this crate runs at desk scale (dimensions capped around
//! a dozen), so the routines here favor determinism and transparency over
//! asymptotics: LU with partial pivoting for solves, Gauss-Jordan with full
//! pivoting for rank decisions and parametric solution maps, cyclic Jacobi
//! for symmetric eigendecompositions, and power iteration where a single
//! extreme eigenvalue is all that is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default pivot / rank tolerance.
pub const PIVOT_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(c: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(a, b))
}

// ---------------------------------------------------------------------------
// matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix. Serializes as a nested array of rows, which is
/// the layout every input file in this crate uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        Matrix::from_rows(&rows).map_err(|e| e.to_string())
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Vec<Vec<f64>> {
        (0..m.nrows).map(|i| m.row(i).to_vec()).collect()
    }
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let ncols = rows[0].len();
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Argument("ragged matrix rows".into()));
        }
        Ok(Self { nrows: rows.len(), ncols, data: rows.concat() })
    }

    /// 1x1 matrix, handy in scalar tests.
    pub fn scalar(v: f64) -> Self {
        Self { nrows: 1, ncols: 1, data: vec![v] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        (0..self.nrows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.ncols, other.nrows);
        let mut out = Matrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    out.set(i, j, out.get(i, j) + aik * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn add_mat(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { nrows: self.nrows, ncols: self.ncols, data }
    }

    pub fn sub_mat(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { nrows: self.nrows, ncols: self.ncols, data }
    }

    pub fn scale_mat(&self, c: f64) -> Matrix {
        Matrix { nrows: self.nrows, ncols: self.ncols, data: self.data.iter().map(|x| c * x).collect() }
    }

    /// Symmetrize: (A + A^T) / 2.
    pub fn symmetrize(&self) -> Matrix {
        self.add_mat(&self.transpose()).scale_mat(0.5)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Solve A x = rhs by LU with partial pivoting. `None` when A is
    /// numerically singular.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        debug_assert_eq!(self.nrows, self.ncols);
        debug_assert_eq!(rhs.len(), self.nrows);
        let n = self.nrows;
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-12 {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                b.swap(col, piv);
            }
            let p = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / p;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..n {
                s -= a[i * n + j] * x[j];
            }
            x[i] = s / a[i * n + i];
        }
        Some(x)
    }

    /// Inverse via column-by-column solves.
    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.nrows;
        let mut out = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self
                .solve(&e)
                .ok_or_else(|| Error::Linalg("singular matrix in inverse".into()))?;
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        Ok(out)
    }

    /// Numerical rank via Gauss elimination with full pivoting.
    pub fn rank(&self, tol: f64) -> usize {
        let mut a = self.clone();
        let mut used_rows = vec![false; a.nrows];
        let mut used_cols = vec![false; a.ncols];
        let mut rank = 0;
        loop {
            let mut best = tol;
            let mut pos = None;
            for i in 0..a.nrows {
                if used_rows[i] {
                    continue;
                }
                for j in 0..a.ncols {
                    if used_cols[j] {
                        continue;
                    }
                    if a.get(i, j).abs() > best {
                        best = a.get(i, j).abs();
                        pos = Some((i, j));
                    }
                }
            }
            let Some((pi, pj)) = pos else { break };
            used_rows[pi] = true;
            used_cols[pj] = true;
            rank += 1;
            let p = a.get(pi, pj);
            for i in 0..a.nrows {
                if used_rows[i] || a.get(i, pj) == 0.0 {
                    continue;
                }
                let f = a.get(i, pj) / p;
                for j in 0..a.ncols {
                    a.set(i, j, a.get(i, j) - f * a.get(pi, j));
                }
            }
        }
        rank
    }

    /// Orthonormal basis of the nullspace {x : A x = 0}.
    pub fn nullspace(&self, tol: f64) -> Vec<Vec<f64>> {
        // Reduce [A | A] and read the free-column coefficients off the
        // reduced left block, which gauss_jordan hands back as reduced_rhs
        // when rhs == a.
        let gj = gauss_jordan(self, self, tol);
        let reduced = gj.reduced_rhs;
        let mut basis = Vec::new();
        for &fc in &gj.free_cols {
            let mut v = vec![0.0; self.ncols];
            v[fc] = 1.0;
            for &(prow, pcol) in &gj.pivots {
                v[pcol] = -reduced.get(prow, fc);
            }
            basis.push(v);
        }
        gram_schmidt(&basis)
    }
}

/// Outcome of Gauss-Jordan elimination with full pivoting on `a`, mirrored
/// on the right-hand map `rhs`.
struct GaussJordan {
    reduced_rhs: Matrix,
    /// Reduced rhs rows of rank-deficient equations; each demands f^T u = 0.
    consistency: Vec<Vec<f64>>,
    free_cols: Vec<usize>,
    pivots: Vec<(usize, usize)>,
}

fn gauss_jordan(a: &Matrix, rhs: &Matrix, tol: f64) -> GaussJordan {
    let mut a = a.clone();
    let mut r = rhs.clone();
    let mut pivot_of_row: Vec<Option<usize>> = vec![None; a.nrows()];
    let mut used_cols = vec![false; a.ncols()];
    loop {
        let mut best = tol;
        let mut pos = None;
        for i in 0..a.nrows() {
            if pivot_of_row[i].is_some() {
                continue;
            }
            for j in 0..a.ncols() {
                if used_cols[j] {
                    continue;
                }
                if a.get(i, j).abs() > best {
                    best = a.get(i, j).abs();
                    pos = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pos else { break };
        pivot_of_row[pi] = Some(pj);
        used_cols[pj] = true;
        let p = a.get(pi, pj);
        for j in 0..a.ncols() {
            a.set(pi, j, a.get(pi, j) / p);
        }
        for j in 0..r.ncols() {
            r.set(pi, j, r.get(pi, j) / p);
        }
        for i in 0..a.nrows() {
            if i == pi {
                continue;
            }
            let f = a.get(i, pj);
            if f == 0.0 {
                continue;
            }
            for j in 0..a.ncols() {
                a.set(i, j, a.get(i, j) - f * a.get(pi, j));
            }
            for j in 0..r.ncols() {
                r.set(i, j, r.get(i, j) - f * r.get(pi, j));
            }
        }
    }
    let mut consistency = Vec::new();
    for i in 0..a.nrows() {
        if pivot_of_row[i].is_none() {
            let row = r.row(i).to_vec();
            if norm_inf(&row) > 1e-12 {
                consistency.push(row);
            }
        }
    }
    let free_cols: Vec<usize> = (0..a.ncols()).filter(|&j| !used_cols[j]).collect();
    let pivots: Vec<(usize, usize)> = pivot_of_row
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|j| (i, j)))
        .collect();
    GaussJordan { reduced_rhs: r, consistency, free_cols, pivots }
}

/// Result of solving A w = R u for all parameter vectors u at once.
#[derive(Debug, Clone)]
pub struct ParametricSolution {
    /// Linear map u -> w (free variables pinned to zero).
    pub w_map: Matrix,
    /// Rows f with f^T u = 0 required for the system to be consistent.
    pub consistency: Vec<Vec<f64>>,
}

/// Solve the parametric linear system A w = R u: every rank-deficient
/// equation becomes a linear consistency condition on u, and the basic
/// variables become linear functions of u with free variables set to zero.
pub fn solve_parametric(a: &Matrix, rhs_map: &Matrix, tol: f64) -> ParametricSolution {
    debug_assert_eq!(a.nrows(), rhs_map.nrows());
    let gj = gauss_jordan(a, rhs_map, tol);
    let mut w_map = Matrix::zeros(a.ncols(), rhs_map.ncols());
    for &(prow, pcol) in &gj.pivots {
        for j in 0..rhs_map.ncols() {
            w_map.set(pcol, j, gj.reduced_rhs.get(prow, j));
        }
    }
    ParametricSolution { w_map, consistency: gj.consistency }
}

/// Gram-Schmidt orthonormalization, dropping near-dependent vectors.
pub fn gram_schmidt(vecs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vecs {
        let mut w = v.clone();
        for b in &basis {
            let c = dot(&w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
        let n = norm2(&w);
        if n > 1e-10 {
            basis.push(scale(1.0 / n, &w));
        }
    }
    basis
}

/// Extend an orthonormal set to an orthonormal basis of R^n; returns only
/// the new vectors (the orthogonal complement when `onb` spans a subspace).
pub fn orthonormal_complement(onb: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = onb.to_vec();
    let mut extra = Vec::new();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for b in &all {
            let c = dot(&e, b);
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= c * bi;
            }
        }
        let nm = norm2(&e);
        if nm > 1e-10 {
            let v = scale(1.0 / nm, &e);
            all.push(v.clone());
            extra.push(v);
        }
    }
    extra
}

// ---------------------------------------------------------------------------
// symmetric eigenproblems
// ---------------------------------------------------------------------------

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m.get(i, j).abs());
            }
        }
        if off < 1e-13 * (1.0 + m.max_abs()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
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
    let eigs = (0..n).map(|i| m.get(i, i)).collect();
    (eigs, v)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// deterministic start vector.
fn power_iteration_psd(a: &Matrix) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let nv = norm2(&v);
    v = scale(1.0 / nv, &v);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = a.matvec(&v);
        let nw = norm2(&w);
        if nw < 1e-300 {
            return 0.0;
        }
        let next = scale(1.0 / nw, &w);
        let nl = dot(&next, &a.matvec(&next));
        if (nl - lambda).abs() <= 1e-14 * (1.0 + nl.abs()) {
            return nl;
        }
        lambda = nl;
        v = next;
    }
    lambda
}

/// Spectral norm (largest singular value) of a symmetric matrix: power
/// iteration on A^2, whose eigenvalues are the squared eigenvalues of A.
pub fn spectral_norm_sym(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    power_iteration_psd(&a.matmul(a)).max(0.0).sqrt()
}

/// Smallest eigenvalue of a symmetric matrix via power iteration on the
/// shifted matrix mu*I - A with mu a Gershgorin upper bound on the spectrum.
pub fn min_eig_sym(a: &Matrix) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut mu = 0.0f64;
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| a.get(i, j).abs()).sum();
        mu = mu.max(row_sum);
    }
    mu += 1.0;
    let mut shifted = a.scale_mat(-1.0);
    for i in 0..n {
        shifted.set(i, i, shifted.get(i, i) + mu);
    }
    mu - power_iteration_psd(&shifted)
}

/// Split a symmetric matrix into a difference of PSD matrices using its
/// eigendecomposition: A = A_plus - A_minus.
pub fn psd_split(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let (eigs, vects) = jacobi_eigen(a);
    let mut plus = Matrix::zeros(n, n);
    let mut minus = Matrix::zeros(n, n);
    for k in 0..n {
        let lam = eigs[k];
        let target = if lam >= 0.0 { &mut plus } else { &mut minus };
        let w = lam.abs();
        for i in 0..n {
            for j in 0..n {
                let v = target.get(i, j) + w * vects.get(i, k) * vects.get(j, k);
                target.set(i, j, v);
            }
        }
    }
    (plus.symmetrize(), minus.symmetrize())
}
