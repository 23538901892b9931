//! Small-scale polyhedral computations: vertex and extreme-ray enumeration,
//! linear programming with dual certificates, and Euclidean projection.
//!
//! A polyhedron is stored as {x : A x <= b} with an optional set of rows
//! marked as equalities. Vertex and ray enumeration are exhaustive over
//! active sets, which is exact and deterministic at the dimension caps this
//! crate enforces. The LP solver is a dense two-phase simplex with Bland's
//! rule, so it terminates deterministically and produces a dual vector that
//! is verified against strong duality in the test suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Feasibility tolerance for activity / membership decisions.
pub const FEAS_TOL: f64 = 1e-9;
/// Two vertices closer than this are considered duplicates.
pub const DEDUP_TOL: f64 = 1e-8;

const MAX_DIM: usize = 12;
const MAX_ROWS: usize = 24;

/// Polyhedron {x : A x <= b}, with rows listed in `eq_rows` holding with
/// equality instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    #[serde(rename = "A")]
    pub a: Matrix,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eq_rows: Vec<usize>,
}

impl Polyhedron {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        Self::with_equalities(a, b, Vec::new())
    }

    pub fn with_equalities(a: Matrix, b: Vec<f64>, eq_rows: Vec<usize>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Argument(format!(
                "matrix has {} rows but rhs has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if eq_rows.iter().any(|&i| i >= a.nrows()) {
            return Err(Error::Argument("equality row index out of range".into()));
        }
        let mut eq_rows = eq_rows;
        eq_rows.sort_unstable();
        eq_rows.dedup();
        Ok(Self { a, b, eq_rows })
    }

    /// Conversion from the generator-side form {z : D z >= b}.
    pub fn from_ge(d: &Matrix, b: &[f64]) -> Result<Self> {
        let a = d.scale_mat(-1.0);
        let nb = b.iter().map(|v| -v).collect();
        Self::new(a, nb)
    }

    /// Axis-aligned box; infinite bounds are skipped rather than stored.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Argument("box bound length mismatch".into()));
        }
        let n = lower.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            if upper[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(upper[i]);
            }
            if lower[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-lower[i]);
            }
        }
        let mut a = Matrix::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..n {
                a.set(i, j, r[j]);
            }
        }
        Self::new(a, rhs)
    }

    pub fn dimension(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    fn is_eq_row(&self, i: usize) -> bool {
        self.eq_rows.binary_search(&i).is_ok()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        for i in 0..self.num_rows() {
            let v = linalg::dot(self.a.row(i), x) - self.b[i];
            if self.is_eq_row(i) {
                if v.abs() > tol {
                    return false;
                }
            } else if v > tol {
                return false;
            }
        }
        true
    }

    /// Append the constraints of `other` (same dimension).
    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        if self.dimension() != other.dimension() {
            return Err(Error::Argument("dimension mismatch in intersection".into()));
        }
        let mut rows = self.a.rows_vec();
        rows.extend(other.a.rows_vec());
        let mut b = self.b.clone();
        b.extend_from_slice(&other.b);
        let mut eq = self.eq_rows.clone();
        eq.extend(other.eq_rows.iter().map(|&i| i + self.num_rows()));
        Polyhedron::with_equalities(Matrix::from_rows(&rows)?, b, eq)
    }

    /// Feasibility via a phase-1 LP.
    pub fn is_empty(&self) -> Result<bool> {
        let c = vec![0.0; self.dimension()];
        match lp_solve(&c, self, LpSense::Min)?.status {
            LpStatus::Infeasible => Ok(true),
            _ => Ok(false),
        }
    }

    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_rows())
            .map(|i| linalg::dot(self.a.row(i), x) - self.b[i])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// combinations
// ---------------------------------------------------------------------------

/// Visit every size-k subset of {0, .., n-1} in lexicographic order.
pub(crate) fn for_each_combination<F: FnMut(&[usize])>(n: usize, k: usize, mut f: F) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0f64;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

// ---------------------------------------------------------------------------
// vertex enumeration
// ---------------------------------------------------------------------------

/// Vertices of a polyhedron plus an emptiness flag for the degenerate case.
#[derive(Debug, Clone)]
pub struct VertexList {
    pub vertices: Vec<Vec<f64>>,
    pub empty: bool,
}

/// All basic feasible solutions of the polyhedron, deduplicated and sorted
/// lexicographically. Exhaustive over size-n active sets.
pub fn enumerate_vertices(p: &Polyhedron) -> Result<VertexList> {
    let n = p.dimension();
    let k = p.num_rows();
    if n > MAX_DIM || k > MAX_ROWS {
        return Err(Error::Scale(format!(
            "vertex enumeration capped at dimension {MAX_DIM} and {MAX_ROWS} rows (got {n}, {k})"
        )));
    }
    if binomial(k, n) > 3.0e6 {
        return Err(Error::Scale("too many candidate active sets".into()));
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    if n == 0 {
        return Ok(VertexList { vertices, empty: false });
    }
    for_each_combination(k, n, |subset| {
        let rows: Vec<Vec<f64>> = subset.iter().map(|&i| p.a.row(i).to_vec()).collect();
        let rhs: Vec<f64> = subset.iter().map(|&i| p.b[i]).collect();
        let m = Matrix::from_rows(&rows).expect("square active set");
        if let Some(x) = m.solve(&rhs) {
            if p.contains(&x, FEAS_TOL) && !vertices.iter().any(|v| linalg::dist2(v, &x) < DEDUP_TOL) {
                vertices.push(x);
            }
        }
    });
    vertices.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let empty = if vertices.is_empty() { p.is_empty()? } else { false };
    Ok(VertexList { vertices, empty })
}

// ---------------------------------------------------------------------------
// extreme rays
// ---------------------------------------------------------------------------

/// Generators of a polyhedral cone {x : A x <= 0}: extreme rays of the
/// pointed quotient, normalized to unit max-norm, plus a +-pair for every
/// lineality direction when the cone is not pointed.
pub fn enumerate_extreme_rays(cone: &Polyhedron) -> Result<Vec<Vec<f64>>> {
    if cone.b.iter().any(|v| v.abs() > 1e-12) {
        return Err(Error::Argument("extreme rays require a homogeneous system".into()));
    }
    let n = cone.dimension();
    let k = cone.num_rows();
    if n > MAX_DIM || k > MAX_ROWS {
        return Err(Error::Scale("ray enumeration beyond scale caps".into()));
    }
    // Lineality space: directions where every row is tight.
    let lineality = cone.a.nullspace(linalg::PIVOT_TOL);
    let mut generators: Vec<Vec<f64>> = Vec::new();
    for l in &lineality {
        generators.push(normalize_ray(l));
        generators.push(normalize_ray(&linalg::scale(-1.0, l)));
    }
    let basis = linalg::orthonormal_complement(&lineality, n);
    let nq = basis.len();
    if nq == 0 {
        return Ok(generators);
    }
    // Rows in quotient coordinates.
    let mut qrows = Matrix::zeros(k, nq);
    for i in 0..k {
        for j in 0..nq {
            qrows.set(i, j, linalg::dot(cone.a.row(i), &basis[j]));
        }
    }
    let to_ambient = |w: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (j, bvec) in basis.iter().enumerate() {
            for i in 0..n {
                x[i] += w[j] * bvec[i];
            }
        }
        x
    };
    let feasible = |x: &[f64]| -> bool {
        (0..k).all(|i| {
            let v = linalg::dot(cone.a.row(i), x);
            if cone.is_eq_row(i) {
                v.abs() <= FEAS_TOL
            } else {
                v <= FEAS_TOL
            }
        })
    };
    let mut rays: Vec<Vec<f64>> = Vec::new();
    let mut push_ray = |x: Vec<f64>| {
        let x = normalize_ray(&x);
        if !rays.iter().any(|r| linalg::dist2(r, &x) < DEDUP_TOL) {
            rays.push(x);
        }
    };
    if nq == 1 {
        for sgn in [1.0, -1.0] {
            let x = to_ambient(&[sgn]);
            if feasible(&x) && linalg::norm2(&x) > 1e-12 {
                push_ray(x);
            }
        }
    } else {
        for_each_combination(k, nq - 1, |subset| {
            let rows: Vec<Vec<f64>> = subset.iter().map(|&i| qrows.row(i).to_vec()).collect();
            let m = Matrix::from_rows(&rows).expect("ray subset");
            let ns = m.nullspace(linalg::PIVOT_TOL);
            if ns.len() != 1 {
                return;
            }
            let d = to_ambient(&ns[0]);
            if feasible(&d) {
                push_ray(d);
            } else {
                let nd = linalg::scale(-1.0, &d);
                if feasible(&nd) {
                    push_ray(nd);
                }
            }
        });
    }
    rays.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    generators.extend(rays);
    Ok(generators)
}

fn normalize_ray(x: &[f64]) -> Vec<f64> {
    let m = linalg::norm_inf(x);
    if m < 1e-300 {
        return x.to_vec();
    }
    linalg::scale(1.0 / m, x)
}

// ---------------------------------------------------------------------------
// linear programming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpSense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

/// LP outcome. For `Optimal` the dual vector satisfies `c + A^T dual = 0`
/// for `Min` and `c - A^T dual = 0` for `Max`, with nonnegative entries on
/// inequality rows; the objective equals `-b . dual` (Min) or `b . dual`
/// (Max).
#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
    pub dual: Vec<f64>,
}

impl LpResult {
    fn non_optimal(status: LpStatus) -> Self {
        Self { status, value: f64::NAN, point: Vec::new(), dual: Vec::new() }
    }
}

/// Minimize or maximize c^T x over the polyhedron with a two-phase dense
/// simplex (Bland's rule, hence deterministic and cycle-free).
pub fn lp_solve(c: &[f64], p: &Polyhedron, sense: LpSense) -> Result<LpResult> {
    if c.len() != p.dimension() {
        return Err(Error::Argument("objective length mismatch".into()));
    }
    let cmin: Vec<f64> = match sense {
        LpSense::Min => c.to_vec(),
        LpSense::Max => c.iter().map(|v| -v).collect(),
    };
    let res = simplex_min(&cmin, p)?;
    Ok(match sense {
        LpSense::Min => res,
        LpSense::Max => LpResult { value: -res.value, ..res },
    })
}

/// Standard-form tableau data for the two-phase simplex.
struct Standard {
    a: Matrix,        // rows x cols, all rows equalities, b >= 0
    b: Vec<f64>,
    row_sign: Vec<f64>, // +1 if original row kept, -1 if negated
    n_orig: usize,    // original dimension (x = u - v)
}

fn standardize(p: &Polyhedron) -> Standard {
    let n = p.dimension();
    let k = p.num_rows();
    let n_slack = (0..k).filter(|&i| !p.is_eq_row(i)).count();
    let ncols = 2 * n + n_slack;
    let mut a = Matrix::zeros(k, ncols);
    let mut b = vec![0.0; k];
    let mut row_sign = vec![1.0; k];
    let mut slack_idx = 0;
    for i in 0..k {
        let mut sign = 1.0;
        if p.b[i] < 0.0 {
            sign = -1.0;
        }
        row_sign[i] = sign;
        b[i] = sign * p.b[i];
        for j in 0..n {
            let v = sign * p.a.get(i, j);
            a.set(i, j, v);
            a.set(i, n + j, -v);
        }
        if !p.is_eq_row(i) {
            a.set(i, 2 * n + slack_idx, sign);
            slack_idx += 1;
        }
    }
    Standard { a, b, row_sign, n_orig: n }
}

fn simplex_min(c: &[f64], p: &Polyhedron) -> Result<LpResult> {
    let std_form = standardize(p);
    let k = std_form.a.nrows();
    let ncols = std_form.a.ncols();
    if k == 0 {
        // No constraints: bounded only when c == 0.
        if c.iter().all(|v| v.abs() < 1e-300) {
            return Ok(LpResult {
                status: LpStatus::Optimal,
                value: 0.0,
                point: vec![0.0; p.dimension()],
                dual: Vec::new(),
            });
        }
        return Ok(LpResult::non_optimal(LpStatus::Unbounded));
    }

    // Phase 1: artificials with identity columns.
    let total = ncols + k;
    let mut tab = Tableau::new(&std_form, total);
    let mut basis: Vec<usize> = (0..k).map(|i| ncols + i).collect();
    let phase1_cost: Vec<f64> = (0..total).map(|j| if j >= ncols { 1.0 } else { 0.0 }).collect();
    let feas = tab.run(&phase1_cost, &mut basis, ncols)?;
    if feas.1 > 1e-8 {
        return Ok(LpResult::non_optimal(LpStatus::Infeasible));
    }

    // Phase 2: original costs; artificial columns may linger in the basis at
    // zero level (redundant rows) but are barred from entering.
    let mut cost = vec![0.0; total];
    for j in 0..std_form.n_orig {
        cost[j] = c[j];
        cost[std_form.n_orig + j] = -c[j];
    }
    let outcome = tab.run(&cost, &mut basis, ncols)?;
    if outcome.0 == RunStatus::Unbounded {
        return Ok(LpResult::non_optimal(LpStatus::Unbounded));
    }
    let value = outcome.1;
    let w = tab.basic_solution(&basis);
    let mut x = vec![0.0; std_form.n_orig];
    for j in 0..std_form.n_orig {
        x[j] = w[j] - w[std_form.n_orig + j];
    }
    // Simplex multipliers for the standardized rows, mapped back through the
    // row sign flips; dual = -y satisfies c + A^T dual = 0.
    let y = tab.multipliers(&cost, &basis)?;
    let dual: Vec<f64> = (0..k).map(|i| -std_form.row_sign[i] * y[i]).collect();
    Ok(LpResult { status: LpStatus::Optimal, value, point: x, dual })
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum RunStatus {
    Optimal,
    Unbounded,
}

/// Dense simplex working set: the constraint matrix never changes; each
/// iteration re-solves against the current basis by LU, which is cheap at
/// this scale and avoids accumulating update error.
struct Tableau {
    a: Matrix,
    b: Vec<f64>,
    nrows: usize,
}

impl Tableau {
    fn new(s: &Standard, total: usize) -> Self {
        let k = s.a.nrows();
        let mut a = Matrix::zeros(k, total);
        for i in 0..k {
            for j in 0..s.a.ncols() {
                a.set(i, j, s.a.get(i, j));
            }
            a.set(i, s.a.ncols() + i, 1.0);
        }
        Self { a, b: s.b.clone(), nrows: k }
    }

    fn basis_matrix(&self, basis: &[usize]) -> Matrix {
        let k = self.nrows;
        let mut bm = Matrix::zeros(k, k);
        for (col, &bj) in basis.iter().enumerate() {
            for i in 0..k {
                bm.set(i, col, self.a.get(i, bj));
            }
        }
        bm
    }

    fn basic_values(&self, basis: &[usize]) -> Result<Vec<f64>> {
        self.basis_matrix(basis)
            .solve(&self.b)
            .ok_or_else(|| Error::Linalg("singular basis".into()))
    }

    fn basic_solution(&self, basis: &[usize]) -> Vec<f64> {
        let vals = self.basic_values(basis).unwrap_or_else(|_| vec![0.0; self.nrows]);
        let mut w = vec![0.0; self.a.ncols()];
        for (i, &bj) in basis.iter().enumerate() {
            w[bj] = vals[i];
        }
        w
    }

    fn multipliers(&self, cost: &[f64], basis: &[usize]) -> Result<Vec<f64>> {
        let cb: Vec<f64> = basis.iter().map(|&j| cost[j]).collect();
        self.basis_matrix(basis)
            .transpose()
            .solve(&cb)
            .ok_or_else(|| Error::Linalg("singular basis in multipliers".into()))
    }

    /// Run simplex to optimality or unboundedness. Columns >= `bar` are
    /// barred from entering (phase-1 artificials during phase 2).
    fn run(&mut self, cost: &[f64], basis: &mut Vec<usize>, bar: usize) -> Result<(RunStatus, f64)> {
        let k = self.nrows;
        for _iter in 0..5000 {
            let xb = self.basic_values(basis)?;
            let y = self.multipliers(cost, basis)?;
            // Bland: first column with negative reduced cost enters.
            let mut entering = None;
            for j in 0..self.a.ncols() {
                if basis.contains(&j) {
                    continue;
                }
                let artificial = j >= bar;
                if artificial && cost[j] == 0.0 {
                    continue; // barred phase-2 artificial
                }
                let col: Vec<f64> = (0..k).map(|i| self.a.get(i, j)).collect();
                let rc = cost[j] - linalg::dot(&y, &col);
                if rc < -1e-9 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(je) = entering else {
                let value = basis.iter().zip(&xb).map(|(&j, v)| cost[j] * v).sum();
                return Ok((RunStatus::Optimal, value));
            };
            let col: Vec<f64> = (0..k).map(|i| self.a.get(i, je)).collect();
            let d = self
                .basis_matrix(basis)
                .solve(&col)
                .ok_or_else(|| Error::Linalg("singular basis in ratio test".into()))?;
            // Ratio test with Bland tie-break on the smallest basic index.
            let mut theta = f64::INFINITY;
            let mut leave: Option<usize> = None;
            for i in 0..k {
                if d[i] > 1e-9 {
                    let ratio = xb[i].max(0.0) / d[i];
                    let better = ratio < theta - 1e-12
                        || ((ratio - theta).abs() <= 1e-12
                            && leave.map(|l| basis[i] < basis[l]).unwrap_or(true));
                    if better {
                        theta = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(il) = leave else {
                return Ok((RunStatus::Unbounded, f64::NEG_INFINITY));
            };
            basis[il] = je;
        }
        Err(Error::Linalg("simplex iteration cap exceeded".into()))
    }
}

// ---------------------------------------------------------------------------
// projection
// ---------------------------------------------------------------------------

/// Euclidean projection of `x0` onto the polyhedron by enumerating KKT
/// active sets of the projection program.
pub fn project(x0: &[f64], p: &Polyhedron) -> Result<Vec<f64>> {
    let n = p.dimension();
    if x0.len() != n {
        return Err(Error::Argument("point dimension mismatch in project".into()));
    }
    if p.contains(x0, FEAS_TOL) {
        return Ok(x0.to_vec());
    }
    let ineq: Vec<usize> = (0..p.num_rows()).filter(|&i| !p.is_eq_row(i)).collect();
    let eq: Vec<usize> = p.eq_rows.clone();
    let max_active = n.min(ineq.len());
    let mut work: f64 = 0.0;
    for s in 0..=max_active {
        work += binomial(ineq.len(), s);
    }
    if work > 2.0e5 {
        return Err(Error::Scale("projection active-set enumeration too large".into()));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut try_active = |active: &[usize]| {
        // KKT system of min ||x - x0||^2 with the chosen rows tight:
        //   x + A_act^T lam = x0,  A_act x = b_act.
        let rows: Vec<usize> = eq.iter().chain(active.iter()).copied().collect();
        let na = rows.len();
        let mut m = Matrix::zeros(n + na, n + na);
        let mut rhs = vec![0.0; n + na];
        for i in 0..n {
            m.set(i, i, 1.0);
            rhs[i] = x0[i];
        }
        for (t, &r) in rows.iter().enumerate() {
            for j in 0..n {
                m.set(j, n + t, p.a.get(r, j));
                m.set(n + t, j, p.a.get(r, j));
            }
            rhs[n + t] = p.b[r];
        }
        let Some(sol) = m.solve(&rhs) else { return };
        let x = &sol[..n];
        let lam = &sol[n..];
        // Multipliers on the chosen inequality rows must be nonnegative.
        for (t, &r) in rows.iter().enumerate() {
            if !eq.contains(&r) && lam[t] < -FEAS_TOL {
                return;
            }
        }
        if !p.contains(x, 1e-8) {
            return;
        }
        let d = linalg::dist2(x, x0);
        if best.as_ref().map(|(bd, _)| d < bd - 1e-12).unwrap_or(true) {
            best = Some((d, x.to_vec()));
        }
    };
    for s in 0..=max_active {
        for_each_combination(ineq.len(), s, |subset| {
            let active: Vec<usize> = subset.iter().map(|&i| ineq[i]).collect();
            try_active(&active);
        });
    }
    match best {
        Some((_, x)) => Ok(x),
        None => {
            if p.is_empty()? {
                Err(Error::EmptyPolyhedron("projection target is empty".into()))
            } else {
                Err(Error::Linalg("projection active-set search failed".into()))
            }
        }
    }
}

/// Distance from a point to the polyhedron.
pub fn distance(x0: &[f64], p: &Polyhedron) -> Result<f64> {
    Ok(linalg::dist2(x0, &project(x0, p)?))
}
