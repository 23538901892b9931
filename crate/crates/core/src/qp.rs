//! Parametric quadratic-program value function for a fixed pair (Q, D):
//!
//!   qp_opt(q, b) = min_z { q^T z + (1/2) z^T Q z : D z >= b }.
//!
//! Q must be copositive on the recession cone D_inf = {v : D v >= 0};
//! otherwise the program is unbounded below on every nonempty feasible set.
//! Under copositivity the value function is finite exactly on a union of
//! finitely many polyhedra in (q, b), is continuous there, and restricted
//! to each stationarity pattern (active-set) it is a quadratic function of
//! (q, b). This module computes:
//!
//! - a copositivity screen over the extreme rays of D_inf (sound for
//!   failure; sound for a pass only in the PSD / nonnegative-cross-term
//!   cases, heuristic otherwise),
//! - membership in the domain of finiteness via feasibility plus one LP per
//!   cached recession-cone generator,
//! - the optimal value by exhaustive enumeration of active sets, solving
//!   each stationarity system and taking the minimum of the objective over
//!   the resulting faces,
//! - the quadratic pieces of the value function with their validity
//!   polyhedra, via a parametric solve of each stationarity system,
//! - dc decompositions: the general min-representation route through the
//!   piecewise machinery, a positive-definite shortcut, and the recourse
//!   wrapper that pre-composes with affine parameter maps.

use serde::{Deserialize, Serialize};

use crate::dc::DcFunction;
use crate::error::{Error, Result};
use crate::expr::{ConvexExpr, Domain};
use crate::linalg::{self, Matrix};
use crate::piecewise::{self, PiecewiseLc1, QuadraticPiece};
use crate::polyhedral::{self, LpSense, LpStatus, Polyhedron};
use crate::rng::SplitMix64;

/// Dimension caps: variables and constraint rows.
pub const MAX_VARS: usize = 8;
pub const MAX_CONSTRAINTS: usize = 10;

/// Tolerance for the copositivity screen and domain inequalities.
const COPOS_TOL: f64 = 1e-9;
const DOM_TOL: f64 = 1e-8;
/// Objective values within this relative width of the optimum share it.
const VALUE_TIE_TOL: f64 = 1e-7;

/// Copositivity screen outcome. `RayPass` is a sound certificate (Q is PSD,
/// or every pairwise product of extreme rays is nonnegative); `SampledPass`
/// only reports that ray checks plus 10^4 random conic combinations found
/// no violation; `Fail` carries a direction v in D_inf with v^T Q v < 0.
#[derive(Debug, Clone, PartialEq)]
pub enum CopositiveVerdict {
    RayPass,
    SampledPass,
    Fail { witness: Vec<f64> },
}

impl CopositiveVerdict {
    pub fn passed(&self) -> bool {
        !matches!(self, CopositiveVerdict::Fail { .. })
    }
}

/// Screen Q for copositivity on {v : D v >= 0}.
pub fn check_copositive(q_mat: &Matrix, d_mat: &Matrix) -> Result<CopositiveVerdict> {
    let m = q_mat.nrows();
    if m > MAX_VARS {
        return Err(Error::Scale(format!("copositivity screen capped at {MAX_VARS} variables")));
    }
    if d_mat.ncols() != m {
        return Err(Error::Argument("D column count must match Q".into()));
    }
    if linalg::min_eig_sym(q_mat) >= -COPOS_TOL {
        return Ok(CopositiveVerdict::RayPass);
    }
    let cone = Polyhedron::from_ge(d_mat, &vec![0.0; d_mat.nrows()])?;
    let rays = polyhedral::enumerate_extreme_rays(&cone)?;
    for r in &rays {
        let val = linalg::dot(r, &q_mat.matvec(r));
        if val < -COPOS_TOL {
            return Ok(CopositiveVerdict::Fail { witness: r.clone() });
        }
    }
    // Sound sufficient condition: all cross terms nonnegative makes every
    // conic combination nonnegative.
    let mut all_cross_nonneg = true;
    'outer: for i in 0..rays.len() {
        for j in (i + 1)..rays.len() {
            if linalg::dot(&rays[i], &q_mat.matvec(&rays[j])) < -COPOS_TOL {
                all_cross_nonneg = false;
                break 'outer;
            }
        }
    }
    if all_cross_nonneg {
        return Ok(CopositiveVerdict::RayPass);
    }
    let mut rng = SplitMix64::new(0xc0905);
    for _ in 0..10_000 {
        if rays.is_empty() {
            break;
        }
        let mut v = vec![0.0; m];
        for r in &rays {
            let w = rng.next_f64();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi += w * ri;
            }
        }
        let norm = linalg::norm_inf(&v);
        if norm < 1e-12 {
            continue;
        }
        let v = linalg::scale(1.0 / norm, &v);
        if linalg::dot(&v, &q_mat.matvec(&v)) < -COPOS_TOL {
            return Ok(CopositiveVerdict::Fail { witness: v });
        }
    }
    Ok(CopositiveVerdict::SampledPass)
}

/// A recession-cone generator of one stationarity pattern: the direction v
/// with its multiplier xi on the active rows.
#[derive(Debug, Clone)]
pub struct DomGenerator {
    pub index_set: Vec<usize>,
    pub v: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Fixed-(Q, D) instance with the eagerly cached domain certificate.
#[derive(Debug, Clone)]
pub struct QpInstance {
    q_mat: Matrix,
    d_mat: Matrix,
    verdict: CopositiveVerdict,
    generators: Vec<DomGenerator>,
}

#[derive(Serialize, Deserialize)]
struct QpJson {
    #[serde(rename = "Q")]
    q: Matrix,
    #[serde(rename = "D")]
    d: Matrix,
}

impl QpInstance {
    pub fn new(q_mat: Matrix, d_mat: Matrix) -> Result<Self> {
        let m = q_mat.nrows();
        let k = d_mat.nrows();
        if q_mat.ncols() != m {
            return Err(Error::Argument("Q must be square".into()));
        }
        if !q_mat.is_symmetric(1e-12) {
            return Err(Error::Argument("Q must be symmetric within 1e-12".into()));
        }
        if d_mat.ncols() != m {
            return Err(Error::Argument("D column count must match Q".into()));
        }
        if m > MAX_VARS || k > MAX_CONSTRAINTS {
            return Err(Error::Scale(format!(
                "instance capped at {MAX_VARS} variables and {MAX_CONSTRAINTS} rows"
            )));
        }
        let verdict = check_copositive(&q_mat, &d_mat)?;
        let generators = if verdict.passed() {
            collect_generators(&q_mat, &d_mat)?
        } else {
            Vec::new()
        };
        Ok(Self { q_mat, d_mat, verdict, generators })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: QpJson = serde_json::from_str(text)
            .map_err(|e| Error::Argument(format!("bad qp instance file: {e}")))?;
        Self::new(j.q, j.d)
    }

    pub fn q_mat(&self) -> &Matrix {
        &self.q_mat
    }

    pub fn d_mat(&self) -> &Matrix {
        &self.d_mat
    }

    pub fn num_vars(&self) -> usize {
        self.q_mat.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.d_mat.nrows()
    }

    pub fn verdict(&self) -> &CopositiveVerdict {
        &self.verdict
    }

    pub fn generators(&self) -> &[DomGenerator] {
        &self.generators
    }

    /// zeta(z) = q^T z + (1/2) z^T Q z.
    pub fn objective(&self, q: &[f64], z: &[f64]) -> f64 {
        linalg::dot(q, z) + 0.5 * linalg::dot(z, &self.q_mat.matvec(z))
    }

    /// Feasible set {z : D z >= b}.
    pub fn feasible_set(&self, b: &[f64]) -> Result<Polyhedron> {
        Polyhedron::from_ge(&self.d_mat, b)
    }
}

/// Generators of the recession cones of all stationarity patterns:
/// for each index set I, directions (v, xi) with
/// Q v = D_I^T xi, D_I v = 0, xi >= 0, D_J v >= 0.
/// Deduplicated on the v component; pure-multiplier rays are dropped.
fn collect_generators(q_mat: &Matrix, d_mat: &Matrix) -> Result<Vec<DomGenerator>> {
    let m = q_mat.nrows();
    let k = d_mat.nrows();
    let mut out: Vec<DomGenerator> = Vec::new();
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let dim = m + na;
        // Rows: m equalities  Q v - D_I^T xi = 0
        //       na equalities D_I v = 0
        //       na inequalities -xi <= 0
        //       (k - na) inequalities -D_J v <= 0
        let mut rows = Vec::new();
        for r in 0..m {
            let mut row = vec![0.0; dim];
            for c in 0..m {
                row[c] = q_mat.get(r, c);
            }
            for (t, &i) in active.iter().enumerate() {
                row[m + t] = -d_mat.get(i, r);
            }
            rows.push(row);
        }
        for &i in &active {
            let mut row = vec![0.0; dim];
            for c in 0..m {
                row[c] = d_mat.get(i, c);
            }
            rows.push(row);
        }
        for t in 0..na {
            let mut row = vec![0.0; dim];
            row[m + t] = -1.0;
            rows.push(row);
        }
        for j in 0..k {
            if active.contains(&j) {
                continue;
            }
            let mut row = vec![0.0; dim];
            for c in 0..m {
                row[c] = -d_mat.get(j, c);
            }
            rows.push(row);
        }
        let nrows = rows.len();
        let eq_rows: Vec<usize> = (0..m + na).collect();
        let cone =
            Polyhedron::with_equalities(Matrix::from_rows(&rows)?, vec![0.0; nrows], eq_rows)?;
        let rays = polyhedral::enumerate_extreme_rays(&cone)?;
        for ray in rays {
            let v = ray[..m].to_vec();
            if linalg::norm_inf(&v) <= 1e-9 {
                continue;
            }
            let scale = 1.0 / linalg::norm_inf(&v);
            let v = linalg::scale(scale, &v);
            let xi = linalg::scale(scale, &ray[m..]);
            if out.iter().any(|g| linalg::dist2(&g.v, &v) < 1e-8) {
                continue;
            }
            // Generator sanity: homogeneous stationarity within 1e-8.
            let mut res = q_mat.matvec(&v);
            for (t, &i) in active.iter().enumerate() {
                for r in 0..m {
                    res[r] -= d_mat.get(i, r) * xi[t];
                }
            }
            debug_assert!(linalg::norm_inf(&res) <= 1e-8);
            out.push(DomGenerator { index_set: active.clone(), v, xi });
        }
    }
    Ok(out)
}

/// Is (q, b) in the domain of finiteness? Requires feasibility of
/// {D z >= b} plus, for every cached generator v,
/// q^T v + min { (Q v)^T z : D z >= b } >= -tol.
pub fn dom_membership(inst: &QpInstance, q: &[f64], b: &[f64]) -> Result<bool> {
    if !inst.verdict.passed() {
        return Err(Error::FailedCopositivity(
            "domain test requires a copositive instance".into(),
        ));
    }
    if q.len() != inst.num_vars() || b.len() != inst.num_constraints() {
        return Err(Error::Argument("parameter dimension mismatch".into()));
    }
    let feas = inst.feasible_set(b)?;
    if feas.is_empty()? {
        return Ok(false);
    }
    for gen in &inst.generators {
        let qv = inst.q_mat.matvec(&gen.v);
        let res = polyhedral::lp_solve(&qv, &feas, LpSense::Min)?;
        match res.status {
            LpStatus::Unbounded => return Ok(false),
            LpStatus::Infeasible => return Ok(false),
            LpStatus::Optimal => {
                if linalg::dot(q, &gen.v) + res.value < -DOM_TOL {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// One stationarity face attaining the optimum.
#[derive(Debug, Clone, Serialize)]
pub struct KktFace {
    pub index_set: Vec<usize>,
    pub z: Vec<f64>,
    /// Multipliers on all rows (zero off the active set).
    pub eta: Vec<f64>,
    pub value: f64,
}

/// Value and minimizer faces of the program at (q, b).
#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub value: f64,
    pub faces: Vec<KktFace>,
}

/// Stationarity face polyhedron for the active set `active` at fixed (q, b),
/// over the variables w = (z, eta_I).
fn face_polyhedron(inst: &QpInstance, active: &[usize], q: &[f64], b: &[f64]) -> Result<Polyhedron> {
    let m = inst.num_vars();
    let k = inst.num_constraints();
    let na = active.len();
    let dim = m + na;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    // Q z - D_I^T eta = -q
    for r in 0..m {
        let mut row = vec![0.0; dim];
        for c in 0..m {
            row[c] = inst.q_mat.get(r, c);
        }
        for (t, &i) in active.iter().enumerate() {
            row[m + t] = -inst.d_mat.get(i, r);
        }
        rows.push(row);
        rhs.push(-q[r]);
    }
    // D_I z = b_I
    for &i in active {
        let mut row = vec![0.0; dim];
        for c in 0..m {
            row[c] = inst.d_mat.get(i, c);
        }
        rows.push(row);
        rhs.push(b[i]);
    }
    let eq_rows: Vec<usize> = (0..m + na).collect();
    // -eta <= 0
    for t in 0..na {
        let mut row = vec![0.0; dim];
        row[m + t] = -1.0;
        rows.push(row);
        rhs.push(0.0);
    }
    // -D_J z <= -b_J
    for j in 0..k {
        if active.contains(&j) {
            continue;
        }
        let mut row = vec![0.0; dim];
        for c in 0..m {
            row[c] = -inst.d_mat.get(j, c);
        }
        rows.push(row);
        rhs.push(-b[j]);
    }
    Polyhedron::with_equalities(Matrix::from_rows(&rows)?, rhs, eq_rows)
}

/// Solve the program by exhaustive stationarity enumeration. The objective
/// is constant on each nonempty face (checked defensively on 10 random
/// vertices per face); the value is the minimum over faces, and every face
/// attaining it is returned, canonically ordered by active set.
pub fn qp_solve(inst: &QpInstance, q: &[f64], b: &[f64]) -> Result<QpSolution> {
    if !dom_membership(inst, q, b)? {
        return Err(Error::NotInDomain(format!("(q, b) = ({q:?}, {b:?})")));
    }
    let m = inst.num_vars();
    let k = inst.num_constraints();
    let mut candidates: Vec<KktFace> = Vec::new();
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let poly = face_polyhedron(inst, &active, q, b)?;
        let dim = m + active.len();
        let feas = polyhedral::lp_solve(&vec![0.0; dim], &poly, LpSense::Min)?;
        if feas.status != LpStatus::Optimal {
            continue;
        }
        let z = feas.point[..m].to_vec();
        let value = inst.objective(q, &z);
        // Constancy probe: the objective must not vary over the face.
        let mut rng = SplitMix64::new(0x7ace ^ mask as u64);
        for _ in 0..10 {
            let c = rng.uniform_vec(dim, -1.0, 1.0);
            let probe = polyhedral::lp_solve(&c, &poly, LpSense::Min)?;
            if probe.status != LpStatus::Optimal {
                continue;
            }
            let zp = probe.point[..m].to_vec();
            let vp = inst.objective(q, &zp);
            if (vp - value).abs() > VALUE_TIE_TOL * (1.0 + value.abs()) {
                return Err(Error::PieceNotQuadratic(format!(
                    "objective varies on stationarity face {active:?}: {value} vs {vp}"
                )));
            }
        }
        let mut eta = vec![0.0; k];
        for (t, &i) in active.iter().enumerate() {
            eta[i] = feas.point[m + t];
        }
        candidates.push(KktFace { index_set: active, z, eta, value });
    }
    if candidates.is_empty() {
        return Err(Error::NotInDomain(
            "no stationarity pattern is feasible although the domain test passed".into(),
        ));
    }
    let best = candidates.iter().map(|f| f.value).fold(f64::INFINITY, f64::min);
    let mut faces: Vec<KktFace> = candidates
        .into_iter()
        .filter(|f| (f.value - best).abs() <= VALUE_TIE_TOL * (1.0 + best.abs()))
        .collect();
    faces.sort_by(|a, b| a.index_set.cmp(&b.index_set));
    Ok(QpSolution { value: best, faces })
}

/// Max-norm residual of the stationarity system at (z, eta).
pub fn kkt_residual(inst: &QpInstance, q: &[f64], b: &[f64], z: &[f64], eta: &[f64]) -> f64 {
    let m = inst.num_vars();
    let k = inst.num_constraints();
    let mut res = 0.0f64;
    // Stationarity.
    let mut grad = inst.q_mat.matvec(z);
    for r in 0..m {
        grad[r] += q[r];
        for i in 0..k {
            grad[r] -= inst.d_mat.get(i, r) * eta[i];
        }
    }
    res = res.max(linalg::norm_inf(&grad));
    // Primal feasibility, dual sign, complementarity.
    for i in 0..k {
        let slack = linalg::dot(inst.d_mat.row(i), z) - b[i];
        res = res.max((-slack).max(0.0));
        res = res.max((-eta[i]).max(0.0));
        res = res.max((eta[i] * slack).abs());
    }
    res
}

/// One quadratic piece of the value function: for parameters u = (q, b) in
/// the validity polyhedron, z = solution_map u is stationary with
/// multipliers eta = eta_map u on `index_set`, and the value equals the
/// stored quadratic at u.
#[derive(Debug, Clone)]
pub struct KktPiece {
    pub index_set: Vec<usize>,
    pub solution_map: Matrix,
    pub eta_map: Matrix,
    /// Validity region in (q, b)-space, already intersected with the region
    /// handed to [`enumerate_pieces`].
    pub validity: Polyhedron,
    pub value: QuadraticPiece,
}

/// Enumerate the quadratic pieces of the value function over a region in
/// (q, b)-space. Pieces whose validity polyhedron misses the region are
/// dropped; output is ordered by active set.
pub fn enumerate_pieces(inst: &QpInstance, region: &Domain) -> Result<Vec<KktPiece>> {
    let m = inst.num_vars();
    let k = inst.num_constraints();
    let nu = m + k;
    if region.dimension() != nu {
        return Err(Error::Argument(format!("region must live in dimension {nu}")));
    }
    let region_poly = region.as_polyhedron()?;
    let mut out = Vec::new();
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let dim = m + na;
        // System matrix over w = (z, eta_I) and rhs map over u = (q, b):
        //   [Q  -D_I^T] w = [-I 0 ] u
        //   [D_I   0  ]     [0 P_I]
        let mut sys = Matrix::zeros(dim, dim);
        let mut rhs = Matrix::zeros(dim, nu);
        for r in 0..m {
            for c in 0..m {
                sys.set(r, c, inst.q_mat.get(r, c));
            }
            for (t, &i) in active.iter().enumerate() {
                sys.set(r, m + t, -inst.d_mat.get(i, r));
            }
            rhs.set(r, r, -1.0);
        }
        for (t, &i) in active.iter().enumerate() {
            for c in 0..m {
                sys.set(m + t, c, inst.d_mat.get(i, c));
            }
            rhs.set(m + t, m + i, 1.0);
        }
        let sol = linalg::solve_parametric(&sys, &rhs, linalg::PIVOT_TOL);
        // Solution and multiplier maps.
        let mut z_map = Matrix::zeros(m, nu);
        let mut eta_map = Matrix::zeros(na, nu);
        for r in 0..m {
            for c in 0..nu {
                z_map.set(r, c, sol.w_map.get(r, c));
            }
        }
        for t in 0..na {
            for c in 0..nu {
                eta_map.set(t, c, sol.w_map.get(m + t, c));
            }
        }
        // Validity rows in u-space.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs_v: Vec<f64> = Vec::new();
        let mut eq_rows: Vec<usize> = Vec::new();
        // eta >= 0  ->  -eta_map u <= 0
        for t in 0..na {
            rows.push(linalg::scale(-1.0, eta_map.row(t)));
            rhs_v.push(0.0);
        }
        // Inactive slack: D_j z_map u >= b_j  ->  (e_{m+j} - D_j z_map) u <= 0
        for j in 0..k {
            if active.contains(&j) {
                continue;
            }
            let dj_z = (0..nu)
                .map(|c| (0..m).map(|r| inst.d_mat.get(j, r) * z_map.get(r, c)).sum::<f64>())
                .collect::<Vec<f64>>();
            let mut row = linalg::scale(-1.0, &dj_z);
            row[m + j] += 1.0;
            rows.push(row);
            rhs_v.push(0.0);
        }
        // Consistency of the rank-deficient equations.
        for cons in &sol.consistency {
            eq_rows.push(rows.len());
            rows.push(cons.clone());
            rhs_v.push(0.0);
        }
        let validity = if rows.is_empty() {
            region_poly.clone()
        } else {
            Polyhedron::with_equalities(Matrix::from_rows(&rows)?, rhs_v, eq_rows)?
                .intersect(&region_poly)?
        };
        if validity.is_empty()? {
            continue;
        }
        // Piece value: zeta(z_map u) = u^T P_q^T z_map u + 1/2 (z_map u)^T Q (z_map u).
        let mut pq = Matrix::zeros(m, nu);
        for r in 0..m {
            pq.set(r, r, 1.0);
        }
        let a = pq
            .transpose()
            .matmul(&z_map)
            .add_mat(&z_map.transpose().matmul(&pq))
            .add_mat(&z_map.transpose().matmul(&inst.q_mat).matmul(&z_map))
            .symmetrize();
        let value = QuadraticPiece::new(a, vec![0.0; nu], 0.0)?;
        out.push(KktPiece { index_set: active, solution_map: z_map, eta_map, validity, value });
    }
    out.sort_by(|a, b| a.index_set.cmp(&b.index_set));
    Ok(out)
}

/// Minimum of the containing pieces' values at u: the direct piecewise
/// evaluation of the value function.
pub fn min_over_pieces(pieces: &[KktPiece], u: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for p in pieces {
        if p.validity.contains(u, 1e-7) {
            let v = p.value.value(u);
            best = Some(best.map_or(v, |bv| bv.min(v)));
        }
    }
    best
}

fn sample_region_membership(inst: &QpInstance, region: &Domain) -> Result<()> {
    let sampler = region.sampler()?;
    let mut rng = SplitMix64::new(0xd0f1);
    let m = inst.num_vars();
    for _ in 0..50 {
        let u = sampler.sample(&mut rng);
        if !dom_membership(inst, &u[..m], &u[m..])? {
            return Err(Error::RegionNotInDomain(format!(
                "sampled parameter point {u:?} is outside the domain of finiteness"
            )));
        }
    }
    Ok(())
}

/// dc decomposition of the value function on a convex region contained in
/// the domain of finiteness (sampled check), via the min-representation of
/// its quadratic pieces.
pub fn value_dc(inst: &QpInstance, region: &Domain) -> Result<DcFunction> {
    sample_region_membership(inst, region)?;
    let pieces = enumerate_pieces(inst, region)?;
    if pieces.is_empty() {
        return Err(Error::RegionNotInDomain("no piece meets the region".into()));
    }
    let quads: Vec<QuadraticPiece> = pieces.iter().map(|p| p.value.clone()).collect();
    let regions: Vec<Polyhedron> = pieces.iter().map(|p| p.validity.clone()).collect();
    let pw = PiecewiseLc1::new(quads, regions, region.clone())?;
    Ok(piecewise::build_min_representation(&pw)?.theta)
}

/// Positive-definite shortcut:
/// qp_opt(q, b) = phi(b + D Q^{-1} q) - (1/2) q^T Q^{-1} q
/// with phi(b') = min { (1/2) y^T Q y : D y >= b' } convex in b'.
pub fn pd_value_dc(inst: &QpInstance) -> Result<DcFunction> {
    let m = inst.num_vars();
    let k = inst.num_constraints();
    let min_eig = linalg::min_eig_sym(&inst.q_mat);
    if min_eig < 1e-9 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {min_eig:.3e} below 1e-9"
        )));
    }
    let q_inv = inst.q_mat.inverse()?;
    let inst_g = inst.clone();
    let q_inv_g = q_inv.clone();
    let minuend = ConvexExpr::certified("pd_value_recentered", move |u: &[f64]| {
        let (q, b) = u.split_at(inst_g.num_vars());
        let shift = inst_g.d_mat.matvec(&q_inv_g.matvec(q));
        let b_prime: Vec<f64> = b.iter().zip(&shift).map(|(bi, si)| bi + si).collect();
        let sol = qp_solve(&inst_g, &vec![0.0; inst_g.num_vars()], &b_prime)?;
        Ok(sol.value)
    });
    // (1/2) q^T Q^{-1} q as a PSD quadratic form in u = (q, b).
    let mut block = Matrix::zeros(m + k, m + k);
    for i in 0..m {
        for j in 0..m {
            block.set(i, j, q_inv.get(i, j));
        }
    }
    let subtrahend = ConvexExpr::quad_form(block, vec![0.0; m + k], 0.0)?;
    Ok(DcFunction::new(minuend, subtrahend, Domain::all(m + k)))
}

/// Per-scenario recourse data: q(x) = f + G x and b(x) = xi - C x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecourseScenario {
    pub f: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
    pub xi: Vec<f64>,
}

/// A family of affine parameter maps indexed by scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecourseMap {
    pub scenarios: Vec<RecourseScenario>,
}

impl RecourseMap {
    pub fn validate(&self, inst: &QpInstance, x_dim: usize) -> Result<()> {
        let m = inst.num_vars();
        let k = inst.num_constraints();
        for (idx, s) in self.scenarios.iter().enumerate() {
            if s.f.len() != m
                || s.xi.len() != k
                || s.g.nrows() != m
                || s.g.ncols() != x_dim
                || s.c.nrows() != k
                || s.c.ncols() != x_dim
            {
                return Err(Error::Argument(format!("scenario {idx} dimensions inconsistent")));
            }
        }
        Ok(())
    }

    /// The affine map x -> u = (f + G x, xi - C x) of one scenario.
    pub fn parameter_map(&self, scenario: usize, inst: &QpInstance) -> (Matrix, Vec<f64>) {
        let s = &self.scenarios[scenario];
        let m = inst.num_vars();
        let k = inst.num_constraints();
        let n = s.g.ncols();
        let mut t = Matrix::zeros(m + k, n);
        for r in 0..m {
            for c in 0..n {
                t.set(r, c, s.g.get(r, c));
            }
        }
        for r in 0..k {
            for c in 0..n {
                t.set(m + r, c, -s.c.get(r, c));
            }
        }
        let mut t0 = s.f.clone();
        t0.extend_from_slice(&s.xi);
        (t, t0)
    }
}

/// Image bounding box of a box region under an affine map (interval
/// arithmetic, hence a superset of the true image).
fn affine_image_box(t: &Matrix, t0: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = t0.to_vec();
    let mut out_hi = t0.to_vec();
    for r in 0..t.nrows() {
        for c in 0..t.ncols() {
            let w = t.get(r, c);
            if w >= 0.0 {
                out_lo[r] += w * lo[c];
                out_hi[r] += w * hi[c];
            } else {
                out_lo[r] += w * hi[c];
                out_hi[r] += w * lo[c];
            }
        }
    }
    (out_lo, out_hi)
}

/// dc decomposition of the recourse value psi(x) = qp_opt(q(x), b(x)) on a
/// region of first-stage decisions. Uses the positive-definite shortcut
/// when Q allows it, otherwise pulls the quadratic pieces back through the
/// affine map and rebuilds the min-representation in x-space.
pub fn recourse_dc(
    inst: &QpInstance,
    rm: &RecourseMap,
    scenario: usize,
    x_region: &Domain,
) -> Result<DcFunction> {
    rm.validate(inst, x_region.dimension())?;
    if scenario >= rm.scenarios.len() {
        return Err(Error::Argument(format!("scenario {scenario} out of range")));
    }
    let m = inst.num_vars();
    let (t, t0) = rm.parameter_map(scenario, inst);
    // The affine image of the region must stay inside the domain of
    // finiteness (sampled precondition).
    let sampler = x_region.sampler()?;
    let mut rng = SplitMix64::new(0x4ec0);
    for _ in 0..50 {
        let x = sampler.sample(&mut rng);
        let u = linalg::add(&t.matvec(&x), &t0);
        if !dom_membership(inst, &u[..m], &u[m..])? {
            return Err(Error::RegionNotInDomain(format!(
                "image of x = {x:?} leaves the domain of finiteness"
            )));
        }
    }
    if linalg::min_eig_sym(&inst.q_mat) >= 1e-9 {
        let pd = pd_value_dc(inst)?;
        let g = ConvexExpr::affine_map(t.clone(), t0.clone(), pd.g().clone())?;
        let h = ConvexExpr::affine_map(t, t0, pd.h().clone())?;
        return Ok(DcFunction::new(g, h, x_region.clone()));
    }
    // General route: enumerate pieces over the image box, pull them back.
    let (lo, hi) = x_region.bounding_box()?;
    let (ulo, uhi) = affine_image_box(&t, &t0, &lo, &hi);
    let u_region = Domain::from_box(ulo, uhi)?;
    let pieces = enumerate_pieces(inst, &u_region)?;
    if pieces.is_empty() {
        return Err(Error::RegionNotInDomain("no piece meets the image box".into()));
    }
    let x_poly = x_region.as_polyhedron()?;
    let mut quads = Vec::new();
    let mut regions = Vec::new();
    for p in &pieces {
        // Quadratic in x: value(t0 + T x).
        let a_u = &p.value.a2;
        let a2_x = t.transpose().matmul(a_u).matmul(&t).symmetrize();
        let a1_x = t.transpose().matvec(&linalg::add(&a_u.matvec(&t0), &p.value.a1));
        let a0_x =
            0.5 * linalg::dot(&t0, &a_u.matvec(&t0)) + linalg::dot(&p.value.a1, &t0) + p.value.a0;
        // Region in x: A_u (t0 + T x) <= b_u, clipped to the x-region.
        let a_rows = p.validity.a.nrows();
        let mut rows = Vec::with_capacity(a_rows);
        let mut rhs = Vec::with_capacity(a_rows);
        for r in 0..a_rows {
            let arow = p.validity.a.row(r);
            rows.push(t.transpose().matvec(arow));
            rhs.push(p.validity.b[r] - linalg::dot(arow, &t0));
        }
        let pulled = Polyhedron::with_equalities(
            Matrix::from_rows(&rows)?,
            rhs,
            p.validity.eq_rows.clone(),
        )?
        .intersect(&x_poly)?;
        if pulled.is_empty()? {
            continue;
        }
        quads.push(QuadraticPiece::new(a2_x, a1_x, a0_x)?);
        regions.push(pulled);
    }
    let pw = PiecewiseLc1::new(quads, regions, x_region.clone())?;
    Ok(piecewise::build_min_representation(&pw)?.theta)
}
