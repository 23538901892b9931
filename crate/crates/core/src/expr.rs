//! Convex expression trees.
//!
//! A [`ConvexExpr`] is convex on its domain because every node kind carries
//! a construction rule that preserves convexity: affine atoms, sums,
//! nonnegative scalings, pointwise maxima, PSD quadratic forms, squares of
//! nonnegative convex children, norms of affine maps, affine pre-composition,
//! and the two auxiliary-variable envelope nodes used by the risk measures.
//! A `Certified` node wraps an opaque evaluator whose convexity is
//! guaranteed by the construction site (e.g. the partial minimum of a
//! jointly convex function); it is always paired with sampled midpoint
//! checks in the verification suites.
//!
//! Envelope evaluation is an exact finite scan: the auxiliary objective is
//! piecewise linear in the scalar auxiliary variable, so its minimum is
//! attained at one of the breakpoints enumerated from the scenario values.
//! Two sentinel evaluations beyond the extreme breakpoints detect an
//! unbounded auxiliary direction, which inputs violating the normalization
//! assumptions can produce.

use std::fmt;
use std::sync::Arc;

use serde::de::Error as _;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::polyhedral::{self, Polyhedron};
use crate::rng::SplitMix64;

/// Smallest admissible eigenvalue for a quadratic-form matrix.
pub const EPS_PSD: f64 = 1e-9;
/// Slack allowed when certifying nonnegativity of a square root child.
pub const EPS_EVAL: f64 = 1e-7;
/// Probabilities must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// domain
// ---------------------------------------------------------------------------

/// Convex domain: an axis-aligned box (entries may be infinite) or a
/// polyhedron {x : A x <= b}. Both kinds are convex by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polyhedron {
        #[serde(rename = "A")]
        a: Matrix,
        b: Vec<f64>,
    },
}

impl Domain {
    pub fn from_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Argument("box bounds must be nonempty and equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Argument("box lower bound exceeds upper bound".into()));
        }
        Ok(Domain::Box { lower, upper })
    }

    /// Interval domain in one variable.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Domain::Box { lower: vec![lo], upper: vec![hi] }
    }

    /// Unbounded box of the given dimension.
    pub fn all(dim: usize) -> Self {
        Domain::Box { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn from_polyhedron(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Argument("polyhedron row mismatch".into()));
        }
        if a.ncols() == 0 {
            return Err(Error::Argument("polyhedron needs positive dimension".into()));
        }
        Ok(Domain::Polyhedron { a, b })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Domain::Box { lower, .. } => lower.len(),
            Domain::Polyhedron { a, .. } => a.ncols(),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dimension() {
            return false;
        }
        match self {
            Domain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(xi, (l, u))| *xi >= l - tol && *xi <= u + tol),
            Domain::Polyhedron { a, b } => {
                (0..a.nrows()).all(|i| linalg::dot(a.row(i), x) - b[i] <= tol)
            }
        }
    }

    pub fn as_polyhedron(&self) -> Result<Polyhedron> {
        match self {
            Domain::Box { lower, upper } => Polyhedron::from_box(lower, upper),
            Domain::Polyhedron { a, b } => Polyhedron::new(a.clone(), b.clone()),
        }
    }

    pub fn is_bounded(&self) -> Result<bool> {
        match self {
            Domain::Box { lower, upper } => {
                Ok(lower.iter().chain(upper.iter()).all(|v| v.is_finite()))
            }
            Domain::Polyhedron { a, b } => {
                let _ = b;
                let cone = Polyhedron::new(a.clone(), vec![0.0; a.nrows()])?;
                Ok(polyhedral::enumerate_extreme_rays(&cone)?.is_empty())
            }
        }
    }

    /// Axis bounds; errors on unbounded domains.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Box { lower, upper } => {
                if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::UnboundedDomain("box has infinite bounds".into()));
                }
                Ok((lower.clone(), upper.clone()))
            }
            Domain::Polyhedron { .. } => {
                let vl = polyhedral::enumerate_vertices(&self.as_polyhedron()?)?;
                if vl.empty {
                    return Err(Error::EmptyPolyhedron("domain is empty".into()));
                }
                if !self.is_bounded()? {
                    return Err(Error::UnboundedDomain("polyhedral domain is unbounded".into()));
                }
                let n = self.dimension();
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for v in &vl.vertices {
                    for i in 0..n {
                        lo[i] = lo[i].min(v[i]);
                        hi[i] = hi[i].max(v[i]);
                    }
                }
                Ok((lo, hi))
            }
        }
    }

    /// Reusable sampler; vertex enumeration for polyhedra happens once here.
    pub fn sampler(&self) -> Result<DomainSampler> {
        match self {
            Domain::Box { lower, upper } => {
                if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::UnboundedDomain("cannot sample an unbounded box".into()));
                }
                Ok(DomainSampler::Box { lower: lower.clone(), upper: upper.clone() })
            }
            Domain::Polyhedron { .. } => {
                if !self.is_bounded()? {
                    return Err(Error::UnboundedDomain("cannot sample an unbounded polyhedron".into()));
                }
                let vl = polyhedral::enumerate_vertices(&self.as_polyhedron()?)?;
                if vl.vertices.is_empty() {
                    return Err(Error::EmptyPolyhedron("cannot sample an empty polyhedron".into()));
                }
                Ok(DomainSampler::Polytope { vertices: vl.vertices })
            }
        }
    }

    /// Deterministic grid with roughly `target` points (at least 10 per
    /// axis), used by the infimum estimator. Polyhedral domains grid their
    /// bounding box and keep members, always including the vertices.
    pub fn grid(&self, target: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.dimension();
        let (lo, hi) = self.bounding_box()?;
        let per_axis = ((target as f64).powf(1.0 / n as f64).ceil() as usize).max(10);
        let mut pts: Vec<Vec<f64>> = vec![vec![]];
        for ax in 0..n {
            let mut next = Vec::with_capacity(pts.len() * per_axis);
            for base in &pts {
                for t in 0..per_axis {
                    let frac = t as f64 / (per_axis - 1) as f64;
                    let mut p = base.clone();
                    p.push(lo[ax] + frac * (hi[ax] - lo[ax]));
                    next.push(p);
                }
            }
            pts = next;
            if pts.len() > 4_000_000 {
                return Err(Error::Scale("grid too large".into()));
            }
        }
        if let Domain::Polyhedron { .. } = self {
            pts.retain(|p| self.contains(p, polyhedral::FEAS_TOL));
            let vl = polyhedral::enumerate_vertices(&self.as_polyhedron()?)?;
            pts.extend(vl.vertices);
        }
        Ok(pts)
    }
}

/// Sampling handle produced by [`Domain::sampler`].
#[derive(Debug, Clone)]
pub enum DomainSampler {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope { vertices: Vec<Vec<f64>> },
}

impl DomainSampler {
    pub fn sample(&self, rng: &mut SplitMix64) -> Vec<f64> {
        match self {
            DomainSampler::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| rng.uniform(*l, *u))
                .collect(),
            DomainSampler::Polytope { vertices } => {
                // Convex combination with exponential weights: a Dirichlet
                // draw over the vertex simplex, covering the interior.
                let mut weights: Vec<f64> =
                    vertices.iter().map(|_| -(1.0 - rng.next_f64()).ln().max(1e-12)).collect();
                let total: f64 = weights.iter().sum();
                for w in &mut weights {
                    *w /= total;
                }
                let n = vertices[0].len();
                let mut x = vec![0.0; n];
                for (w, v) in weights.iter().zip(vertices) {
                    for i in 0..n {
                        x[i] += w * v[i];
                    }
                }
                x
            }
        }
    }
}

// ---------------------------------------------------------------------------
// expression tree
// ---------------------------------------------------------------------------

/// Opaque evaluator wrapper so closures can live inside a `Debug`-able tree.
#[derive(Clone)]
pub struct EvalFn(pub Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>);

impl fmt::Debug for EvalFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<evaluator>")
    }
}

/// Convex-by-construction expression tree. See the module docs for the rule
/// each node kind carries.
#[derive(Debug, Clone)]
pub enum ConvexExpr {
    /// a^T x + c
    Affine { a: Vec<f64>, c: f64 },
    Sum { children: Vec<ConvexExpr> },
    /// c * child with c >= 0
    NonnegScale { c: f64, child: Box<ConvexExpr> },
    MaxOf { children: Vec<ConvexExpr> },
    /// 0.5 x^T A x + a^T x + c with A PSD (within `EPS_PSD`)
    QuadForm { a_mat: Matrix, a: Vec<f64>, c: f64 },
    /// child^2 where child is convex and nonnegative on the working domain
    SquareOfNonneg { child: Box<ConvexExpr> },
    /// ||M x + d||_2
    Norm2Affine { m: Matrix, d: Vec<f64> },
    /// child(T x + t0): affine pre-composition preserves convexity
    AffineMap { t: Matrix, t0: Vec<f64>, child: Box<ConvexExpr> },
    /// min_t [ t + (1/(1-alpha)) sum_s p_s max(p_s(x) - t, q_s(x)) ]
    CvarEnvelope {
        alpha: f64,
        probs: Vec<f64>,
        pieces: Vec<(ConvexExpr, ConvexExpr)>,
    },
    /// min_eta [ sum_s p_s max_i { (sum_{i'!=i} a_i') p_s(x) + a_i (q_s(x) + eta) - alpha_i } - eta ]
    ///
    /// This is the negation of the concave utility-envelope term, so the
    /// stored node is convex.
    NegOceEnvelope {
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        probs: Vec<f64>,
        pieces: Vec<(ConvexExpr, ConvexExpr)>,
    },
    /// Convexity guaranteed by the construction site.
    Certified { label: String, eval: EvalFn },
}

impl ConvexExpr {
    pub fn affine(a: Vec<f64>, c: f64) -> Self {
        ConvexExpr::Affine { a, c }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        ConvexExpr::Affine { a: vec![0.0; dim], c }
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(dim, 0.0)
    }

    pub fn sum(children: Vec<ConvexExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::Argument("sum needs at least one child".into()));
        }
        Ok(ConvexExpr::Sum { children })
    }

    pub fn scale(c: f64, child: ConvexExpr) -> Result<Self> {
        if c < 0.0 {
            return Err(Error::Argument(format!("scale coefficient {c} is negative")));
        }
        Ok(ConvexExpr::NonnegScale { c, child: Box::new(child) })
    }

    pub fn max_of(children: Vec<ConvexExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::Argument("max needs at least one child".into()));
        }
        Ok(ConvexExpr::MaxOf { children })
    }

    /// 0.5 x^T A x + a^T x + c. Requires `A` symmetric with smallest
    /// eigenvalue >= -EPS_PSD (power iteration on the shifted matrix).
    pub fn quad_form(a_mat: Matrix, a: Vec<f64>, c: f64) -> Result<Self> {
        if a_mat.nrows() != a_mat.ncols() || a_mat.nrows() != a.len() {
            return Err(Error::Argument("quadratic form dimension mismatch".into()));
        }
        if !a_mat.is_symmetric(1e-9) {
            return Err(Error::Argument("quadratic form matrix must be symmetric".into()));
        }
        let min_eig = linalg::min_eig_sym(&a_mat);
        if min_eig < -EPS_PSD {
            return Err(Error::Certification(format!(
                "quadratic form matrix has eigenvalue {min_eig:.3e} below -{EPS_PSD:.0e}"
            )));
        }
        Ok(ConvexExpr::QuadForm { a_mat, a, c })
    }

    /// Square of a convex child certified nonnegative on `domain` by a
    /// deterministic sample sweep.
    pub fn square_of_nonneg(child: ConvexExpr, domain: &Domain) -> Result<Self> {
        let pts = domain.grid(64)?;
        for p in &pts {
            let v = child.eval(p)?;
            if v < -EPS_EVAL {
                return Err(Error::Certification(format!(
                    "square root child dips to {v:.3e} on the domain"
                )));
            }
        }
        Ok(ConvexExpr::SquareOfNonneg { child: Box::new(child) })
    }

    /// Square of a child known nonnegative by construction (e.g. shifted by
    /// its infimum); skips the sample sweep.
    pub fn square_of_nonneg_unchecked(child: ConvexExpr) -> Self {
        ConvexExpr::SquareOfNonneg { child: Box::new(child) }
    }

    pub fn norm2_affine(m: Matrix, d: Vec<f64>) -> Result<Self> {
        if m.nrows() != d.len() {
            return Err(Error::Argument("norm2 dimension mismatch".into()));
        }
        Ok(ConvexExpr::Norm2Affine { m, d })
    }

    /// child(T x + t0).
    pub fn affine_map(t: Matrix, t0: Vec<f64>, child: ConvexExpr) -> Result<Self> {
        if t.nrows() != t0.len() {
            return Err(Error::Argument("affine map dimension mismatch".into()));
        }
        Ok(ConvexExpr::AffineMap { t, t0, child: Box::new(child) })
    }

    pub fn cvar_envelope(
        alpha: f64,
        probs: Vec<f64>,
        pieces: Vec<(ConvexExpr, ConvexExpr)>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
            return Err(Error::Argument(format!("alpha {alpha} outside (0,1)")));
        }
        check_probs(&probs)?;
        if probs.len() != pieces.len() || pieces.is_empty() {
            return Err(Error::Argument("scenario count mismatch".into()));
        }
        Ok(ConvexExpr::CvarEnvelope { alpha, probs, pieces })
    }

    pub fn neg_oce_envelope(
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        probs: Vec<f64>,
        pieces: Vec<(ConvexExpr, ConvexExpr)>,
    ) -> Result<Self> {
        if slopes.len() != intercepts.len() || slopes.is_empty() {
            return Err(Error::Argument("utility pieces malformed".into()));
        }
        if slopes.iter().any(|&a| a < 0.0) {
            return Err(Error::Argument("utility slopes must be nonnegative".into()));
        }
        check_probs(&probs)?;
        if probs.len() != pieces.len() || pieces.is_empty() {
            return Err(Error::Argument("scenario count mismatch".into()));
        }
        Ok(ConvexExpr::NegOceEnvelope { slopes, intercepts, probs, pieces })
    }

    pub fn certified(
        label: impl Into<String>,
        eval: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        ConvexExpr::Certified { label: label.into(), eval: EvalFn(Arc::new(eval)) }
    }

    /// Exact evaluation at a point. Envelope nodes run their breakpoint
    /// scan; see [`module docs`](self) for why the scan is exact.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            ConvexExpr::Affine { a, c } => {
                if a.len() != x.len() {
                    return Err(Error::Argument("point dimension mismatch".into()));
                }
                Ok(linalg::dot(a, x) + c)
            }
            ConvexExpr::Sum { children } => {
                let mut s = 0.0;
                for ch in children {
                    s += ch.eval(x)?;
                }
                Ok(s)
            }
            ConvexExpr::NonnegScale { c, child } => Ok(c * child.eval(x)?),
            ConvexExpr::MaxOf { children } => {
                let mut best = f64::NEG_INFINITY;
                for ch in children {
                    best = best.max(ch.eval(x)?);
                }
                Ok(best)
            }
            ConvexExpr::QuadForm { a_mat, a, c } => {
                let ax = a_mat.matvec(x);
                Ok(0.5 * linalg::dot(x, &ax) + linalg::dot(a, x) + c)
            }
            ConvexExpr::SquareOfNonneg { child } => {
                let v = child.eval(x)?;
                Ok(v * v)
            }
            ConvexExpr::Norm2Affine { m, d } => {
                let mut v = m.matvec(x);
                for (vi, di) in v.iter_mut().zip(d) {
                    *vi += di;
                }
                Ok(linalg::norm2(&v))
            }
            ConvexExpr::AffineMap { t, t0, child } => {
                let mut y = t.matvec(x);
                for (yi, ti) in y.iter_mut().zip(t0) {
                    *yi += ti;
                }
                child.eval(&y)
            }
            ConvexExpr::CvarEnvelope { alpha, probs, pieces } => {
                let inv = 1.0 / (1.0 - alpha);
                let mut pv = Vec::with_capacity(pieces.len());
                let mut qv = Vec::with_capacity(pieces.len());
                for (pe, qe) in pieces {
                    pv.push(pe.eval(x)?);
                    qv.push(qe.eval(x)?);
                }
                let phi = |t: f64| -> f64 {
                    let mut s = 0.0;
                    for ((p, pvs), qvs) in probs.iter().zip(&pv).zip(&qv) {
                        s += p * (pvs - t).max(*qvs);
                    }
                    t + inv * s
                };
                let mut candidates: Vec<f64> =
                    pv.iter().zip(&qv).map(|(p, q)| p - q).collect();
                candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
                scan_minimum(&candidates, phi, "cvar envelope")
            }
            ConvexExpr::NegOceEnvelope { slopes, intercepts, probs, pieces } => {
                let total_slope: f64 = slopes.iter().sum();
                let mut pv = Vec::with_capacity(pieces.len());
                let mut qv = Vec::with_capacity(pieces.len());
                for (pe, qe) in pieces {
                    pv.push(pe.eval(x)?);
                    qv.push(qe.eval(x)?);
                }
                let phi = |eta: f64| -> f64 {
                    let mut s = 0.0;
                    for ((p, pvs), qvs) in probs.iter().zip(&pv).zip(&qv) {
                        let mut inner = f64::NEG_INFINITY;
                        for (ai, alphai) in slopes.iter().zip(intercepts) {
                            let v = (total_slope - ai) * pvs + ai * (qvs + eta) - alphai;
                            inner = inner.max(v);
                        }
                        s += p * inner;
                    }
                    s - eta
                };
                let mut candidates = Vec::new();
                for s in 0..pieces.len() {
                    for i in 0..slopes.len() {
                        for j in 0..slopes.len() {
                            if (slopes[i] - slopes[j]).abs() > 1e-12 {
                                candidates.push(
                                    pv[s] - qv[s]
                                        + (intercepts[i] - intercepts[j]) / (slopes[i] - slopes[j]),
                                );
                            }
                        }
                    }
                }
                if candidates.is_empty() {
                    candidates.push(0.0);
                }
                candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
                candidates.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
                scan_minimum(&candidates, phi, "oce envelope")
            }
            ConvexExpr::Certified { eval, .. } => (eval.0)(x),
        }
    }

    /// Human-oriented node label, used in reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ConvexExpr::Affine { .. } => "affine",
            ConvexExpr::Sum { .. } => "sum",
            ConvexExpr::NonnegScale { .. } => "scale",
            ConvexExpr::MaxOf { .. } => "max",
            ConvexExpr::QuadForm { .. } => "quad",
            ConvexExpr::SquareOfNonneg { .. } => "square_nonneg",
            ConvexExpr::Norm2Affine { .. } => "norm2",
            ConvexExpr::AffineMap { .. } => "affine_map",
            ConvexExpr::CvarEnvelope { .. } => "cvar_envelope",
            ConvexExpr::NegOceEnvelope { .. } => "neg_oce_envelope",
            ConvexExpr::Certified { .. } => "certified",
        }
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|&p| p <= 0.0) {
        return Err(Error::Argument("probabilities must be positive".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Argument(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Minimum of a piecewise-linear convex function over its breakpoints, with
/// first-minimal-index tie-breaking and sentinel probes one unit beyond each
/// extreme breakpoint to detect an unbounded auxiliary direction.
fn scan_minimum(candidates: &[f64], phi: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    debug_assert!(!candidates.is_empty());
    let mut best = f64::INFINITY;
    for &t in candidates {
        let v = phi(t);
        if v < best {
            best = v;
        }
    }
    let lo = candidates[0] - 1.0;
    let hi = candidates[candidates.len() - 1] + 1.0;
    let slack = 1e-9 * (1.0 + best.abs());
    if phi(lo) < best - slack || phi(hi) < best - slack {
        return Err(Error::UnboundedAuxiliary(format!(
            "{what}: auxiliary objective decreases beyond the breakpoint range"
        )));
    }
    Ok(best)
}

/// Evaluate an expression at a point (operation-style free function).
pub fn evaluate(expr: &ConvexExpr, x: &[f64]) -> Result<f64> {
    expr.eval(x)
}

// ---------------------------------------------------------------------------
// infimum estimation
// ---------------------------------------------------------------------------

/// Numerical lower estimate of the infimum of `f` over a bounded domain:
/// a dense grid pass followed by coordinate pattern descent from the best
/// grid point. Not certified; callers that need strict positivity add their
/// own margin.
pub fn infimum_estimate_fn(
    f: impl Fn(&[f64]) -> Result<f64>,
    domain: &Domain,
) -> Result<f64> {
    if !domain.is_bounded()? {
        return Err(Error::UnboundedDomain("infimum estimate needs a bounded domain".into()));
    }
    let pts = domain.grid(1000)?;
    if pts.is_empty() {
        return Err(Error::EmptyPolyhedron("domain has no grid points".into()));
    }
    let mut best_x = pts[0].clone();
    let mut best = f(&best_x)?;
    for p in &pts[1..] {
        let v = f(p)?;
        if v < best {
            best = v;
            best_x = p.clone();
        }
    }
    // Pattern descent.
    let (lo, hi) = domain.bounding_box()?;
    let n = domain.dimension();
    let mut step: f64 = (0..n).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) / 10.0;
    if step <= 0.0 {
        return Ok(best);
    }
    while step > 1e-10 {
        let mut improved = false;
        for ax in 0..n {
            for dir in [-1.0, 1.0] {
                let mut cand = best_x.clone();
                cand[ax] = (cand[ax] + dir * step).clamp(lo[ax], hi[ax]);
                if !domain.contains(&cand, polyhedral::FEAS_TOL) {
                    continue;
                }
                let v = f(&cand)?;
                if v < best {
                    best = v;
                    best_x = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Infimum estimate of a convex expression over a bounded domain.
pub fn infimum_estimate(expr: &ConvexExpr, domain: &Domain) -> Result<f64> {
    infimum_estimate_fn(|x| expr.eval(x), domain)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

impl Serialize for ConvexExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ConvexExpr::Affine { a, c } => {
                let mut m = s.serialize_map(Some(3))?;
                m.serialize_entry("kind", "affine")?;
                m.serialize_entry("a", a)?;
                m.serialize_entry("c", c)?;
                m.end()
            }
            ConvexExpr::Sum { children } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("kind", "sum")?;
                m.serialize_entry("children", children)?;
                m.end()
            }
            ConvexExpr::NonnegScale { c, child } => {
                let mut m = s.serialize_map(Some(3))?;
                m.serialize_entry("kind", "scale")?;
                m.serialize_entry("c", c)?;
                m.serialize_entry("child", child)?;
                m.end()
            }
            ConvexExpr::MaxOf { children } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("kind", "max")?;
                m.serialize_entry("children", children)?;
                m.end()
            }
            ConvexExpr::QuadForm { a_mat, a, c } => {
                let mut m = s.serialize_map(Some(4))?;
                m.serialize_entry("kind", "quad")?;
                m.serialize_entry("A", a_mat)?;
                m.serialize_entry("a", a)?;
                m.serialize_entry("c", c)?;
                m.end()
            }
            ConvexExpr::SquareOfNonneg { child } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("kind", "square_nonneg")?;
                m.serialize_entry("child", child)?;
                m.end()
            }
            ConvexExpr::Norm2Affine { m: mat, d } => {
                let mut m = s.serialize_map(Some(3))?;
                m.serialize_entry("kind", "norm2")?;
                m.serialize_entry("M", mat)?;
                m.serialize_entry("d", d)?;
                m.end()
            }
            ConvexExpr::AffineMap { t, t0, child } => {
                let mut m = s.serialize_map(Some(4))?;
                m.serialize_entry("kind", "affine_map")?;
                m.serialize_entry("T", t)?;
                m.serialize_entry("t0", t0)?;
                m.serialize_entry("child", child)?;
                m.end()
            }
            ConvexExpr::CvarEnvelope { alpha, probs, pieces } => {
                let mut m = s.serialize_map(Some(4))?;
                m.serialize_entry("kind", "cvar_envelope")?;
                m.serialize_entry("alpha", alpha)?;
                m.serialize_entry("p", probs)?;
                m.serialize_entry("scenarios", &PiecesSer(pieces))?;
                m.end()
            }
            ConvexExpr::NegOceEnvelope { slopes, intercepts, probs, pieces } => {
                let mut m = s.serialize_map(Some(5))?;
                m.serialize_entry("kind", "neg_oce_envelope")?;
                m.serialize_entry("a", slopes)?;
                m.serialize_entry("alpha", intercepts)?;
                m.serialize_entry("p", probs)?;
                m.serialize_entry("scenarios", &PiecesSer(pieces))?;
                m.end()
            }
            ConvexExpr::Certified { label, .. } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("kind", "certified")?;
                m.serialize_entry("label", label)?;
                m.end()
            }
        }
    }
}

struct PiecesSer<'a>(&'a [(ConvexExpr, ConvexExpr)]);

impl Serialize for PiecesSer<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for (p, q) in self.0 {
            #[derive(Serialize)]
            struct Pair<'b> {
                #[serde(rename = "pExpr")]
                p: &'b ConvexExpr,
                #[serde(rename = "qExpr")]
                q: &'b ConvexExpr,
            }
            seq.serialize_element(&Pair { p, q })?;
        }
        seq.end()
    }
}

/// Input grammar for expression files. Envelope and certified nodes are
/// construction-only and deliberately absent.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ExprJson {
    Affine { a: Vec<f64>, c: f64 },
    Sum { children: Vec<ExprJson> },
    Scale { c: f64, child: Box<ExprJson> },
    Max { children: Vec<ExprJson> },
    Quad {
        #[serde(rename = "A")]
        a_mat: Matrix,
        a: Vec<f64>,
        c: f64,
    },
    Norm2 {
        #[serde(rename = "M")]
        m: Matrix,
        d: Vec<f64>,
    },
    SquareNonneg { child: Box<ExprJson> },
}

impl ExprJson {
    fn build(self) -> Result<ConvexExpr> {
        Ok(match self {
            ExprJson::Affine { a, c } => ConvexExpr::affine(a, c),
            ExprJson::Sum { children } => {
                ConvexExpr::sum(children.into_iter().map(|c| c.build()).collect::<Result<_>>()?)?
            }
            ExprJson::Scale { c, child } => ConvexExpr::scale(c, child.build()?)?,
            ExprJson::Max { children } => {
                ConvexExpr::max_of(children.into_iter().map(|c| c.build()).collect::<Result<_>>()?)?
            }
            ExprJson::Quad { a_mat, a, c } => ConvexExpr::quad_form(a_mat, a, c)?,
            ExprJson::Norm2 { m, d } => ConvexExpr::norm2_affine(m, d)?,
            ExprJson::SquareNonneg { child } => {
                // Nonnegativity on the eventual working domain is certified
                // by the verification pass, not at parse time.
                ConvexExpr::square_of_nonneg_unchecked(child.build()?)
            }
        })
    }
}

impl<'de> Deserialize<'de> for ConvexExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ExprJson::deserialize(d)?;
        j.build().map_err(|e| D::Error::custom(e.to_string()))
    }
}
