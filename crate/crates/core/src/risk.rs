//! Discrete-scenario composite risk and deviation functionals.
//!
//! The random functional is Z(x; s) = p_s(x) - q_s(x) with convex pieces on
//! a shared domain. Every measure here comes in two independent forms:
//!
//! - a dc constructor that assembles an explicit (g, h) decomposition from
//!   the convex pieces (envelope nodes for CVaR and the certainty
//!   equivalent, vertex enumeration of the fixed polytopes `W` and `Phi`
//!   for the quantile-type measures, the squared/norm identities for the
//!   moment measures), and
//! - [`risk_oracle`], a direct breakpoint/moment scan over the scenario
//!   values that never touches the dc machinery.
//!
//! The test suites drive both routes against each other; that is the whole
//! certification story for this module.

use serde::{Deserialize, Serialize};

use crate::dc::{self, DcFunction, Extremum};
use crate::error::{Error, Result};
use crate::expr::{ConvexExpr, Domain};
use crate::linalg::{self, Matrix};
use crate::polyhedral::{self, Polyhedron};

/// Vertex enumeration caps: scenarios for `W`, pieces x scenarios for `Phi`.
pub const MAX_W_SCENARIOS: usize = 12;
pub const MAX_PHI_VARS: usize = 12;

const TIE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// scenario data
// ---------------------------------------------------------------------------

/// Finite sample space: positive probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScenarioSet {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ScenarioSet {
    type Error = String;
    fn try_from(p: Vec<f64>) -> std::result::Result<Self, String> {
        ScenarioSet::new(p).map_err(|e| e.to_string())
    }
}

impl From<ScenarioSet> for Vec<f64> {
    fn from(s: ScenarioSet) -> Vec<f64> {
        s.probs
    }
}

impl ScenarioSet {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Argument("need at least one scenario".into()));
        }
        if probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::Argument("probabilities must be positive".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > crate::expr::PROB_TOL {
            return Err(Error::Argument(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(s: usize) -> Self {
        Self { probs: vec![1.0 / s as f64; s] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Z(x; s) = p_s(x) - q_s(x): per-scenario dc pieces on a shared domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RfJson", into = "RfJson")]
pub struct RandomDcFunctional {
    scenarios: ScenarioSet,
    pieces: Vec<(ConvexExpr, ConvexExpr)>,
    domain: Domain,
}

#[derive(Serialize, Deserialize)]
struct ScenJson {
    #[serde(rename = "pExpr")]
    p_expr: ConvexExpr,
    #[serde(rename = "qExpr")]
    q_expr: ConvexExpr,
}

#[derive(Serialize, Deserialize)]
struct RfJson {
    p: Vec<f64>,
    scenarios: Vec<ScenJson>,
    domain: Domain,
}

impl TryFrom<RfJson> for RandomDcFunctional {
    type Error = String;
    fn try_from(j: RfJson) -> std::result::Result<Self, String> {
        let scen = ScenarioSet::new(j.p).map_err(|e| e.to_string())?;
        let pieces = j.scenarios.into_iter().map(|s| (s.p_expr, s.q_expr)).collect();
        RandomDcFunctional::new(scen, pieces, j.domain).map_err(|e| e.to_string())
    }
}

impl From<RandomDcFunctional> for RfJson {
    fn from(rf: RandomDcFunctional) -> RfJson {
        RfJson {
            p: rf.scenarios.probs.clone(),
            scenarios: rf
                .pieces
                .into_iter()
                .map(|(p_expr, q_expr)| ScenJson { p_expr, q_expr })
                .collect(),
            domain: rf.domain,
        }
    }
}

impl RandomDcFunctional {
    pub fn new(
        scenarios: ScenarioSet,
        pieces: Vec<(ConvexExpr, ConvexExpr)>,
        domain: Domain,
    ) -> Result<Self> {
        if pieces.len() != scenarios.len() {
            return Err(Error::Argument("scenario/piece count mismatch".into()));
        }
        Ok(Self { scenarios, pieces, domain })
    }

    /// Constant random variable taking value z_s in scenario s.
    pub fn constant(scenarios: ScenarioSet, values: &[f64], domain: Domain) -> Result<Self> {
        let dim = domain.dimension();
        let pieces = values
            .iter()
            .map(|&z| (ConvexExpr::constant(dim, z), ConvexExpr::zero(dim)))
            .collect();
        Self::new(scenarios, pieces, domain)
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    pub fn probs(&self) -> &[f64] {
        self.scenarios.probs()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn pieces(&self) -> &[(ConvexExpr, ConvexExpr)] {
        &self.pieces
    }

    /// Z(x; s).
    pub fn scenario_value(&self, s: usize, x: &[f64]) -> Result<f64> {
        let (p, q) = &self.pieces[s];
        Ok(p.eval(x)? - q.eval(x)?)
    }

    /// All scenario values at x.
    pub fn values_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.scenario_count()).map(|s| self.scenario_value(s, x)).collect()
    }

    /// The scenario-s functional as a standalone dc function.
    pub fn scenario_dc(&self, s: usize) -> DcFunction {
        let (p, q) = &self.pieces[s];
        DcFunction::new(p.clone(), q.clone(), self.domain.clone())
    }

    /// Pointwise negation: -Z = q - p.
    pub fn negated(&self) -> Self {
        Self {
            scenarios: self.scenarios.clone(),
            pieces: self.pieces.iter().map(|(p, q)| (q.clone(), p.clone())).collect(),
            domain: self.domain.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// piecewise linear utility
// ---------------------------------------------------------------------------

/// Concave piecewise linear utility u(t) = min_i (a_i t + alpha_i), with
/// a_i >= 0, u(0) = 0 (min intercept is zero) and 1 in the subdifferential
/// at zero (the pieces active at t = 0 straddle slope one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityJson", into = "UtilityJson")]
pub struct PwlUtility {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct UtilityJson {
    a: Vec<f64>,
    alpha: Vec<f64>,
}

impl TryFrom<UtilityJson> for PwlUtility {
    type Error = String;
    fn try_from(j: UtilityJson) -> std::result::Result<Self, String> {
        PwlUtility::new(j.a, j.alpha).map_err(|e| e.to_string())
    }
}

impl From<PwlUtility> for UtilityJson {
    fn from(u: PwlUtility) -> UtilityJson {
        UtilityJson { a: u.slopes, alpha: u.intercepts }
    }
}

impl PwlUtility {
    pub fn new(slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.is_empty() || slopes.len() != intercepts.len() {
            return Err(Error::Argument("utility pieces malformed".into()));
        }
        if slopes.iter().any(|&a| a < 0.0) {
            return Err(Error::Argument("utility slopes must be nonnegative".into()));
        }
        let min_intercept = intercepts.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_intercept.abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "utility must satisfy u(0) = 0; min intercept is {min_intercept}"
            )));
        }
        let active: Vec<f64> = slopes
            .iter()
            .zip(&intercepts)
            .filter(|(_, al)| al.abs() <= 1e-12)
            .map(|(a, _)| *a)
            .collect();
        let amin = active.iter().cloned().fold(f64::INFINITY, f64::min);
        let amax = active.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if amin > 1.0 + 1e-12 || amax < 1.0 - 1e-12 {
            return Err(Error::Argument(
                "pieces active at zero must straddle slope one".into(),
            ));
        }
        Ok(Self { slopes, intercepts })
    }

    /// The utility whose certainty equivalent reproduces -CVaR_alpha(-Z):
    /// u(t) = (1 / (1 - alpha)) min(0, t).
    pub fn cvar_equivalent(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Argument(format!("alpha {alpha} outside (0,1)")));
        }
        Self::new(vec![0.0, 1.0 / (1.0 - alpha)], vec![0.0, 0.0])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(a, al)| a * t + al)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn piece_count(&self) -> usize {
        self.slopes.len()
    }

    /// Kink abscissas of u: intersections of piece pairs with distinct slopes.
    fn kinks(&self) -> Vec<f64> {
        let mut ks = Vec::new();
        for i in 0..self.slopes.len() {
            for j in (i + 1)..self.slopes.len() {
                let da = self.slopes[i] - self.slopes[j];
                if da.abs() > 1e-12 {
                    ks.push((self.intercepts[j] - self.intercepts[i]) / da);
                }
            }
        }
        ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        ks
    }
}

// ---------------------------------------------------------------------------
// the fixed polytopes
// ---------------------------------------------------------------------------

/// The polytope whose extreme points link VaR to CVaR:
/// W = { v >= 0 : [I - p 1^T / (1 - alpha)] v + p / (1 - alpha) <= 0 }.
/// It depends only on (alpha, p), never on the scenario values.
#[derive(Debug, Clone)]
pub struct WPolytope {
    pub polyhedron: Polyhedron,
    pub vertices: Vec<Vec<f64>>,
    pub rays: Vec<Vec<f64>>,
}

impl WPolytope {
    pub fn new(alpha: f64, probs: &[f64]) -> Result<Self> {
        let s = probs.len();
        if s > MAX_W_SCENARIOS {
            return Err(Error::Scale(format!(
                "vertex enumeration of W capped at {MAX_W_SCENARIOS} scenarios (got {s})"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Argument(format!("alpha {alpha} outside (0,1)")));
        }
        let inv = 1.0 / (1.0 - alpha);
        let mut rows = Vec::with_capacity(2 * s);
        let mut rhs = Vec::with_capacity(2 * s);
        for i in 0..s {
            let mut row = vec![0.0; s];
            for (j, item) in row.iter_mut().enumerate() {
                *item = if i == j { 1.0 - probs[i] * inv } else { -probs[i] * inv };
            }
            rows.push(row);
            rhs.push(-probs[i] * inv);
        }
        for i in 0..s {
            let mut row = vec![0.0; s];
            row[i] = -1.0;
            rows.push(row);
            rhs.push(0.0);
        }
        let polyhedron = Polyhedron::new(Matrix::from_rows(&rows)?, rhs)?;
        let vertices = polyhedral::enumerate_vertices(&polyhedron)?.vertices;
        let cone = Polyhedron::new(polyhedron.a.clone(), vec![0.0; polyhedron.num_rows()])?;
        let rays = polyhedral::enumerate_extreme_rays(&cone)?;
        Ok(Self { polyhedron, vertices, rays })
    }
}

/// The polytope whose extreme points link the largest certainty-equivalent
/// maximizer to the certainty equivalent:
/// Phi = { phi >= 0 : sum_{i,s'} (p_s a_i - delta_{s's}) phi_{i,s'} = p_s }.
/// Variables are flattened piece-major: phi[(i, s')] = phi[i * S + s'].
#[derive(Debug, Clone)]
pub struct PhiPolytope {
    pub polyhedron: Polyhedron,
    pub vertices: Vec<Vec<f64>>,
    pub rays: Vec<Vec<f64>>,
    pub piece_count: usize,
    pub scenario_count: usize,
}

impl PhiPolytope {
    pub fn new(utility: &PwlUtility, probs: &[f64]) -> Result<Self> {
        let s = probs.len();
        let i_count = utility.piece_count();
        let nvars = i_count * s;
        if nvars > MAX_PHI_VARS {
            return Err(Error::Scale(format!(
                "vertex enumeration of Phi capped at {MAX_PHI_VARS} variables (got {nvars})"
            )));
        }
        let mut rows = Vec::with_capacity(s + nvars);
        let mut rhs = Vec::with_capacity(s + nvars);
        for srow in 0..s {
            let mut row = vec![0.0; nvars];
            for i in 0..i_count {
                for sp in 0..s {
                    let delta = if sp == srow { 1.0 } else { 0.0 };
                    row[i * s + sp] = probs[srow] * utility.slopes()[i] - delta;
                }
            }
            rows.push(row);
            rhs.push(probs[srow]);
        }
        for v in 0..nvars {
            let mut row = vec![0.0; nvars];
            row[v] = -1.0;
            rows.push(row);
            rhs.push(0.0);
        }
        let eq_rows: Vec<usize> = (0..s).collect();
        let polyhedron = Polyhedron::with_equalities(Matrix::from_rows(&rows)?, rhs, eq_rows)?;
        let vertices = polyhedral::enumerate_vertices(&polyhedron)?.vertices;
        let cone = Polyhedron::with_equalities(
            polyhedron.a.clone(),
            vec![0.0; polyhedron.num_rows()],
            polyhedron.eq_rows.clone(),
        )?;
        let rays = polyhedral::enumerate_extreme_rays(&cone)?;
        Ok(Self { polyhedron, vertices, rays, piece_count: i_count, scenario_count: s })
    }
}

// ---------------------------------------------------------------------------
// dc constructors
// ---------------------------------------------------------------------------

/// E Z(x) = sum_s p_s (p_s(x) - q_s(x)).
pub fn expectation_dc(rf: &RandomDcFunctional) -> Result<DcFunction> {
    let dcs: Vec<DcFunction> = (0..rf.scenario_count()).map(|s| rf.scenario_dc(s)).collect();
    let terms: Vec<(f64, &DcFunction)> =
        rf.probs().iter().copied().zip(dcs.iter()).collect();
    dc::combine_linear(&terms)
}

/// CVaR_alpha(Z(x)): the minuend is the joint envelope
/// min_t [t + (1/(1-alpha)) sum_s p_s max(p_s(x) - t, q_s(x))] and the
/// subtrahend is (1/(1-alpha)) E q(x).
pub fn cvar_dc(rf: &RandomDcFunctional, alpha: f64) -> Result<DcFunction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0,1)")));
    }
    let minuend = ConvexExpr::cvar_envelope(alpha, rf.probs().to_vec(), rf.pieces().to_vec())?;
    let inv = 1.0 / (1.0 - alpha);
    let mut q_terms = Vec::with_capacity(rf.scenario_count());
    for (s, (_, q)) in rf.pieces().iter().enumerate() {
        q_terms.push(ConvexExpr::scale(inv * rf.probs()[s], q.clone())?);
    }
    let subtrahend = ConvexExpr::sum(q_terms)?;
    Ok(DcFunction::new(minuend, subtrahend, rf.domain().clone()))
}

/// Deterministic probe points used for the attainment diagnostics.
fn probe_points(domain: &Domain, count: usize) -> Result<Vec<Vec<f64>>> {
    let sampler = domain.sampler()?;
    let mut rng = crate::rng::SplitMix64::new(0x0b5e55ed);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// VaR_alpha(Z(x)) via the extreme points v_j of `W`:
/// VaR = CVaR + max_j sum_s [Z_s(x) - CVaR(x)] v_j[s].
pub fn var_dc(rf: &RandomDcFunctional, alpha: f64) -> Result<DcFunction> {
    let w = WPolytope::new(alpha, rf.probs())?;
    let cvar = cvar_dc(rf, alpha)?;
    if w.vertices.is_empty() {
        return Err(Error::EmptyPolyhedron("W has no extreme points".into()));
    }
    // Attainment diagnostic: along every recession ray of W the linear
    // objective sum_s [Z_s - CVaR] r_s must not increase, otherwise the
    // vertex maximum would understate an unbounded program.
    let probes = probe_points(rf.domain(), 8)?;
    for x in &probes {
        let z = rf.values_at(x)?;
        let c = cvar.value_unchecked(x)?;
        for r in &w.rays {
            let drift: f64 = z.iter().zip(r).map(|(zs, rs)| (zs - c) * rs).sum();
            if drift > 1e-8 * (1.0 + c.abs()) {
                return Err(Error::UnboundedAuxiliary(format!(
                    "objective increases along a recession ray of W at x = {x:?}"
                )));
            }
        }
    }
    let scenario_dcs: Vec<DcFunction> =
        (0..rf.scenario_count()).map(|s| rf.scenario_dc(s)).collect();
    let mut branch_fns = Vec::with_capacity(w.vertices.len());
    for v in &w.vertices {
        let vsum: f64 = v.iter().sum();
        let mut terms: Vec<(f64, &DcFunction)> = Vec::with_capacity(v.len() + 1);
        for (s, dcf) in scenario_dcs.iter().enumerate() {
            terms.push((v[s], dcf));
        }
        terms.push((-vsum, &cvar));
        branch_fns.push(dc::combine_linear(&terms)?);
    }
    let inner = dc::pointwise_extremum(Extremum::Max, &branch_fns)?;
    dc::combine_linear(&[(1.0, &cvar), (1.0, &inner)])
}

/// Certainty equivalent O_u(Z(x)) for a concave piecewise linear utility:
/// minuend (sum_i a_i) E p(x), subtrahend the negated eta-envelope.
pub fn oce_dc(rf: &RandomDcFunctional, utility: &PwlUtility) -> Result<DcFunction> {
    let total_slope: f64 = utility.slopes().iter().sum();
    let mut p_terms = Vec::with_capacity(rf.scenario_count());
    for (s, (p, _)) in rf.pieces().iter().enumerate() {
        p_terms.push(ConvexExpr::scale(rf.probs()[s] * total_slope, p.clone())?);
    }
    let minuend = ConvexExpr::sum(p_terms)?;
    let subtrahend = ConvexExpr::neg_oce_envelope(
        utility.slopes().to_vec(),
        utility.intercepts().to_vec(),
        rf.probs().to_vec(),
        rf.pieces().to_vec(),
    )?;
    // Attainment check: the envelope scan raises if the auxiliary objective
    // escapes past its sentinels.
    for x in probe_points(rf.domain(), 8)? {
        subtrahend.eval(&x)?;
    }
    Ok(DcFunction::new(minuend, subtrahend, rf.domain().clone()))
}

/// Largest certainty-equivalent maximizer m_u(Z(x)) via the extreme points
/// of `Phi`:
/// m_u = O_u + min_j sum_{i,s} { a_i [Z_s(x) - O_u(x)] + alpha_i } phi_j[i,s].
pub fn mu_dc(rf: &RandomDcFunctional, utility: &PwlUtility) -> Result<DcFunction> {
    let phi = PhiPolytope::new(utility, rf.probs())?;
    let oce = oce_dc(rf, utility)?;
    if phi.vertices.is_empty() {
        return Err(Error::EmptyPolyhedron("Phi has no extreme points".into()));
    }
    let s_count = rf.scenario_count();
    let i_count = utility.piece_count();
    // Attainment diagnostic along the recession rays of Phi (min side).
    let probes = probe_points(rf.domain(), 8)?;
    for x in &probes {
        let z = rf.values_at(x)?;
        let o = oce.value_unchecked(x)?;
        for r in &phi.rays {
            let mut drift = 0.0;
            for i in 0..i_count {
                for s in 0..s_count {
                    drift += (utility.slopes()[i] * (z[s] - o) + utility.intercepts()[i])
                        * r[i * s_count + s];
                }
            }
            if drift < -1e-8 * (1.0 + o.abs()) {
                return Err(Error::UnboundedAuxiliary(format!(
                    "objective decreases along a recession ray of Phi at x = {x:?}"
                )));
            }
        }
    }
    let scenario_dcs: Vec<DcFunction> = (0..s_count).map(|s| rf.scenario_dc(s)).collect();
    let mut branch_fns = Vec::with_capacity(phi.vertices.len());
    for vert in &phi.vertices {
        // sum_{i,s} phi[i,s] (a_i Z_s + alpha_i) - (sum_{i,s} phi[i,s] a_i) O_u
        let mut coef_z = vec![0.0; s_count];
        let mut coef_oce = 0.0;
        let mut constant = 0.0;
        for i in 0..i_count {
            for s in 0..s_count {
                let w = vert[i * s_count + s];
                coef_z[s] += utility.slopes()[i] * w;
                coef_oce -= utility.slopes()[i] * w;
                constant += utility.intercepts()[i] * w;
            }
        }
        let const_fn = DcFunction::from_convex(
            ConvexExpr::constant(rf.domain().dimension(), constant),
            rf.domain().clone(),
        );
        let mut terms: Vec<(f64, &DcFunction)> = Vec::with_capacity(s_count + 2);
        for (s, dcf) in scenario_dcs.iter().enumerate() {
            terms.push((coef_z[s], dcf));
        }
        terms.push((coef_oce, &oce));
        terms.push((1.0, &const_fn));
        branch_fns.push(dc::combine_linear(&terms)?);
    }
    let inner = dc::pointwise_extremum(Extremum::Min, &branch_fns)?;
    dc::combine_linear(&[(1.0, &oce), (1.0, &inner)])
}

/// Shift each scenario's pieces so both are nonnegative on the domain
/// (same shift on p and q leaves Z unchanged).
fn shifted_pieces(rf: &RandomDcFunctional) -> Result<Vec<(ConvexExpr, ConvexExpr)>> {
    let dim = rf.domain().dimension();
    let mut out = Vec::with_capacity(rf.scenario_count());
    for (p, q) in rf.pieces() {
        let inf_p = crate::expr::infimum_estimate(p, rf.domain())?;
        let inf_q = crate::expr::infimum_estimate(q, rf.domain())?;
        let c = (-inf_p).max(-inf_q).max(0.0) + dc::SHIFT_MARGIN;
        let shift = ConvexExpr::constant(dim, c);
        out.push((
            ConvexExpr::sum(vec![p.clone(), shift.clone()])?,
            ConvexExpr::sum(vec![q.clone(), shift])?,
        ));
    }
    Ok(out)
}

/// Variance of Z(x) through the squared-difference identity applied to the
/// shifted nonnegative pieces:
/// sigma^2 = { 2 E[p^2 + q^2] + (E p + E q)^2 }
///           - { E[(p + q)^2] + 2 [(E p)^2 + (E q)^2] }.
pub fn variance_dc(rf: &RandomDcFunctional) -> Result<DcFunction> {
    let domain = rf.domain().clone();
    let probs = rf.probs();
    let pieces = shifted_pieces(rf)?;
    let sq = |e: ConvexExpr| ConvexExpr::square_of_nonneg(e, &domain);

    // E[p^2 + q^2]
    let mut e_sq_terms = Vec::new();
    // E[(p+q)^2]
    let mut e_sum_sq_terms = Vec::new();
    // E p + E q, E p, E q as expression sums
    let mut ep_terms = Vec::new();
    let mut eq_terms = Vec::new();
    for (s, (p, q)) in pieces.iter().enumerate() {
        e_sq_terms.push(ConvexExpr::scale(probs[s], sq(p.clone())?)?);
        e_sq_terms.push(ConvexExpr::scale(probs[s], sq(q.clone())?)?);
        e_sum_sq_terms
            .push(ConvexExpr::scale(probs[s], sq(ConvexExpr::sum(vec![p.clone(), q.clone()])?)?)?);
        ep_terms.push(ConvexExpr::scale(probs[s], p.clone())?);
        eq_terms.push(ConvexExpr::scale(probs[s], q.clone())?);
    }
    let ep = ConvexExpr::sum(ep_terms)?;
    let eq = ConvexExpr::sum(eq_terms)?;
    let ep_plus_eq_sq = sq(ConvexExpr::sum(vec![ep.clone(), eq.clone()])?)?;
    let ep_sq = sq(ep)?;
    let eq_sq = sq(eq)?;

    let g = ConvexExpr::sum(vec![
        ConvexExpr::scale(2.0, ConvexExpr::sum(e_sq_terms)?)?,
        ep_plus_eq_sq,
    ])?;
    let h = ConvexExpr::sum(vec![
        ConvexExpr::sum(e_sum_sq_terms)?,
        ConvexExpr::scale(2.0, ConvexExpr::sum(vec![ep_sq, eq_sq])?)?,
    ])?;
    Ok(DcFunction::new(g, h, domain))
}

/// Standard deviation as the Euclidean norm of the centered, sqrt-weighted
/// scenario vector: sigma = || ( sqrt(p_s) [Z_s - E Z] )_s ||_2.
pub fn std_dc(rf: &RandomDcFunctional) -> Result<DcFunction> {
    let s_count = rf.scenario_count();
    let probs = rf.probs();
    let scenario_dcs: Vec<DcFunction> = (0..s_count).map(|s| rf.scenario_dc(s)).collect();
    let mut components = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let w = probs[s].sqrt();
        let mut terms: Vec<(f64, &DcFunction)> = Vec::with_capacity(s_count);
        for (sp, dcf) in scenario_dcs.iter().enumerate() {
            let delta = if s == sp { 1.0 } else { 0.0 };
            terms.push((w * (delta - probs[sp]), dcf));
        }
        components.push(dc::combine_linear(&terms)?);
    }
    dc::norm2(&components)
}

/// Deviation family kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationKind {
    /// E [Z - c]^2
    Sq,
    /// sqrt(E [Z - c]^2)
    SqrtSq,
    /// E [Z - c]_+
    Pos,
    /// E |Z - c|
    Abs,
}

/// Statistical center for deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CenterSpec {
    Mean,
    Cvar(f64),
    Var(f64),
}

fn center_dc(rf: &RandomDcFunctional, center: CenterSpec) -> Result<DcFunction> {
    match center {
        CenterSpec::Mean => expectation_dc(rf),
        CenterSpec::Cvar(a) => cvar_dc(rf, a),
        CenterSpec::Var(a) => var_dc(rf, a),
    }
}

/// Centered deviation E phi(Z - c) with phi per [`DeviationKind`] and c per
/// [`CenterSpec`], assembled from the dc combinators.
pub fn deviation_dc(
    rf: &RandomDcFunctional,
    kind: DeviationKind,
    center: CenterSpec,
) -> Result<DcFunction> {
    let c = center_dc(rf, center)?;
    let s_count = rf.scenario_count();
    let probs = rf.probs();
    let mut diffs = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let zs = rf.scenario_dc(s);
        diffs.push(dc::combine_linear(&[(1.0, &zs), (-1.0, &c)])?);
    }
    match kind {
        DeviationKind::Sq => {
            let squares: Vec<DcFunction> =
                diffs.iter().map(dc::square).collect::<Result<_>>()?;
            let terms: Vec<(f64, &DcFunction)> =
                probs.iter().copied().zip(squares.iter()).collect();
            dc::combine_linear(&terms)
        }
        DeviationKind::SqrtSq => {
            let mut comps = Vec::with_capacity(s_count);
            for (s, d) in diffs.iter().enumerate() {
                comps.push(dc::combine_linear(&[(probs[s].sqrt(), d)])?);
            }
            dc::norm2(&comps)
        }
        DeviationKind::Pos => {
            let parts: Vec<DcFunction> =
                diffs.iter().map(dc::pos_part).collect::<Result<_>>()?;
            let terms: Vec<(f64, &DcFunction)> =
                probs.iter().copied().zip(parts.iter()).collect();
            dc::combine_linear(&terms)
        }
        DeviationKind::Abs => {
            let parts: Vec<DcFunction> =
                diffs.iter().map(dc::abs_val).collect::<Result<_>>()?;
            let terms: Vec<(f64, &DcFunction)> =
                probs.iter().copied().zip(parts.iter()).collect();
            dc::combine_linear(&terms)
        }
    }
}

/// Mean-risk composite E Z + lambda * D(Z).
pub fn risk_lambda_dc(
    rf: &RandomDcFunctional,
    lambda: f64,
    deviation: &MeasureSpec,
) -> Result<DcFunction> {
    if lambda < 0.0 {
        return Err(Error::Argument(format!("lambda {lambda} is negative")));
    }
    let mean = expectation_dc(rf)?;
    let dev = measure_dc(deviation, rf)?;
    dc::combine_linear(&[(1.0, &mean), (lambda, &dev)])
}

// ---------------------------------------------------------------------------
// measure specs and dispatch
// ---------------------------------------------------------------------------

/// A risk/deviation measure selection. Utility-based measures carry their
/// utility so the spec is self-contained.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Expectation,
    Cvar(f64),
    Var(f64),
    Oce(PwlUtility),
    Mu(PwlUtility),
    Variance,
    Std,
    Deviation { kind: DeviationKind, center: CenterSpec },
    RiskLambda { lambda: f64, deviation: Box<MeasureSpec> },
}

impl MeasureSpec {
    /// Parse strings such as "cvar:0.9", "var:0.9", "oce", "mu", "variance",
    /// "std", "dev:abs@cvar:0.9", "Rlambda:0.5:variance". `oce`/`mu` take
    /// their utility from `utility`, defaulting to the CVaR-equivalent
    /// utility at `default_alpha`.
    pub fn parse(s: &str, default_alpha: f64, utility: Option<&PwlUtility>) -> Result<Self> {
        let get_utility = || -> Result<PwlUtility> {
            match utility {
                Some(u) => Ok(u.clone()),
                None => PwlUtility::cvar_equivalent(default_alpha),
            }
        };
        let parse_alpha = |text: &str| -> Result<f64> {
            text.parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad alpha in measure spec: {text}")))
        };
        if s == "expectation" || s == "mean" {
            return Ok(MeasureSpec::Expectation);
        }
        if let Some(rest) = s.strip_prefix("cvar:") {
            return Ok(MeasureSpec::Cvar(parse_alpha(rest)?));
        }
        if let Some(rest) = s.strip_prefix("var:") {
            return Ok(MeasureSpec::Var(parse_alpha(rest)?));
        }
        if s == "oce" {
            return Ok(MeasureSpec::Oce(get_utility()?));
        }
        if s == "mu" {
            return Ok(MeasureSpec::Mu(get_utility()?));
        }
        if s == "variance" {
            return Ok(MeasureSpec::Variance);
        }
        if s == "std" {
            return Ok(MeasureSpec::Std);
        }
        if let Some(rest) = s.strip_prefix("dev:") {
            let (kind_s, center_s) = rest
                .split_once('@')
                .ok_or_else(|| Error::Argument(format!("deviation spec needs kind@center: {s}")))?;
            let kind = match kind_s {
                "sq" => DeviationKind::Sq,
                "sqrt_sq" => DeviationKind::SqrtSq,
                "pos" => DeviationKind::Pos,
                "abs" => DeviationKind::Abs,
                other => return Err(Error::Argument(format!("unknown deviation kind {other}"))),
            };
            let center = if center_s == "mean" {
                CenterSpec::Mean
            } else if let Some(a) = center_s.strip_prefix("cvar:") {
                CenterSpec::Cvar(parse_alpha(a)?)
            } else if let Some(a) = center_s.strip_prefix("var:") {
                CenterSpec::Var(parse_alpha(a)?)
            } else {
                return Err(Error::Argument(format!("unknown center {center_s}")));
            };
            return Ok(MeasureSpec::Deviation { kind, center });
        }
        if let Some(rest) = s.strip_prefix("Rlambda:") {
            let (lam_s, dev_s) = rest
                .split_once(':')
                .ok_or_else(|| Error::Argument(format!("Rlambda spec needs lambda:deviation: {s}")))?;
            let lambda = lam_s
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad lambda {lam_s}")))?;
            let deviation = Box::new(MeasureSpec::parse(dev_s, default_alpha, utility)?);
            return Ok(MeasureSpec::RiskLambda { lambda, deviation });
        }
        Err(Error::Argument(format!("unknown measure spec: {s}")))
    }

    pub fn describe(&self) -> String {
        match self {
            MeasureSpec::Expectation => "expectation".into(),
            MeasureSpec::Cvar(a) => format!("cvar:{a}"),
            MeasureSpec::Var(a) => format!("var:{a}"),
            MeasureSpec::Oce(_) => "oce".into(),
            MeasureSpec::Mu(_) => "mu".into(),
            MeasureSpec::Variance => "variance".into(),
            MeasureSpec::Std => "std".into(),
            MeasureSpec::Deviation { kind, center } => {
                let k = match kind {
                    DeviationKind::Sq => "sq",
                    DeviationKind::SqrtSq => "sqrt_sq",
                    DeviationKind::Pos => "pos",
                    DeviationKind::Abs => "abs",
                };
                let c = match center {
                    CenterSpec::Mean => "mean".into(),
                    CenterSpec::Cvar(a) => format!("cvar:{a}"),
                    CenterSpec::Var(a) => format!("var:{a}"),
                };
                format!("dev:{k}@{c}")
            }
            MeasureSpec::RiskLambda { lambda, deviation } => {
                format!("Rlambda:{lambda}:{}", deviation.describe())
            }
        }
    }
}

/// Build the dc decomposition of any supported measure.
pub fn measure_dc(spec: &MeasureSpec, rf: &RandomDcFunctional) -> Result<DcFunction> {
    match spec {
        MeasureSpec::Expectation => expectation_dc(rf),
        MeasureSpec::Cvar(a) => cvar_dc(rf, *a),
        MeasureSpec::Var(a) => var_dc(rf, *a),
        MeasureSpec::Oce(u) => oce_dc(rf, u),
        MeasureSpec::Mu(u) => mu_dc(rf, u),
        MeasureSpec::Variance => variance_dc(rf),
        MeasureSpec::Std => std_dc(rf),
        MeasureSpec::Deviation { kind, center } => deviation_dc(rf, *kind, *center),
        MeasureSpec::RiskLambda { lambda, deviation } => risk_lambda_dc(rf, *lambda, deviation),
    }
}

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// CVaR by the breakpoint scan of t + (1/(1-alpha)) E [z - t]_+ over
/// t in {z_s}. Exact for discrete distributions.
pub fn cvar_oracle(z: &[f64], probs: &[f64], alpha: f64) -> f64 {
    let inv = 1.0 / (1.0 - alpha);
    let objective = |t: f64| -> f64 {
        t + inv
            * z.iter()
                .zip(probs)
                .map(|(zs, ps)| ps * (zs - t).max(0.0))
                .sum::<f64>()
    };
    z.iter().map(|&t| objective(t)).fold(f64::INFINITY, f64::min)
}

/// VaR as the smallest minimizer of the CVaR objective: the leftmost
/// breakpoint attaining the minimum within a relative tie tolerance.
pub fn var_oracle(z: &[f64], probs: &[f64], alpha: f64) -> f64 {
    let inv = 1.0 / (1.0 - alpha);
    let objective = |t: f64| -> f64 {
        t + inv
            * z.iter()
                .zip(probs)
                .map(|(zs, ps)| ps * (zs - t).max(0.0))
                .sum::<f64>()
    };
    let mut ts: Vec<f64> = z.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let best = ts.iter().map(|&t| objective(t)).fold(f64::INFINITY, f64::min);
    for &t in &ts {
        if objective(t) <= best + TIE_TOL * (1.0 + best.abs()) {
            return t;
        }
    }
    ts[0]
}

fn oce_objective(z: &[f64], probs: &[f64], u: &PwlUtility, eta: f64) -> f64 {
    eta + z
        .iter()
        .zip(probs)
        .map(|(zs, ps)| ps * u.eval(zs - eta))
        .sum::<f64>()
}

fn oce_candidates(z: &[f64], u: &PwlUtility) -> Vec<f64> {
    let kinks = u.kinks();
    let mut cands: Vec<f64> = Vec::new();
    for &zs in z {
        for &k in &kinks {
            cands.push(zs - k);
        }
    }
    if cands.is_empty() {
        cands.push(0.0);
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    cands
}

/// Certainty equivalent sup_eta [eta + E u(z - eta)] by breakpoint scan,
/// with sentinel probes for attainment.
pub fn oce_oracle(z: &[f64], probs: &[f64], u: &PwlUtility) -> Result<f64> {
    let cands = oce_candidates(z, u);
    let best = cands
        .iter()
        .map(|&e| oce_objective(z, probs, u, e))
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9 * (1.0 + best.abs());
    let lo = oce_objective(z, probs, u, cands[0] - 1.0);
    let hi = oce_objective(z, probs, u, cands[cands.len() - 1] + 1.0);
    if lo > best + slack || hi > best + slack {
        return Err(Error::UnboundedAuxiliary(
            "certainty-equivalent objective increases beyond its breakpoints".into(),
        ));
    }
    Ok(best)
}

/// Largest maximizer of the certainty-equivalent objective: the rightmost
/// breakpoint attaining the maximum. Errs when the maximizer set is
/// unbounded to the right (flat tail).
pub fn mu_oracle(z: &[f64], probs: &[f64], u: &PwlUtility) -> Result<f64> {
    let cands = oce_candidates(z, u);
    let best = oce_oracle(z, probs, u)?;
    let tie = TIE_TOL * (1.0 + best.abs());
    let last = cands[cands.len() - 1];
    if oce_objective(z, probs, u, last + 1.0) >= best - tie {
        return Err(Error::UnboundedAuxiliary(
            "largest certainty-equivalent maximizer is unattained".into(),
        ));
    }
    for &e in cands.iter().rev() {
        if oce_objective(z, probs, u, e) >= best - tie {
            return Ok(e);
        }
    }
    Ok(last)
}

pub fn mean_oracle(z: &[f64], probs: &[f64]) -> f64 {
    linalg::dot(z, probs)
}

pub fn variance_oracle(z: &[f64], probs: &[f64]) -> f64 {
    let m = mean_oracle(z, probs);
    z.iter().zip(probs).map(|(zs, ps)| ps * (zs - m) * (zs - m)).sum()
}

fn center_oracle(z: &[f64], probs: &[f64], center: CenterSpec) -> f64 {
    match center {
        CenterSpec::Mean => mean_oracle(z, probs),
        CenterSpec::Cvar(a) => cvar_oracle(z, probs, a),
        CenterSpec::Var(a) => var_oracle(z, probs, a),
    }
}

pub fn deviation_oracle(z: &[f64], probs: &[f64], kind: DeviationKind, center: CenterSpec) -> f64 {
    let c = center_oracle(z, probs, center);
    match kind {
        DeviationKind::Sq => z.iter().zip(probs).map(|(zs, ps)| ps * (zs - c) * (zs - c)).sum(),
        DeviationKind::SqrtSq => deviation_oracle(z, probs, DeviationKind::Sq, center).sqrt(),
        DeviationKind::Pos => z.iter().zip(probs).map(|(zs, ps)| ps * (zs - c).max(0.0)).sum(),
        DeviationKind::Abs => z.iter().zip(probs).map(|(zs, ps)| ps * (zs - c).abs()).sum(),
    }
}

/// Direct evaluation of any measure at a point: scenario values first, then
/// scalar scans/moments. Entirely independent of the dc constructors.
pub fn risk_oracle(spec: &MeasureSpec, rf: &RandomDcFunctional, x: &[f64]) -> Result<f64> {
    if !rf.domain().contains(x, 1e-9) {
        return Err(Error::Domain("oracle point outside domain".into()));
    }
    let z = rf.values_at(x)?;
    let probs = rf.probs();
    Ok(match spec {
        MeasureSpec::Expectation => mean_oracle(&z, probs),
        MeasureSpec::Cvar(a) => cvar_oracle(&z, probs, *a),
        MeasureSpec::Var(a) => var_oracle(&z, probs, *a),
        MeasureSpec::Oce(u) => oce_oracle(&z, probs, u)?,
        MeasureSpec::Mu(u) => mu_oracle(&z, probs, u)?,
        MeasureSpec::Variance => variance_oracle(&z, probs),
        MeasureSpec::Std => variance_oracle(&z, probs).sqrt(),
        MeasureSpec::Deviation { kind, center } => deviation_oracle(&z, probs, *kind, *center),
        MeasureSpec::RiskLambda { lambda, deviation } => {
            mean_oracle(&z, probs) + lambda * risk_oracle(deviation, rf, x)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Z in {0, 1} with equal probabilities over a 1-d domain.
    fn coin() -> RandomDcFunctional {
        RandomDcFunctional::constant(
            ScenarioSet::uniform(2),
            &[0.0, 1.0],
            Domain::interval(-1.0, 1.0),
        )
        .unwrap()
    }

    /// Z(x; s) = x * z_s with z = (0, 1).
    fn linear_pair() -> RandomDcFunctional {
        let d = Domain::interval(-1.0, 1.0);
        let pieces = vec![
            (ConvexExpr::zero(1), ConvexExpr::zero(1)),
            (ConvexExpr::affine(vec![1.0], 0.0), ConvexExpr::zero(1)),
        ];
        RandomDcFunctional::new(ScenarioSet::uniform(2), pieces, d).unwrap()
    }

    #[test]
    fn expectation_of_linear_pair() {
        let rf = linear_pair();
        let e = expectation_dc(&rf).unwrap();
        assert!((e.value(&[1.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expectation_of_constants() {
        let rf = RandomDcFunctional::constant(
            ScenarioSet::new(vec![0.3, 0.7]).unwrap(),
            &[2.0, -1.0],
            Domain::interval(-1.0, 1.0),
        )
        .unwrap();
        let e = expectation_dc(&rf).unwrap();
        assert!((e.value(&[0.0]).unwrap() - (0.3 * 2.0 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn expectation_is_linear() {
        let rf = linear_pair();
        let e = expectation_dc(&rf).unwrap();
        let doubled = dc::combine_linear(&[(2.0, &e)]).unwrap();
        let mut rng = SplitMix64::new(1);
        for _ in 0..50 {
            let x = [rng.uniform(-1.0, 1.0)];
            assert!((doubled.value(&x).unwrap() - 2.0 * e.value(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_of_coin() {
        let rf = coin();
        let c = cvar_dc(&rf, 0.5).unwrap();
        assert!((c.value(&[0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((risk_oracle(&MeasureSpec::Cvar(0.5), &rf, &[0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cvar_of_degenerate_distribution() {
        let rf = RandomDcFunctional::constant(
            ScenarioSet::new(vec![1.0]).unwrap(),
            &[0.7],
            Domain::interval(-1.0, 1.0),
        )
        .unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let c = cvar_dc(&rf, alpha).unwrap();
            assert!((c.value(&[0.0]).unwrap() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_translation_covariance() {
        // CVaR(x + Z) = x + CVaR(Z) for the shifted functional.
        let d = Domain::interval(-1.0, 1.0);
        let pieces = vec![
            (ConvexExpr::affine(vec![1.0], 0.0), ConvexExpr::zero(1)),
            (ConvexExpr::affine(vec![1.0], 1.0), ConvexExpr::zero(1)),
        ];
        let rf = RandomDcFunctional::new(ScenarioSet::uniform(2), pieces, d).unwrap();
        let c = cvar_dc(&rf, 0.5).unwrap();
        let mut rng = SplitMix64::new(2);
        for _ in 0..50 {
            let x = [rng.uniform(-1.0, 1.0)];
            let base = risk_oracle(&MeasureSpec::Cvar(0.5), &coin(), &[0.0]).unwrap();
            assert!((c.value(&x).unwrap() - (x[0] + base)).abs() < 1e-9);
        }
    }

    #[test]
    fn w_polytope_single_scenario() {
        // S = 1, alpha = 0.5: W = {v >= 2}, single vertex at 2.
        let w = WPolytope::new(0.5, &[1.0]).unwrap();
        assert_eq!(w.vertices.len(), 1);
        assert!((w.vertices[0][0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn w_polytope_two_equal_scenarios() {
        let w = WPolytope::new(0.5, &[0.5, 0.5]).unwrap();
        assert_eq!(w.vertices.len(), 1);
        assert!(linalg::dist2(&w.vertices[0], &[1.0, 1.0]) < 1e-9);
    }

    #[test]
    fn w_constraints_built_bit_exactly() {
        let alpha = 0.3;
        let probs = [0.2, 0.5, 0.3];
        let w = WPolytope::new(alpha, &probs).unwrap();
        let inv = 1.0 / (1.0 - alpha);
        for i in 0..3 {
            for j in 0..3 {
                let expect =
                    if i == j { 1.0 - probs[i] * inv } else { -probs[i] * inv };
                assert_eq!(w.polyhedron.a.get(i, j), expect);
            }
            assert_eq!(w.polyhedron.b[i], -probs[i] * inv);
        }
    }

    #[test]
    fn var_of_coin_is_zero() {
        let rf = coin();
        let v = var_dc(&rf, 0.5).unwrap();
        assert!(v.value(&[0.0]).unwrap().abs() < 1e-10);
        assert!(risk_oracle(&MeasureSpec::Var(0.5), &rf, &[0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn var_single_scenario_is_value() {
        let d = Domain::interval(-1.0, 1.0);
        let pieces = vec![(ConvexExpr::affine(vec![2.0], 0.3), ConvexExpr::zero(1))];
        let rf =
            RandomDcFunctional::new(ScenarioSet::new(vec![1.0]).unwrap(), pieces, d).unwrap();
        let v = var_dc(&rf, 0.5).unwrap();
        let mut rng = SplitMix64::new(3);
        for _ in 0..20 {
            let x = [rng.uniform(-1.0, 1.0)];
            assert!((v.value(&x).unwrap() - (2.0 * x[0] + 0.3)).abs() < 1e-9);
        }
    }

    #[test]
    fn var_matches_oracle_on_random_instances() {
        let mut rng = SplitMix64::new(7);
        for trial in 0..40 {
            let s = 2 + rng.below(4);
            let alpha = rng.uniform(0.1, 0.9);
            let probs = random_probs(s, &mut rng);
            let d = Domain::interval(-1.0, 1.0);
            let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
                .map(|_| {
                    (
                        ConvexExpr::affine(vec![rng.uniform(-1.0, 1.0)], rng.uniform(-1.0, 1.0)),
                        ConvexExpr::affine(vec![rng.uniform(-1.0, 1.0)], rng.uniform(-1.0, 1.0))
                            .max_with_zero(),
                    )
                })
                .collect();
            let rf = RandomDcFunctional::new(
                ScenarioSet::new(probs).unwrap(),
                pieces,
                d,
            )
            .unwrap();
            let v = var_dc(&rf, alpha).unwrap();
            for _ in 0..20 {
                let x = [rng.uniform(-1.0, 1.0)];
                let want = risk_oracle(&MeasureSpec::Var(alpha), &rf, &x).unwrap();
                let got = v.value(&x).unwrap();
                assert!(
                    (got - want).abs() <= 1e-7 * (1.0 + want.abs()),
                    "trial {trial}: got {got}, oracle {want}"
                );
            }
        }
    }

    fn random_probs(s: usize, rng: &mut SplitMix64) -> Vec<f64> {
        let raw: Vec<f64> = (0..s).map(|_| rng.uniform(0.2, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        // Renormalize the last entry so the sum is exactly one.
        let head: f64 = p[..s - 1].iter().sum();
        p[s - 1] = 1.0 - head;
        p
    }

    #[test]
    fn oce_of_coin_with_cvar_utility() {
        let rf = coin();
        let u = PwlUtility::cvar_equivalent(0.5).unwrap();
        let o = oce_dc(&rf, &u).unwrap();
        assert!(o.value(&[0.0]).unwrap().abs() < 1e-12);
        assert!(risk_oracle(&MeasureSpec::Oce(u), &rf, &[0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn oce_with_identity_utility_is_mean() {
        let rf = linear_pair();
        let u = PwlUtility::new(vec![1.0], vec![0.0]).unwrap();
        let o = oce_dc(&rf, &u).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..30 {
            let x = [rng.uniform(-1.0, 1.0)];
            let mean = risk_oracle(&MeasureSpec::Expectation, &rf, &x).unwrap();
            assert!((o.value(&x).unwrap() - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn oce_translation_covariance() {
        let rf = coin();
        let u = PwlUtility::new(vec![0.5, 2.0], vec![0.0, 0.0]).unwrap();
        let base = risk_oracle(&MeasureSpec::Oce(u.clone()), &rf, &[0.0]).unwrap();
        // Shifted variable Z + c.
        let d = Domain::interval(-1.0, 1.0);
        for c in [-0.7, 0.4, 1.3] {
            let shifted = RandomDcFunctional::constant(
                ScenarioSet::uniform(2),
                &[c, 1.0 + c],
                d.clone(),
            )
            .unwrap();
            let got = risk_oracle(&MeasureSpec::Oce(u.clone()), &shifted, &[0.0]).unwrap();
            assert!((got - (base + c)).abs() < 1e-10);
            let o = oce_dc(&shifted, &u).unwrap();
            assert!((o.value(&[0.0]).unwrap() - got).abs() < 1e-10);
        }
    }

    #[test]
    fn mu_of_coin() {
        let rf = coin();
        let u = PwlUtility::cvar_equivalent(0.5).unwrap();
        let m = mu_dc(&rf, &u).unwrap();
        assert!((m.value(&[0.0]).unwrap() - 1.0).abs() < 1e-10);
        assert!(
            (risk_oracle(&MeasureSpec::Mu(u), &rf, &[0.0]).unwrap() - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn mu_single_scenario() {
        let d = Domain::interval(-1.0, 1.0);
        let rf = RandomDcFunctional::constant(
            ScenarioSet::new(vec![1.0]).unwrap(),
            &[0.42],
            d,
        )
        .unwrap();
        let u = PwlUtility::cvar_equivalent(0.5).unwrap();
        let m = mu_dc(&rf, &u).unwrap();
        assert!((m.value(&[0.0]).unwrap() - 0.42).abs() < 1e-10);
    }

    #[test]
    fn mu_matches_oracle_on_random_instances() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..25 {
            let s = 2 + rng.below(2);
            let probs = random_probs(s, &mut rng);
            let u = PwlUtility::new(vec![rng.uniform(0.0, 0.9), rng.uniform(1.1, 3.0)], vec![0.0, 0.0])
                .unwrap();
            let d = Domain::interval(-1.0, 1.0);
            let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
                .map(|_| {
                    (
                        ConvexExpr::affine(vec![rng.uniform(-1.0, 1.0)], rng.uniform(-1.0, 1.0)),
                        ConvexExpr::zero(1),
                    )
                })
                .collect();
            let rf =
                RandomDcFunctional::new(ScenarioSet::new(probs).unwrap(), pieces, d).unwrap();
            let m = mu_dc(&rf, &u).unwrap();
            for _ in 0..15 {
                let x = [rng.uniform(-1.0, 1.0)];
                let want = risk_oracle(&MeasureSpec::Mu(u.clone()), &rf, &x).unwrap();
                let got = m.value(&x).unwrap();
                assert!(
                    (got - want).abs() <= 1e-7 * (1.0 + want.abs()),
                    "got {got}, oracle {want}"
                );
            }
        }
    }

    #[test]
    fn variance_of_coin() {
        let rf = coin();
        let v = variance_dc(&rf).unwrap();
        assert!((v.value(&[0.0]).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let rf = RandomDcFunctional::constant(
            ScenarioSet::uniform(3),
            &[0.8, 0.8, 0.8],
            Domain::interval(-1.0, 1.0),
        )
        .unwrap();
        let v = variance_dc(&rf).unwrap();
        assert!(v.value(&[0.3]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn variance_scaling() {
        // sigma^2(2 Z) = 4 sigma^2(Z) scenario-wise on the linear pair.
        let rf = linear_pair();
        let scaled_pieces: Vec<(ConvexExpr, ConvexExpr)> = rf
            .pieces()
            .iter()
            .map(|(p, q)| {
                (
                    ConvexExpr::scale(2.0, p.clone()).unwrap(),
                    ConvexExpr::scale(2.0, q.clone()).unwrap(),
                )
            })
            .collect();
        let rf2 = RandomDcFunctional::new(
            ScenarioSet::uniform(2),
            scaled_pieces,
            rf.domain().clone(),
        )
        .unwrap();
        let v1 = variance_dc(&rf).unwrap();
        let v2 = variance_dc(&rf2).unwrap();
        let mut rng = SplitMix64::new(13);
        for _ in 0..30 {
            let x = [rng.uniform(-1.0, 1.0)];
            let a = v1.value(&x).unwrap();
            let b = v2.value(&x).unwrap();
            assert!((b - 4.0 * a).abs() < 1e-7 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn std_of_coin() {
        let rf = coin();
        let s = std_dc(&rf).unwrap();
        assert!((s.value(&[0.0]).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn std_absolute_homogeneity() {
        let rf = linear_pair();
        let s = std_dc(&rf).unwrap();
        let mut rng = SplitMix64::new(17);
        for _ in 0..30 {
            let x = [rng.uniform(-1.0, 1.0)];
            let want = risk_oracle(&MeasureSpec::Std, &rf, &x).unwrap();
            assert!((s.value(&x).unwrap() - want).abs() < 1e-9 * (1.0 + want));
        }
    }

    #[test]
    fn deviation_identities_on_coin() {
        let rf = coin();
        // Mean-centered: asd = 0.25, ad = 0.5 = 2 asd.
        let asd = deviation_dc(&rf, DeviationKind::Pos, CenterSpec::Mean).unwrap();
        let ad = deviation_dc(&rf, DeviationKind::Abs, CenterSpec::Mean).unwrap();
        assert!((asd.value(&[0.0]).unwrap() - 0.25).abs() < 1e-9);
        assert!((ad.value(&[0.0]).unwrap() - 0.5).abs() < 1e-9);
        // CVaR(0.5)-centered: center is 1, pos-part dies but abs does not.
        let pos_c = deviation_dc(&rf, DeviationKind::Pos, CenterSpec::Cvar(0.5)).unwrap();
        let abs_c = deviation_dc(&rf, DeviationKind::Abs, CenterSpec::Cvar(0.5)).unwrap();
        assert!(pos_c.value(&[0.0]).unwrap().abs() < 1e-9);
        assert!((abs_c.value(&[0.0]).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn deviations_of_constant_vanish() {
        let rf = RandomDcFunctional::constant(
            ScenarioSet::uniform(2),
            &[1.5, 1.5],
            Domain::interval(-1.0, 1.0),
        )
        .unwrap();
        for kind in [DeviationKind::Sq, DeviationKind::SqrtSq, DeviationKind::Pos, DeviationKind::Abs]
        {
            let d = deviation_dc(&rf, kind, CenterSpec::Mean).unwrap();
            assert!(d.value(&[0.0]).unwrap().abs() < 1e-7);
        }
    }

    #[test]
    fn risk_lambda_composition() {
        let rf = coin();
        let r0 = risk_lambda_dc(&rf, 0.0, &MeasureSpec::Variance).unwrap();
        assert!((r0.value(&[0.0]).unwrap() - 0.5).abs() < 1e-9);
        let r1 = risk_lambda_dc(&rf, 1.0, &MeasureSpec::Variance).unwrap();
        assert!((r1.value(&[0.0]).unwrap() - 0.75).abs() < 1e-9);
        assert!(risk_lambda_dc(&rf, -0.5, &MeasureSpec::Variance).is_err());
    }

    #[test]
    fn oracle_values_on_coin() {
        let z = [0.0, 1.0];
        let p = [0.5, 0.5];
        assert!((cvar_oracle(&z, &p, 0.5) - 1.0).abs() < 1e-12);
        assert!(var_oracle(&z, &p, 0.5).abs() < 1e-12);
        assert!((variance_oracle(&z, &p) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cvar_dominates_var() {
        let mut rng = SplitMix64::new(23);
        for _ in 0..200 {
            let s = 1 + rng.below(5);
            let probs = random_probs(s, &mut rng);
            let z: Vec<f64> = (0..s).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let alpha = rng.uniform(0.05, 0.95);
            assert!(cvar_oracle(&z, &probs, alpha) >= var_oracle(&z, &probs, alpha) - 1e-12);
        }
    }

    #[test]
    fn w_vertices_depend_only_on_probabilities() {
        // Permuting scenario values does not touch W.
        let w1 = WPolytope::new(0.4, &[0.25, 0.75]).unwrap();
        let w2 = WPolytope::new(0.4, &[0.25, 0.75]).unwrap();
        assert_eq!(w1.vertices, w2.vertices);
    }

    #[test]
    fn measure_spec_parsing() {
        let u = PwlUtility::cvar_equivalent(0.5).unwrap();
        assert_eq!(
            MeasureSpec::parse("cvar:0.9", 0.5, None).unwrap(),
            MeasureSpec::Cvar(0.9)
        );
        assert_eq!(
            MeasureSpec::parse("dev:abs@cvar:0.9", 0.5, None).unwrap(),
            MeasureSpec::Deviation { kind: DeviationKind::Abs, center: CenterSpec::Cvar(0.9) }
        );
        assert_eq!(
            MeasureSpec::parse("Rlambda:0.5:variance", 0.5, None).unwrap(),
            MeasureSpec::RiskLambda {
                lambda: 0.5,
                deviation: Box::new(MeasureSpec::Variance)
            }
        );
        assert_eq!(MeasureSpec::parse("oce", 0.5, Some(&u)).unwrap(), MeasureSpec::Oce(u));
        assert!(MeasureSpec::parse("nope", 0.5, None).is_err());
    }

    #[test]
    fn utility_invariants_enforced() {
        // Negative slope.
        assert!(PwlUtility::new(vec![-0.1, 2.0], vec![0.0, 0.0]).is_err());
        // u(0) != 0.
        assert!(PwlUtility::new(vec![1.0], vec![0.5]).is_err());
        // Slope range at zero misses 1.
        assert!(PwlUtility::new(vec![2.0, 3.0], vec![0.0, 0.0]).is_err());
        // Valid: slopes straddle one.
        assert!(PwlUtility::new(vec![0.5, 2.0], vec![0.0, 0.0]).is_ok());
    }
}

// Test-only convenience used above.
#[cfg(test)]
impl ConvexExpr {
    fn max_with_zero(self) -> ConvexExpr {
        let dim = match &self {
            ConvexExpr::Affine { a, .. } => a.len(),
            _ => 1,
        };
        ConvexExpr::max_of(vec![self, ConvexExpr::zero(dim)]).unwrap()
    }
}
