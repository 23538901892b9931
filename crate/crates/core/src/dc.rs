//! The dc-function algebra.
//!
//! A [`DcFunction`] is a pair of convex expressions (g, h) on a shared
//! domain, representing g - h. The combinators here are closed forms: each
//! one assembles a new (g, h) pair from the operands' components, so the
//! result is convex-minus-convex by construction and its value agrees with
//! the intended operation pointwise (exactly, up to floating-point error).
//!
//! Shift constants for squares come from the numerical infimum estimator
//! plus a fixed margin, since squaring requires nonnegative components; that
//! is why `square` and `product` need bounded domains.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, ConvexExpr, Domain};

/// Margin added to infimum-based nonnegativity shifts.
pub const SHIFT_MARGIN: f64 = 1e-6;
/// A negative-log composition requires the function to sit at least this
/// far above zero.
pub const LOG_FLOOR: f64 = 1e-6;

/// A difference of convex functions: value(x) = g(x) - h(x).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcFunction {
    g: ConvexExpr,
    h: ConvexExpr,
    domain: Domain,
}

impl DcFunction {
    pub fn new(g: ConvexExpr, h: ConvexExpr, domain: Domain) -> Self {
        Self { g, h, domain }
    }

    /// Lift a convex expression (h = 0).
    pub fn from_convex(g: ConvexExpr, domain: Domain) -> Self {
        let dim = domain.dimension();
        Self { g, h: ConvexExpr::zero(dim), domain }
    }

    /// Lift a concave function given as its negation (g = 0).
    pub fn from_concave_negation(neg: ConvexExpr, domain: Domain) -> Self {
        let dim = domain.dimension();
        Self { g: ConvexExpr::zero(dim), h: neg, domain }
    }

    pub fn zero(domain: Domain) -> Self {
        let dim = domain.dimension();
        Self { g: ConvexExpr::zero(dim), h: ConvexExpr::zero(dim), domain }
    }

    pub fn g(&self) -> &ConvexExpr {
        &self.g
    }

    pub fn h(&self) -> &ConvexExpr {
        &self.h
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// g(x) - h(x); the point must lie in the domain.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x, 1e-9) {
            return Err(Error::Domain(format!("point {x:?} outside domain")));
        }
        Ok(self.g.eval(x)? - self.h.eval(x)?)
    }

    /// Component evaluation without the membership check, for samplers that
    /// guarantee membership themselves.
    pub fn value_unchecked(&self, x: &[f64]) -> Result<f64> {
        Ok(self.g.eval(x)? - self.h.eval(x)?)
    }
}

fn shared_domain(fs: &[&DcFunction]) -> Result<Domain> {
    let first = fs
        .first()
        .ok_or_else(|| Error::Argument("need at least one function".into()))?
        .domain()
        .clone();
    for f in fs {
        if *f.domain() != first {
            return Err(Error::Domain("operands have mismatched domains".into()));
        }
    }
    Ok(first)
}

/// Linear combination sum_i coef_i * f_i. A negative coefficient swaps the
/// roles of g and h, so the components stay convex.
pub fn combine_linear(terms: &[(f64, &DcFunction)]) -> Result<DcFunction> {
    let fs: Vec<&DcFunction> = terms.iter().map(|(_, f)| *f).collect();
    let domain = shared_domain(&fs)?;
    let mut g_parts = Vec::new();
    let mut h_parts = Vec::new();
    for (coef, f) in terms {
        if *coef >= 0.0 {
            g_parts.push(ConvexExpr::scale(*coef, f.g().clone())?);
            h_parts.push(ConvexExpr::scale(*coef, f.h().clone())?);
        } else {
            g_parts.push(ConvexExpr::scale(-coef, f.h().clone())?);
            h_parts.push(ConvexExpr::scale(-coef, f.g().clone())?);
        }
    }
    Ok(DcFunction::new(
        ConvexExpr::sum(g_parts)?,
        ConvexExpr::sum(h_parts)?,
        domain,
    ))
}

/// Add a constant.
pub fn offset(f: &DcFunction, c: f64) -> Result<DcFunction> {
    let dim = f.domain().dimension();
    let constant = DcFunction::from_convex(ConvexExpr::constant(dim, c), f.domain().clone());
    combine_linear(&[(1.0, f), (1.0, &constant)])
}

/// Shift both components up by `c >= 0` (value is unchanged).
fn shift_nonneg(e: &ConvexExpr, c: f64, dim: usize) -> Result<ConvexExpr> {
    ConvexExpr::sum(vec![e.clone(), ConvexExpr::constant(dim, c)])
}

/// f^2 via 2 (g~^2 + h~^2) - (g~ + h~)^2 after shifting g, h to be
/// nonnegative; the shift cancels identically, so the value is f^2 for any
/// admissible shift.
pub fn square(f: &DcFunction) -> Result<DcFunction> {
    let domain = f.domain().clone();
    let dim = domain.dimension();
    let inf_g = expr::infimum_estimate(f.g(), &domain)?;
    let inf_h = expr::infimum_estimate(f.h(), &domain)?;
    let c = (-inf_g).max(-inf_h).max(0.0) + SHIFT_MARGIN;
    let g_shift = shift_nonneg(f.g(), c, dim)?;
    let h_shift = shift_nonneg(f.h(), c, dim)?;
    let g_sq = ConvexExpr::square_of_nonneg(g_shift.clone(), &domain)?;
    let h_sq = ConvexExpr::square_of_nonneg(h_shift.clone(), &domain)?;
    let new_g = ConvexExpr::sum(vec![
        ConvexExpr::scale(2.0, g_sq)?,
        ConvexExpr::scale(2.0, h_sq)?,
    ])?;
    let sum_shift = ConvexExpr::sum(vec![g_shift, h_shift])?;
    let new_h = ConvexExpr::square_of_nonneg(sum_shift, &domain)?;
    Ok(DcFunction::new(new_g, new_h, domain))
}

/// f1 * f2 via the polarization identity ((f1 + f2)^2 - f1^2 - f2^2) / 2.
pub fn product(f1: &DcFunction, f2: &DcFunction) -> Result<DcFunction> {
    let _ = shared_domain(&[f1, f2])?;
    let sum = combine_linear(&[(1.0, f1), (1.0, f2)])?;
    let sq_sum = square(&sum)?;
    let sq1 = square(f1)?;
    let sq2 = square(f2)?;
    combine_linear(&[(0.5, &sq_sum), (-0.5, &sq1), (-0.5, &sq2)])
}

/// ||F(x)||_2 for a vector of dc components. The minuend is the norm plus
/// the sum of all component parts, which is convex because it equals the
/// pointwise maximum over unit vectors u of
/// sum_i [(u_i + 1) g_i(x) + (1 - u_i) h_i(x)].
pub fn norm2(fs: &[DcFunction]) -> Result<DcFunction> {
    let refs: Vec<&DcFunction> = fs.iter().collect();
    let domain = shared_domain(&refs)?;
    let all_parts: Vec<ConvexExpr> = fs
        .iter()
        .flat_map(|f| [f.g().clone(), f.h().clone()])
        .collect();
    let sum_parts = ConvexExpr::sum(all_parts)?;
    let components: Arc<Vec<(ConvexExpr, ConvexExpr)>> =
        Arc::new(fs.iter().map(|f| (f.g().clone(), f.h().clone())).collect());
    let sum_for_node = sum_parts.clone();
    let minuend = ConvexExpr::certified("norm2_plus_component_sum", move |x: &[f64]| {
        let mut sq = 0.0;
        for (g, h) in components.iter() {
            let v = g.eval(x)? - h.eval(x)?;
            sq += v * v;
        }
        Ok(sq.sqrt() + sum_for_node.eval(x)?)
    });
    Ok(DcFunction::new(minuend, sum_parts, domain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

/// Pointwise min or max via the cross-sum decomposition
/// max_i (g_i - h_i) = max_i (g_i + sum_{j != i} h_j) - sum_j h_j.
pub fn pointwise_extremum(mode: Extremum, fs: &[DcFunction]) -> Result<DcFunction> {
    let refs: Vec<&DcFunction> = fs.iter().collect();
    let domain = shared_domain(&refs)?;
    if fs.len() == 1 {
        return Ok(fs[0].clone());
    }
    let build_max = |mains: Vec<&ConvexExpr>, others: Vec<&ConvexExpr>| -> Result<(ConvexExpr, ConvexExpr)> {
        // max_i (main_i + sum_{j != i} other_j), paired with sum_j other_j.
        let mut branches = Vec::with_capacity(mains.len());
        for (i, main) in mains.iter().enumerate() {
            let mut parts = vec![(*main).clone()];
            for (j, o) in others.iter().enumerate() {
                if j != i {
                    parts.push((*o).clone());
                }
            }
            branches.push(ConvexExpr::sum(parts)?);
        }
        let maxpart = ConvexExpr::max_of(branches)?;
        let sum_others = ConvexExpr::sum(others.into_iter().cloned().collect())?;
        Ok((maxpart, sum_others))
    };
    match mode {
        Extremum::Max => {
            let (g, h) = build_max(
                fs.iter().map(|f| f.g()).collect(),
                fs.iter().map(|f| f.h()).collect(),
            )?;
            Ok(DcFunction::new(g, h, domain))
        }
        Extremum::Min => {
            // min_i f_i = -max_i (-f_i) = sum_j g_j - max_i (h_i + sum_{j != i} g_j)
            let (maxpart, sum_g) = build_max(
                fs.iter().map(|f| f.h()).collect(),
                fs.iter().map(|f| f.g()).collect(),
            )?;
            Ok(DcFunction::new(sum_g, maxpart, domain))
        }
    }
}

/// [f]_+ = max(f, 0).
pub fn pos_part(f: &DcFunction) -> Result<DcFunction> {
    let zero = DcFunction::zero(f.domain().clone());
    pointwise_extremum(Extremum::Max, &[f.clone(), zero])
}

/// |f| = max(f, -f).
pub fn abs_val(f: &DcFunction) -> Result<DcFunction> {
    let neg = combine_linear(&[(-1.0, f)])?;
    pointwise_extremum(Extremum::Max, &[f.clone(), neg])
}

/// Univariate evaluator certified convex and nondecreasing by a sampled
/// sweep at construction time.
#[derive(Clone)]
pub struct MonotoneConvexFn {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for MonotoneConvexFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MonotoneConvexFn({})", self.label)
    }
}

impl MonotoneConvexFn {
    /// Certify on [lo, hi] with a 512-point grid: consecutive values must be
    /// nondecreasing and midpoints must satisfy the convexity inequality.
    pub fn certify(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let label = label.into();
        let n = 512;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(t);
            if !v.is_finite() {
                return Err(Error::Certification(format!("{label}: non-finite value at {t}")));
            }
            if v < prev - 1e-9 * (1.0 + prev.abs()) {
                return Err(Error::Certification(format!("{label}: not nondecreasing near {t}")));
            }
            prev = v;
        }
        for i in 0..n {
            let a = lo + (hi - lo) * i as f64 / n as f64;
            let b = lo + (hi - lo) * (i + 2).min(n) as f64 / n as f64;
            let mid = 0.5 * (a + b);
            let slack = 1e-8 * (1.0 + f(a).abs() + f(b).abs());
            if f(mid) > 0.5 * (f(a) + f(b)) + slack {
                return Err(Error::Certification(format!("{label}: midpoint convexity fails near {mid}")));
            }
        }
        Ok(Self { label, f: Arc::new(f) })
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Composition b(m(x)) for b convex nondecreasing and
/// m(x) = p(x) - max_i [(a_i)^T x + alpha_i]: equals the pointwise minimum
/// over i of the convex functions x -> b(p(x) - (a_i)^T x - alpha_i).
pub fn compose_incr_convex(
    b: &MonotoneConvexFn,
    p: &ConvexExpr,
    pieces: &[(Vec<f64>, f64)],
    domain: &Domain,
) -> Result<DcFunction> {
    if pieces.is_empty() {
        return Err(Error::Argument("composition needs at least one affine piece".into()));
    }
    let mut branches = Vec::with_capacity(pieces.len());
    for (avec, alpha) in pieces {
        if avec.len() != domain.dimension() {
            return Err(Error::Argument("affine piece dimension mismatch".into()));
        }
        let b_fn = b.clone();
        let p_expr = p.clone();
        let avec = avec.clone();
        let alpha = *alpha;
        let node = ConvexExpr::certified(format!("{}_of_inner", b.label()), move |x: &[f64]| {
            let inner = p_expr.eval(x)? - crate::linalg::dot(&avec, x) - alpha;
            Ok(b_fn.eval(inner))
        });
        branches.push(DcFunction::from_convex(node, domain.clone()));
    }
    pointwise_extremum(Extremum::Min, &branches)
}

/// -log(f(x)) for a dc function bounded away from zero. With
/// M = 1 / inf f, the minuend -log(f(x)) + M g(x) is convex and the
/// subtrahend is M g(x).
pub fn compose_neg_log(f: &DcFunction) -> Result<DcFunction> {
    let domain = f.domain().clone();
    let est = expr::infimum_estimate_fn(|x| f.value_unchecked(x), &domain)?;
    if est < LOG_FLOOR {
        return Err(Error::Domain(format!(
            "negative log needs inf f >= {LOG_FLOOR:.0e}, estimated {est:.3e}"
        )));
    }
    let m = 1.0 / est;
    let g_expr = f.g().clone();
    let h_expr = f.h().clone();
    let g_for_node = g_expr.clone();
    let minuend = ConvexExpr::certified("neg_log_plus_scaled_minuend", move |x: &[f64]| {
        let val = g_for_node.eval(x)? - h_expr.eval(x)?;
        if val <= 0.0 {
            return Err(Error::Domain(format!("log of nonpositive value {val}")));
        }
        Ok(-val.ln() + m * g_for_node.eval(x)?)
    });
    let subtrahend = ConvexExpr::scale(m, g_expr)?;
    Ok(DcFunction::new(minuend, subtrahend, domain))
}
