//! dc decompositions of univariate folded concave penalties
//! theta(t) = f(|t|) with f continuous and concave on [0, inf).
//!
//! theta is dc exactly when the right derivative f'(0;+) is finite. When it
//! is nonpositive, theta itself is concave and the decomposition is
//! 0 - (-theta). When it is positive, two auxiliary concave functions f1
//! and f2 are built: f1 follows f on the right half-axis and the tangent
//! line f(0) + f'(0;+) t on [t_minus, 0], rejoining the folded branch
//! f(-t) left of t_minus when the line genuinely meets that branch; f2 is
//! the mirror image. Then theta = max(f1, f2), giving the decomposition
//! theta = (-min(f1, f2)) - (-(f1 + f2)) with both components convex.
//!
//! Root finding is bracketed bisection after doubling the bracket from -1
//! (never an open-ended iteration, since f is only assumed concave and
//! continuous). When the tangent line never re-meets the folded branch
//! inside the working interval, the primary crossing is absent; the scan
//! then reports the crossing of the line's negation with the branch (the
//! other factor of the squared crossing equation) when one exists, and
//! -inf otherwise. A branch switch happens only at a primary crossing:
//! switching at a negated-line crossing would break the concavity of f1.

use std::fmt;
use std::sync::Arc;

use crate::dc::DcFunction;
use crate::error::{Error, Result};
use crate::expr::{ConvexExpr, Domain};

/// Divided differences beyond this threshold, while still increasing,
/// declare the right derivative infinite.
pub const DD_INFINITY_THRESHOLD: f64 = 1e6;
/// Bisection tolerance for the crossing abscissas.
pub const ROOT_TOL: f64 = 1e-10;

/// Univariate concave penalty on the nonnegative half-axis, with an
/// analytic right derivative at zero when the catalog knows it, and the
/// working interval half-width for the decomposition.
#[derive(Clone)]
pub struct FoldedSpec {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    analytic_d0: Option<f64>,
    t_max: f64,
}

impl fmt::Debug for FoldedSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "FoldedSpec({}, T = {})", self.label, self.t_max)
    }
}

impl FoldedSpec {
    /// Wrap a concave evaluator. Checks sampled concavity on [0, T] (513
    /// grid midpoints) and continuity at zero.
    pub fn custom(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        analytic_d0: Option<f64>,
        t_max: f64,
    ) -> Result<Self> {
        let label = label.into();
        if !(t_max > 0.0) {
            return Err(Error::Argument("working half-width must be positive".into()));
        }
        let n = 512;
        let mut vals = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let u = t_max * i as f64 / n as f64;
            let v = f(u);
            if !v.is_finite() {
                return Err(Error::Argument(format!("{label}: non-finite value at {u}")));
            }
            vals.push(v);
        }
        for i in 0..n.saturating_sub(1) {
            let mid = vals[i + 1];
            let avg = 0.5 * (vals[i] + vals[i + 2]);
            let slack = 1e-9 * (1.0 + vals[i].abs() + vals[i + 2].abs());
            if mid < avg - slack {
                return Err(Error::Certification(format!(
                    "{label}: concavity fails near u = {}",
                    t_max * (i + 1) as f64 / n as f64
                )));
            }
        }
        // Continuity at zero: values along a dyadic sequence approach f(0).
        let f0 = f(0.0);
        let near = f(2.0_f64.powi(-30));
        if (near - f0).abs() > 1e-4 * (1.0 + f0.abs()) {
            return Err(Error::Certification(format!("{label}: discontinuous at zero")));
        }
        Ok(Self { label, f: Arc::new(f), analytic_d0, t_max })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn eval_f(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    /// theta(t) = f(|t|).
    pub fn eval_theta(&self, t: f64) -> f64 {
        (self.f)(t.abs())
    }

    // ---- catalog ---------------------------------------------------------

    pub fn scad(a: f64, lambda: f64, t_max: f64) -> Result<Self> {
        if a <= 2.0 || lambda <= 0.0 {
            return Err(Error::Argument("scad needs a > 2 and lambda > 0".into()));
        }
        let f = move |u: f64| -> f64 {
            if u <= lambda {
                lambda * u
            } else if u <= a * lambda {
                (2.0 * a * lambda * u - u * u - lambda * lambda) / (2.0 * (a - 1.0))
            } else {
                lambda * lambda * (a + 1.0) / 2.0
            }
        };
        Self::custom(format!("scad:a={a},lambda={lambda}"), f, Some(lambda), t_max)
    }

    pub fn mcp(gamma: f64, lambda: f64, t_max: f64) -> Result<Self> {
        if gamma <= 0.0 || lambda <= 0.0 {
            return Err(Error::Argument("mcp needs gamma > 0 and lambda > 0".into()));
        }
        let f = move |u: f64| -> f64 {
            if u <= gamma * lambda {
                lambda * u - u * u / (2.0 * gamma)
            } else {
                gamma * lambda * lambda / 2.0
            }
        };
        Self::custom(format!("mcp:gamma={gamma},lambda={lambda}"), f, Some(lambda), t_max)
    }

    pub fn capped_l1(lambda: f64, theta: f64, t_max: f64) -> Result<Self> {
        if lambda <= 0.0 || theta <= 0.0 {
            return Err(Error::Argument("capped_l1 needs lambda > 0 and theta > 0".into()));
        }
        let f = move |u: f64| lambda * u.min(theta);
        Self::custom(format!("capped_l1:lambda={lambda},theta={theta}"), f, Some(lambda), t_max)
    }

    pub fn log_penalty(gamma: f64, t_max: f64) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(Error::Argument("log penalty needs gamma > 0".into()));
        }
        let f = move |u: f64| (1.0 + u / gamma).ln();
        Self::custom(format!("log:gamma={gamma}"), f, Some(1.0 / gamma), t_max)
    }

    /// f(u) = sqrt(u + 1).
    pub fn sqrt1p(t_max: f64) -> Result<Self> {
        Self::custom("sqrt1p", |u: f64| (u + 1.0).sqrt(), Some(0.5), t_max)
    }

    /// f(u) = -u^2 - 1 (concave with vanishing right derivative).
    pub fn fig_concave(t_max: f64) -> Result<Self> {
        Self::custom("fig1a", |u: f64| -u * u - 1.0, Some(0.0), t_max)
    }

    /// f(u) = -2 (u - 1)^2 + 3 (positive right derivative, finite crossing).
    pub fn fig_crossing(t_max: f64) -> Result<Self> {
        Self::custom("fig1b1", |u: f64| -2.0 * (u - 1.0) * (u - 1.0) + 3.0, Some(4.0), t_max)
    }

    /// f(u) = sqrt(u): infinite right derivative, hence not dc.
    pub fn sqrt_abs(t_max: f64) -> Result<Self> {
        // The concavity sweep tolerates the steep origin; the derivative
        // probe is what rejects this one.
        Self::custom("sqrtabs", |u: f64| u.sqrt(), None, t_max)
    }

    /// Parse a catalog id such as "scad:a=3.7,lambda=1", "mcp:gamma=2,lambda=1",
    /// "capped_l1:lambda=1,theta=2", "log:gamma=0.5", "sqrt1p", "fig1a",
    /// "fig1b1", "fig1b2", "sqrtabs".
    pub fn parse(id: &str, t_max: f64) -> Result<Self> {
        let (name, args) = match id.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (id, None),
        };
        let get = |key: &str| -> Result<f64> {
            let args = args
                .ok_or_else(|| Error::Argument(format!("{name} needs parameters")))?;
            for pair in args.split(',') {
                if let Some((k, v)) = pair.split_once('=') {
                    if k == key {
                        return v
                            .parse::<f64>()
                            .map_err(|_| Error::Argument(format!("bad value for {key}: {v}")));
                    }
                }
            }
            Err(Error::Argument(format!("{name} is missing parameter {key}")))
        };
        match name {
            "scad" => Self::scad(get("a")?, get("lambda")?, t_max),
            "mcp" => Self::mcp(get("gamma")?, get("lambda")?, t_max),
            "capped_l1" => Self::capped_l1(get("lambda")?, get("theta")?, t_max),
            "log" => Self::log_penalty(get("gamma")?, t_max),
            "sqrt1p" => Self::sqrt1p(t_max),
            "fig1a" => Self::fig_concave(t_max),
            "fig1b1" => Self::fig_crossing(t_max),
            "fig1b2" => Self::sqrt1p(t_max),
            "sqrtabs" => Self::sqrt_abs(t_max),
            other => Err(Error::Argument(format!("unknown penalty id: {other}"))),
        }
    }
}

/// Right derivative of f at zero: the analytic value when cataloged,
/// otherwise dyadic divided differences (f(2^-k) - f(0)) 2^k for k = 1..40.
/// Concavity makes the sequence nondecreasing, so exceeding the threshold
/// while still increasing is declared +inf.
pub fn right_derivative_at_zero(spec: &FoldedSpec) -> f64 {
    if let Some(d) = spec.analytic_d0 {
        return d;
    }
    let f0 = spec.eval_f(0.0);
    let mut prev = f64::NEG_INFINITY;
    let mut last = 0.0;
    for k in 1..=40 {
        let tau = 2.0_f64.powi(-k);
        let d = (spec.eval_f(tau) - f0) / tau;
        if d > DD_INFINITY_THRESHOLD && d >= prev - 1e-9 {
            return f64::INFINITY;
        }
        prev = d;
        last = d;
    }
    last
}

/// How the decomposition was assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FoldedCase {
    /// f'(0;+) <= 0: theta is concave outright.
    Concave,
    /// f'(0;+) > 0: theta = max(f1, f2) with the reported crossing
    /// abscissas (negative/positive side; -inf/+inf when the tangent line
    /// never leaves the graph's shadow inside the working interval).
    MaxOfConcaves { t_minus: f64, t_plus: f64 },
}

/// dc decomposition of theta(t) = f(|t|) on [-T, T].
#[derive(Debug, Clone)]
pub struct FoldedDecomposition {
    pub dc: DcFunction,
    pub case: FoldedCase,
    pub right_derivative: f64,
}

/// Bisect for the sign change of `d` on [lo, hi] where d(lo) <= 0 < d(hi)
/// conceptually (hi may sit at the degenerate endpoint 0 where d vanishes
/// but is positive immediately to its left).
fn bisect(d: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < ROOT_TOL {
            break;
        }
        if d(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Right-most root in [-T, 0) found by doubling the probe from -1 and
/// bisecting the first bracket. Returns None when `d` keeps one sign.
fn rightmost_root(d: impl Fn(f64) -> f64, t_max: f64) -> Option<f64> {
    let mut prev = 0.0f64;
    if d(prev) < 0.0 {
        // The function starts nonpositive at the origin; no positive side
        // exists to bracket against.
        return None;
    }
    let mut probe = -1.0f64;
    loop {
        let t = probe.max(-t_max);
        if d(t) <= 0.0 {
            return Some(bisect(&d, t, prev));
        }
        if t <= -t_max {
            return None;
        }
        prev = t;
        probe *= 2.0;
    }
}

/// Decompose theta(t) = f(|t|) on [-T, T]. Errs with `NotDc` when the right
/// derivative at zero is infinite.
pub fn decompose(spec: &FoldedSpec) -> Result<FoldedDecomposition> {
    let d0 = right_derivative_at_zero(spec);
    if !d0.is_finite() {
        return Err(Error::NotDc(format!(
            "{}: right derivative at zero is unbounded",
            spec.label()
        )));
    }
    let t_max = spec.t_max();
    let domain = Domain::interval(-t_max, t_max);
    if d0 <= 0.0 {
        // theta is concave: 0 - (-theta).
        let s = spec.clone();
        let h = ConvexExpr::certified(format!("neg_{}", spec.label()), move |x: &[f64]| {
            Ok(-s.eval_theta(x[0]))
        });
        let dc = DcFunction::from_concave_negation(h, domain);
        return Ok(FoldedDecomposition { dc, case: FoldedCase::Concave, right_derivative: d0 });
    }
    let f0 = spec.eval_f(0.0);
    // Primary crossing: tangent line meets the folded branch f(-t).
    let s1 = spec.clone();
    let primary = rightmost_root(move |t: f64| s1.eval_f(-t) - (f0 + d0 * t), t_max);
    // Secondary crossing: the line's negation meets the branch. Reported
    // for diagnostics; never a branch switch.
    let s2 = spec.clone();
    let fallback = if primary.is_none() {
        rightmost_root(move |t: f64| s2.eval_f(-t) + (f0 + d0 * t), t_max)
    } else {
        None
    };
    let switch_at = primary;
    let t_minus = primary.or(fallback).unwrap_or(f64::NEG_INFINITY);
    let t_plus = -t_minus;

    let sf = spec.clone();
    let f1 = move |t: f64| -> f64 {
        if t >= 0.0 {
            sf.eval_f(t)
        } else {
            match switch_at {
                Some(ts) if t < ts => sf.eval_f(-t),
                _ => f0 + d0 * t,
            }
        }
    };
    let f1_for_g = f1.clone();
    let f1_for_h = f1.clone();
    let g = ConvexExpr::certified(format!("neg_min_branches_{}", spec.label()), move |x: &[f64]| {
        let t = x[0];
        Ok(-f1_for_g(t).min(f1_for_g(-t)))
    });
    let h = ConvexExpr::certified(format!("neg_branch_sum_{}", spec.label()), move |x: &[f64]| {
        let t = x[0];
        Ok(-(f1_for_h(t) + f1_for_h(-t)))
    });
    Ok(FoldedDecomposition {
        dc: DcFunction::new(g, h, domain),
        case: FoldedCase::MaxOfConcaves { t_minus, t_plus },
        right_derivative: d0,
    })
}
