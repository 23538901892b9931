//! Min-representations of piecewise quadratic and affine functions.
//!
//! A continuous selection theta of quadratic pieces theta_i on closed convex
//! regions S_i (whose union is a convex set) is globally the pointwise
//! minimum of the majorants
//!
//!   psi_i(x) = theta_i(x) + dist(x; S_i) * max_j ||grad theta_j(x) - grad theta_i(x)||
//!                + (3 L_i / 2) * dist(x; S_i)^2,
//!
//! where L_i is the largest Lipschitz modulus among the gradient differences
//! against piece i. Each psi_i is dc: the distance is convex (computed
//! exactly by polyhedral projection), the gradient-norm factor is a maximum
//! of norms of affine maps, the product of the two is handled by the dc
//! product identity, and the squared distance is convex. For affine pieces
//! all moduli vanish and the representation simplifies accordingly.

use serde::{Deserialize, Serialize};

use crate::dc::{self, DcFunction, Extremum};
use crate::error::{Error, Result};
use crate::expr::{ConvexExpr, Domain};
use crate::linalg::{self, Matrix};
use crate::polyhedral::{self, Polyhedron};
use crate::rng::SplitMix64;

/// Tolerance used when deciding whether a quadratic term is absent.
const AFFINE_TOL: f64 = 1e-12;

/// One piece: value(x) = 0.5 x^T A x + a^T x + c. `A` may be indefinite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticPiece {
    #[serde(rename = "A")]
    pub a2: Matrix,
    pub a1: Vec<f64>,
    pub a0: f64,
}

impl QuadraticPiece {
    pub fn new(a2: Matrix, a1: Vec<f64>, a0: f64) -> Result<Self> {
        if a2.nrows() != a2.ncols() || a2.nrows() != a1.len() {
            return Err(Error::Argument("piece dimension mismatch".into()));
        }
        if !a2.is_symmetric(1e-9) {
            return Err(Error::Argument("piece matrix must be symmetric".into()));
        }
        Ok(Self { a2: a2.symmetrize(), a1, a0 })
    }

    pub fn affine(a1: Vec<f64>, a0: f64) -> Self {
        let n = a1.len();
        Self { a2: Matrix::zeros(n, n), a1, a0 }
    }

    pub fn dimension(&self) -> usize {
        self.a1.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * linalg::dot(x, &self.a2.matvec(x)) + linalg::dot(&self.a1, x) + self.a0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        linalg::add(&self.a2.matvec(x), &self.a1)
    }

    pub fn is_affine(&self) -> bool {
        self.a2.max_abs() <= AFFINE_TOL
    }

    /// Spectral split of the quadratic term into a difference of convex
    /// quadratics.
    pub fn to_dc(&self, domain: &Domain) -> Result<DcFunction> {
        let (plus, minus) = linalg::psd_split(&self.a2);
        let g = ConvexExpr::quad_form(plus, self.a1.clone(), self.a0)?;
        let h = ConvexExpr::quad_form(minus, vec![0.0; self.dimension()], 0.0)?;
        Ok(DcFunction::new(g, h, domain.clone()))
    }
}

/// Lipschitz modulus of the gradient of theta_j - theta_i: the largest
/// singular value of A_j - A_i, by power iteration. Zero for affine pairs.
pub fn lipschitz_modulus(pi: &QuadraticPiece, pj: &QuadraticPiece) -> f64 {
    let diff = pj.a2.sub_mat(&pi.a2);
    if diff.max_abs() <= AFFINE_TOL {
        return 0.0;
    }
    linalg::spectral_norm_sym(&diff)
}

/// A continuous piecewise-quadratic selection: pieces, their regions, a
/// convex hull domain for sampling, and the cached pairwise gradient
/// Lipschitz moduli.
#[derive(Debug, Clone)]
pub struct PiecewiseLc1 {
    pieces: Vec<QuadraticPiece>,
    regions: Vec<Polyhedron>,
    hull: Domain,
    moduli: Matrix,
    per_piece_modulus: Vec<f64>,
}

impl PiecewiseLc1 {
    pub fn new(pieces: Vec<QuadraticPiece>, regions: Vec<Polyhedron>, hull: Domain) -> Result<Self> {
        if pieces.is_empty() || pieces.len() != regions.len() {
            return Err(Error::Argument("pieces and regions must align and be nonempty".into()));
        }
        let n = hull.dimension();
        if pieces.iter().any(|p| p.dimension() != n) || regions.iter().any(|r| r.dimension() != n) {
            return Err(Error::Argument("piece/region dimension mismatch".into()));
        }
        for (i, r) in regions.iter().enumerate() {
            if r.is_empty()? {
                return Err(Error::EmptyRegion(format!("region {i} is empty")));
            }
        }
        let k = pieces.len();
        let mut moduli = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                moduli.set(i, j, lipschitz_modulus(&pieces[i], &pieces[j]));
            }
        }
        let per_piece_modulus = (0..k)
            .map(|i| (0..k).map(|j| moduli.get(j, i)).fold(0.0, f64::max))
            .collect();
        Ok(Self { pieces, regions, hull, moduli, per_piece_modulus })
    }

    pub fn pieces(&self) -> &[QuadraticPiece] {
        &self.pieces
    }

    pub fn regions(&self) -> &[Polyhedron] {
        &self.regions
    }

    pub fn hull(&self) -> &Domain {
        &self.hull
    }

    /// L_{ji} matrix (row j, column i).
    pub fn moduli(&self) -> &Matrix {
        &self.moduli
    }

    /// L_i = max_j L_{ji}.
    pub fn per_piece_modulus(&self) -> &[f64] {
        &self.per_piece_modulus
    }

    /// Selection value: the piece of the first region containing x.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        for (piece, region) in self.pieces.iter().zip(&self.regions) {
            if region.contains(x, polyhedral::FEAS_TOL) {
                return Ok(piece.value(x));
            }
        }
        Err(Error::Domain("point lies in no piece region".into()))
    }

    pub fn region_index(&self, x: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(x, polyhedral::FEAS_TOL))
    }

    /// Rejection-sample a point of region `i` from the hull bounding box.
    pub fn sample_region(&self, i: usize, rng: &mut SplitMix64) -> Option<Vec<f64>> {
        let (lo, hi) = self.hull.bounding_box().ok()?;
        for _ in 0..2000 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| rng.uniform(*l, *u)).collect();
            if self.regions[i].contains(&x, polyhedral::FEAS_TOL) {
                return Some(x);
            }
        }
        None
    }

    /// Rejection-sample a point of the union of regions.
    pub fn sample_union(&self, rng: &mut SplitMix64) -> Option<Vec<f64>> {
        let (lo, hi) = self.hull.bounding_box().ok()?;
        for _ in 0..2000 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| rng.uniform(*l, *u)).collect();
            if self.regions.iter().any(|r| r.contains(&x, polyhedral::FEAS_TOL)) {
                return Some(x);
            }
        }
        None
    }
}

/// Outcome of the min-representation construction.
#[derive(Debug, Clone)]
pub struct MinRepresentation {
    /// psi_i: dc majorants of the selection agreeing with theta_i on S_i.
    pub majorants: Vec<DcFunction>,
    /// The full function, as the pointwise minimum of the majorants.
    pub theta: DcFunction,
}

fn distance_expr(region: &Polyhedron, label: &str) -> ConvexExpr {
    let region = region.clone();
    ConvexExpr::certified(format!("dist_to_{label}"), move |x: &[f64]| {
        polyhedral::distance(x, &region)
    })
}

fn distance_sq_expr(region: &Polyhedron, label: &str) -> ConvexExpr {
    let region = region.clone();
    ConvexExpr::certified(format!("dist_sq_to_{label}"), move |x: &[f64]| {
        let d = polyhedral::distance(x, &region)?;
        Ok(d * d)
    })
}

/// Sampled midpoint-containment check that the union of the regions is
/// convex; 1000 pairs drawn with a fixed internal stream.
fn check_union_convex(pw: &PiecewiseLc1) -> Result<()> {
    let mut rng = SplitMix64::new(0x5eed);
    let mut pairs = 0;
    while pairs < 1000 {
        let Some(x) = pw.sample_union(&mut rng) else { break };
        let Some(y) = pw.sample_union(&mut rng) else { break };
        pairs += 1;
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        // Loose membership tolerance: boundary misses at roundoff scale are
        // sampling artifacts, not witnesses.
        if !pw.regions.iter().any(|r| r.contains(&mid, 1e-7)) {
            return Err(Error::NonConvexUnion(format!(
                "midpoint of {x:?} and {y:?} escapes every region"
            )));
        }
    }
    Ok(())
}

/// Build the dc min-representation of a piecewise LC1 selection.
pub fn build_min_representation(pw: &PiecewiseLc1) -> Result<MinRepresentation> {
    check_union_convex(pw)?;
    let hull = pw.hull.clone();
    let k = pw.pieces.len();
    let mut majorants = Vec::with_capacity(k);
    for i in 0..k {
        let theta_i = pw.pieces[i].to_dc(&hull)?;
        if k == 1 {
            majorants.push(theta_i);
            continue;
        }
        let label = format!("region_{i}");
        let dist = DcFunction::from_convex(distance_expr(&pw.regions[i], &label), hull.clone());

        // max_j ||grad theta_j(x) - grad theta_i(x)||_2 as a max of affine norms.
        let mut norm_children = Vec::with_capacity(k);
        let mut all_affine_diffs = true;
        let mut const_norms: Vec<f64> = Vec::with_capacity(k);
        for j in 0..k {
            let dm = pw.pieces[j].a2.sub_mat(&pw.pieces[i].a2);
            let dv = linalg::sub(&pw.pieces[j].a1, &pw.pieces[i].a1);
            if dm.max_abs() > AFFINE_TOL {
                all_affine_diffs = false;
            }
            const_norms.push(linalg::norm2(&dv));
            norm_children.push(ConvexExpr::norm2_affine(dm, dv)?);
        }

        let grad_term = if all_affine_diffs {
            // Gradient differences are constant; the factor is a scalar.
            let gamma = const_norms.iter().fold(0.0f64, |m, v| m.max(*v));
            dc::combine_linear(&[(gamma, &dist)])?
        } else {
            let grad_norm =
                DcFunction::from_convex(ConvexExpr::max_of(norm_children)?, hull.clone());
            dc::product(&dist, &grad_norm)?
        };

        let li = pw.per_piece_modulus[i];
        let mut parts: Vec<(f64, &DcFunction)> = vec![(1.0, &theta_i), (1.0, &grad_term)];
        let dist_sq;
        if li > 0.0 {
            dist_sq = DcFunction::from_convex(
                distance_sq_expr(&pw.regions[i], &label),
                hull.clone(),
            );
            parts.push((1.5 * li, &dist_sq));
        }
        majorants.push(dc::combine_linear(&parts)?);
    }
    let theta = dc::pointwise_extremum(Extremum::Min, &majorants)?;
    Ok(MinRepresentation { majorants, theta })
}

/// Min-representation specialized to affine pieces:
/// theta(x) = min_i [theta_i(x) + dist(x; S_i) * max_j ||a_j - a_i||].
pub fn pwa_min_representation(
    pieces: &[QuadraticPiece],
    regions: &[Polyhedron],
    hull: &Domain,
) -> Result<DcFunction> {
    if pieces.iter().any(|p| !p.is_affine()) {
        return Err(Error::Argument("pwa representation requires affine pieces".into()));
    }
    let pw = PiecewiseLc1::new(pieces.to_vec(), regions.to_vec(), hull.clone())?;
    Ok(build_min_representation(&pw)?.theta)
}
