//! Difference-of-convex (dc) construction toolkit.
//!
//! The crate builds explicit, evaluable dc decompositions `f = g - h` (both
//! components convex by construction) for several families of nonconvex
//! functions, and pairs every construction with an independent numerical
//! oracle so a decomposition can be certified on sampled data:
//!
//! - [`expr`]: convex expression trees with by-construction convexity rules
//!   and exact evaluation, including the auxiliary-variable envelope nodes
//!   used by the risk measures.
//! - [`dc`]: the dc-function algebra (linear combinations, squares,
//!   products, norms, pointwise extrema, monotone-convex and negative-log
//!   composition).
//! - [`risk`]: discrete-scenario risk and deviation functionals (CVaR, VaR,
//!   optimized certainty equivalents, variance, standard deviation, and
//!   centered deviation families) with brute-force oracles.
//! - [`polyhedral`]: exact desk-scale polyhedral computations (vertices,
//!   extreme rays, LP with duals, projection).
//! - [`qp`]: the parametric quadratic-program value function for fixed
//!   quadratic and constraint matrices: domain membership, stationarity
//!   enumeration, quadratic piece extraction, and dc assembly.
//! - [`piecewise`]: min-representations of piecewise quadratic and affine
//!   functions as dc functions.
//! - [`folded`]: dc decompositions of folded concave penalties with a
//!   built-in catalog (SCAD, MCP, capped-l1, ...).
//! - [`verify`]: the seeded sampling harness that certifies convexity, dc
//!   identities, and Lipschitz-gradient bounds, and aggregates reports.

pub mod dc;
pub mod error;
pub mod expr;
pub mod folded;
pub mod linalg;
pub mod piecewise;
pub mod polyhedral;
pub mod qp;
pub mod risk;
pub mod rng;
pub mod verify;

pub use dc::DcFunction;
pub use error::{Error, Result};
pub use expr::{ConvexExpr, Domain};
pub use linalg::Matrix;
pub use polyhedral::Polyhedron;
pub use rng::SplitMix64;
pub use verify::CheckReport;
