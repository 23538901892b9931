//! Error type shared by all toolkit modules.

use thiserror::Error;

/// Crate-wide error enum. Variants map one-to-one onto the failure modes of
/// the constructors and operations that raise them.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A point lies outside a function's domain, two operands carry
    /// different domains, or a log composition is not bounded away from its
    /// singularity.
    #[error("domain error: {0}")]
    Domain(String),

    /// An envelope scan detected a direction along which the auxiliary
    /// objective decreases without bound, i.e. the inner optimum is not
    /// attained.
    #[error("unbounded auxiliary direction: {0}")]
    UnboundedAuxiliary(String),

    /// An operation that needs finite infima was handed an unbounded domain.
    #[error("unbounded domain: {0}")]
    UnboundedDomain(String),

    /// Malformed argument (empty list, coefficient out of range, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// A sampled certification of convexity or monotonicity failed.
    #[error("certification failed: {0}")]
    Certification(String),

    /// Problem size exceeds the enumeration caps.
    #[error("scale error: {0}")]
    Scale(String),

    /// The polyhedron has no feasible point.
    #[error("empty polyhedron: {0}")]
    EmptyPolyhedron(String),

    /// The quadratic-term matrix failed its copositivity screen, so the
    /// value function is identically -inf on every feasible right-hand side.
    #[error("copositivity check failed: {0}")]
    FailedCopositivity(String),

    /// The queried parameter pair lies outside the value function's domain
    /// of finiteness.
    #[error("parameter pair outside domain of finiteness: {0}")]
    NotInDomain(String),

    /// The supplied region is not contained in the domain of finiteness.
    #[error("region not inside domain of finiteness: {0}")]
    RegionNotInDomain(String),

    /// Positive definiteness was required but the smallest eigenvalue is
    /// below the threshold.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A value-function piece failed its constancy check, so the piecewise
    /// quadratic structure cannot be trusted.
    #[error("piece is not a quadratic: {0}")]
    PieceNotQuadratic(String),

    /// A piece region has no feasible point.
    #[error("empty piece region: {0}")]
    EmptyRegion(String),

    /// The union of the piece regions failed the sampled convexity check.
    #[error("piece regions do not form a convex union: {0}")]
    NonConvexUnion(String),

    /// The folded function admits no difference-of-convex decomposition
    /// (its right derivative at zero is infinite).
    #[error("not a dc function: {0}")]
    NotDc(String),

    /// Numerical linear algebra failure (singular system where a solution
    /// was required).
    #[error("linear algebra error: {0}")]
    Linalg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
