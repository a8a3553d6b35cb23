use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel `{name}` returned a non-finite value at r = {r}")]
    NonFiniteKernel { name: String, r: f64 },

    #[error("simulation blew up: max |x| = {observed:.6e} exceeds 10x the radius bound {bound:.6e}")]
    Unstable { observed: f64, bound: f64 },

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("not a probability measure: total mass = {0}")]
    NotProbability(f64),

    #[error("ambient dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error(
        "combined support of {atoms} atoms exceeds the exact-transport cap of {cap} in dimension >= 2; \
         project to one dimension or subsample first"
    )]
    SupportTooLarge { atoms: usize, cap: usize },

    #[error("non-finite value f({location}) at an atom with positive weight")]
    NonFiniteAtAtom { location: f64 },

    #[error("spline domain [0, {domain_end}] does not cover the observed distance {distance}")]
    DomainTooSmall { domain_end: f64, distance: f64 },

    #[error("misfit is degenerate on the support of rho (squared norm {0:.3e} below threshold)")]
    DegenerateMisfit(f64),

    #[error("wasserstein distance is zero but the convolutions differ by {0:.3e}")]
    ConvolutionContract(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
