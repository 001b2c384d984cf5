use thiserror::Error;

/// Errors raised by the lattice, sampling and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain has no interior vertex")]
    EmptyInterior,

    #[error("vertices {0} and {1} are not nearest neighbours")]
    NotAdjacent(usize, usize),

    #[error("cycle does not close: starts at {start}, ends at {end}")]
    OpenCycle { start: usize, end: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inverse temperature must be positive, got {0}")]
    NonPositiveBeta(f64),

    #[error("operation `{op}` does not support model {model}")]
    ModelMismatch { op: &'static str, model: String },

    #[error("plaquette sum residual {residual:e} on plaquette {plaquette} exceeds tolerance")]
    CorruptedConfig { plaquette: usize, residual: f64 },

    #[error("configuration carries {n_vortices} vortices; no potential exists")]
    VortexObstruction { n_vortices: usize },

    #[error("path sums disagree by {discrepancy:e} at vertex {vertex}")]
    PathDependence { vertex: usize, discrepancy: f64 },

    #[error("rejection budget of {budget} attempts exhausted while sampling the bad-event component")]
    RejectionBudgetExhausted { budget: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("potential is not strictly convex")]
    NonConvexPotential,

    #[error("environment blew up: |eta| = {value:e} exceeds guard {guard:e}")]
    Instability { value: f64, guard: f64 },

    #[error("jump rate {rate} exceeds thinning cap {cap}")]
    ThinningCapViolated { rate: f64, cap: f64 },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

pub type Result<T> = std::result::Result<T, Error>;
