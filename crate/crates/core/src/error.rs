use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("graph is disconnected: vertex {vertex} is not reachable from the component of vertex 0 ({component_size} vertices)")]
    Disconnected { vertex: usize, component_size: usize },

    #[error("involution is not equivariant: edge ({i}, {j}) has no matching image edge")]
    NotEquivariant { i: usize, j: usize },

    #[error("eigensolver residual {residual:e} exceeds tolerance for mode {mode}")]
    EigenResidual { mode: usize, residual: f64 },

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("source is nonzero at vertex {0}, outside the declared window")]
    SupportViolation(usize),

    #[error("ill-posed data: {0}")]
    IllPosed(String),

    #[error("rank of cluster {cluster} is ambiguous (singular value ratio {ratio:e} near threshold); use more points or a tighter cluster tolerance")]
    RankAmbiguity { cluster: usize, ratio: f64 },

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("map sends vertex {0} outside the target space")]
    ImageOutside(usize),

    #[error("t_min = {t_min} is below the discretization floor {floor}")]
    DiscretizationFloor { t_min: f64, floor: f64 },

    #[error("dimension is ambiguous: {0}")]
    DimensionAmbiguity(String),

    #[error("no candidate profile accepted: {0}")]
    Resolution(String),

    #[error("truncated spectrum ({kept} of {total} modes) without declared tail")]
    Truncated { kept: usize, total: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
