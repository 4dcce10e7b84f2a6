use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state graph is disconnected: {reached} of {n} states reachable from state 0")]
    DisconnectedGraph { reached: usize, n: usize },

    #[error("detailed balance violated: relative residual {residual:e} at ({i}, {j})")]
    DetailedBalanceViolated { residual: f64, i: usize, j: usize },

    #[error("stationary distribution is not strictly positive: pi[{index}] = {value:e}")]
    NonPositiveStationary { index: usize, value: f64 },

    #[error("stationary distribution sums to {sum}, expected 1")]
    UnnormalizedStationary { sum: f64 },

    #[error("invalid rate {rate} for transition ({i}, {j})")]
    InvalidRate { i: usize, j: usize, rate: f64 },

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("adjacency is not symmetric at ({i}, {j})")]
    AsymmetricAdjacency { i: usize, j: usize },

    #[error("adjacency has a self loop at vertex {0}")]
    SelfLoop(usize),

    #[error("symmetrized generator deviates from symmetry by {residual:e} (relative)")]
    AsymmetryResidual { residual: f64 },

    #[error("expected exactly one zero eigenvalue, found {zeros}")]
    RankDeficiency { zeros: usize },

    #[error("symmetrized generator has a negative eigenvalue {value:e}")]
    NotPositiveSemidefinite { value: f64 },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("killing rate must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("selected index set is empty")]
    EmptySelection,

    #[error("index {0} selected more than once")]
    DuplicateIndex(usize),

    #[error("principal block of the fundamental matrix is singular or indefinite")]
    SingularPrincipalBlock,

    #[error("complement block of the rate matrix is singular")]
    SingularComplementBlock,

    #[error("basis does not span the stationary direction: residual {residual:e}")]
    NullSpaceNotSpanned { residual: f64 },

    #[error("basis columns are not orthonormal: residual {residual:e}")]
    NotOrthonormal { residual: f64 },

    #[error("selection size {k} must satisfy 1 <= k < {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("exhaustive search over subsets of size {s} from {n} states exceeds the caps (s <= 4, n <= 16)")]
    TooLargeForBruteForce { n: usize, s: usize },

    #[error("invalid (r, s, k) = ({r}, {s}, {k}): need r < s <= k")]
    InvalidRsk { r: usize, s: usize, k: usize },

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix input is not symmetric: entry ({i}, {j}) has no matching transpose")]
    AsymmetricInput { i: usize, j: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable variant name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::DetailedBalanceViolated { .. } => "DetailedBalanceViolated",
            Error::NonPositiveStationary { .. } => "NonPositiveStationary",
            Error::UnnormalizedStationary { .. } => "UnnormalizedStationary",
            Error::InvalidRate { .. } => "InvalidRate",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::AsymmetricAdjacency { .. } => "AsymmetricAdjacency",
            Error::SelfLoop(..) => "SelfLoop",
            Error::AsymmetryResidual { .. } => "AsymmetryResidual",
            Error::RankDeficiency { .. } => "RankDeficiency",
            Error::NotPositiveSemidefinite { .. } => "NotPositiveSemidefinite",
            Error::NegativeTime(..) => "NegativeTime",
            Error::NonPositiveGamma(..) => "NonPositiveGamma",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFinite => "NonFinite",
            Error::EmptySelection => "EmptySelection",
            Error::DuplicateIndex(..) => "DuplicateIndex",
            Error::SingularPrincipalBlock => "SingularPrincipalBlock",
            Error::SingularComplementBlock => "SingularComplementBlock",
            Error::NullSpaceNotSpanned { .. } => "NullSpaceNotSpanned",
            Error::NotOrthonormal { .. } => "NotOrthonormal",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::TooLargeForBruteForce { .. } => "TooLargeForBruteForce",
            Error::InvalidRsk { .. } => "InvalidRsk",
            Error::EigenFailure => "EigenFailure",
            Error::Parse { .. } => "Parse",
            Error::AsymmetricInput { .. } => "AsymmetricInput",
            Error::InvalidArgument(..) => "InvalidArgument",
            Error::Io(..) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
