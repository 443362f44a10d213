use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("inner circles {first} and {second} overlap or are closer than the minimum gap (gap {gap:e})")]
    Overlap { first: usize, second: usize, gap: f64 },

    #[error("inner circle {index} is not strictly inside the outer circle (gap {gap:e})")]
    OutsideOuter { index: usize, gap: f64 },

    #[error("conformal weight on component {component} is not strictly positive (min {min:e})")]
    NonPositiveWeight { component: usize, min: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature for block ({row}, {col}) did not converge: node doubling changed an entry by {change:e}")]
    QuadratureNotConverged { row: usize, col: usize, change: f64 },

    #[error("evaluation point at distance {distance:e} from the boundary is inside the floor {floor:e}")]
    TooCloseToBoundary { distance: f64, floor: f64 },

    #[error("eigen-solve failed: {0}")]
    EigenSolveFailed(String),

    #[error("mode {mode} is outside the resolved range (max {limit})")]
    ModeOutOfRange { mode: usize, limit: usize },

    #[error("cluster scan failed near comparison value {value}: {reason}")]
    GapScanFailed { value: f64, reason: String },

    #[error("cluster {cluster} holds more than one trigonometric term on component {component}")]
    ClusterUnderResolved { cluster: usize, component: usize },

    #[error("point at distance {distance:e} from component {component} lies outside its collar (width {width:e})")]
    OutsideCollar { component: usize, distance: f64, width: f64 },

    #[error("no interior evaluation strategy applies at ({x}, {y})")]
    NoStrategy { x: f64, y: f64 },

    #[error("disk of radius {radius} is not contained in the domain")]
    DiskOutsideDomain { radius: f64 },

    #[error("need at least {needed} samples above the noise floor, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
