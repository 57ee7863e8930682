use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension n = {n} (need n >= 4)")]
    UnsupportedDimension { n: usize },

    #[error("{what} is not a unit vector (norm {norm})")]
    NonUnitVector { what: &'static str, norm: f64 },

    #[error("block structure violated in {block}: deviation {deviation:.3e}")]
    Structural { block: &'static str, deviation: f64 },

    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("point lies outside the atom hull (phase-one residual {separation:.3e})")]
    OutsideHull { separation: f64 },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(&'static str),

    #[error("state is already at the constraint set")]
    AtConstraintSet,

    #[error("segment endpoint leaves the relaxed set (sign {sign}, margin {margin:.3e})")]
    EndpointOutside { sign: i8, margin: f64 },

    #[error("amplitude is not aligned with e1 (|W e1| = {norm:.3e})")]
    Misaligned { norm: f64 },

    #[error("wave direction is parallel to the time axis")]
    DegenerateDirection,

    #[error("amplitude has a vanishing temporal column")]
    ZeroTemporalColumn,

    #[error("covering reached only {achieved:.4} of the target {target:.4}")]
    Covering { achieved: f64, target: f64 },

    #[error("anchor ball leaves the grid box")]
    Placement,

    #[error("mollifier radius {r} below twice the grid step {h}")]
    UnderResolvedKernel { r: f64, h: f64 },

    #[error("grid would need {bytes} bytes, above the memory guard")]
    GridTooLarge { bytes: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iteration {j}: mollification ladder failed after retries (distances {distances:?})")]
    Ladder { j: usize, distances: Vec<f64> },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed field dump: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
