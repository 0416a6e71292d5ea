use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids")]
    IncompatibleGrids,
    #[error("column out of range")]
    ColumnOutOfRange,
    #[error("slope level mismatch")]
    SlopeLevelMismatch,
    #[error("interval/width mismatch")]
    IntervalWidthMismatch,
    #[error("family too large: {0}")]
    FamilyTooLarge(String),
    #[error("corrupt choice map")]
    CorruptChoiceMap,
    #[error("choice escapes interval")]
    ChoiceEscapesInterval,
    #[error("degenerate seed")]
    DegenerateSeed,
    #[error("dyadic delta required")]
    DyadicDeltaRequired,
    #[error("not a good collection: {0}")]
    NotGood(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
