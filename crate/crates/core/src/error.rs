use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("fusion degenerate: total conflict {conflict} between opinions {first} and {second}")]
    FusionDegenerate {
        first: usize,
        second: usize,
        conflict: f64,
    },

    #[error("fusion degenerate for sample ids {0:?}")]
    DegenerateSamples(Vec<u64>),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("embedding row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("class {0} has no training samples")]
    EmptyClass(usize),

    #[error("empty split")]
    EmptySplit,

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
