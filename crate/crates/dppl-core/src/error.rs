use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors returned by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file did not conform to one of the on-disk formats.
    #[error("{path}: {detail}")]
    FileFormat { path: String, detail: String },

    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("labels length {labels} does not match embedding rows {rows}")]
    LabelMismatch { labels: usize, rows: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: u32 },

    #[error("class {}has no private samples", .class.map(|c| format!("{c} ")).unwrap_or_default())]
    EmptyClass { class: Option<u32> },

    #[error("class {class} has {available} rows, fewer than its target count {required}")]
    ClassTooSmall {
        class: u32,
        available: usize,
        required: usize,
    },

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("ledger error: {0}")]
    Ledger(String),

    #[error("minority quartile empty: need at least 4 classes, have {classes}")]
    MinorityQuartileEmpty { classes: u32 },

    /// Wraps an error with the pipeline stage it occurred in.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches a pipeline stage label, used by experiment drivers and the CLI.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn invalid(name: &'static str, detail: impl Into<String>) -> Error {
        Error::InvalidParameter {
            name,
            detail: detail.into(),
        }
    }
}
