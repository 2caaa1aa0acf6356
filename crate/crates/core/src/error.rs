use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing cell (unit {unit}, period {period})")]
    MissingCell { unit: String, period: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("effect not identified: {0}")]
    NotIdentified(String),

    #[error("block windows do not fit: at most {max_blocks} block(s) of this length and stride")]
    BlocksDoNotFit { max_blocks: usize },

    #[error("search space of {size} candidates exceeds the limit of {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_block(self, block: usize) -> Self {
        Error::Block {
            block,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used by the CLI error payload.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Dimension(_) => "dimension_mismatch",
            Error::MissingCell { .. } => "missing_cell",
            Error::Parse { .. } => "parse",
            Error::NotIdentified(_) => "not_identified",
            Error::BlocksDoNotFit { .. } => "blocks_do_not_fit",
            Error::SearchSpaceTooLarge { .. } => "search_space_too_large",
            Error::Block { source, .. } => source.kind(),
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
