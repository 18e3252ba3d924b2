use thiserror::Error;

/// A single rejected row from an ingested file.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate data-generating process: {0}")]
    DegenerateDgp(String),
    #[error("collinear columns: {}", columns.join(", "))]
    Collinearity { columns: Vec<String> },
    #[error("clustering error: {0}")]
    Clustering(String),
    #[error("{what} did not converge (achieved residual {residual:e})")]
    Convergence { what: String, residual: f64 },
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("model not identified: {0}")]
    Identification(String),
    #[error("degenerate instruments: {0}")]
    WeakInstrument(String),
    #[error("inconsistent score standardization: {0}")]
    Standardization(String),
    #[error("diagnostic error: {0}")]
    Diagnostic(String),
    #[error("sample too small: {0}")]
    SampleSize(String),
    #[error(
        "SNP alignment failed; only in weights: [{}]; only in genotypes: [{}]",
        only_in_weights.join(", "),
        only_in_genotypes.join(", ")
    )]
    Alignment {
        only_in_weights: Vec<String>,
        only_in_genotypes: Vec<String>,
    },
    #[error("degenerate score: {0}")]
    DegenerateScore(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("binning error: {0}")]
    Binning(String),
    #[error("unknown qualification category: {0}")]
    Mapping(String),
    #[error("fits are not nested: {0}")]
    Nesting(String),
    #[error("{} invalid rows in {path}; first: {}", errors.len(), errors.first().map(|e| e.to_string()).unwrap_or_default())]
    Ingestion { path: String, errors: Vec<RowError> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("randomization inference failed: {0}")]
    Randomization(String),
    #[error("stage `{stage}` failed{}: {source}", spec.as_ref().map(|s| format!(" for spec `{s}`")).unwrap_or_default())]
    Stage {
        stage: String,
        spec: Option<String>,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery (rank, convergence,
    /// degenerate data) as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::DegenerateDgp(_)
            | Error::Collinearity { .. }
            | Error::Clustering(_)
            | Error::Convergence { .. }
            | Error::EmptySample(_)
            | Error::Identification(_)
            | Error::WeakInstrument(_)
            | Error::Standardization(_)
            | Error::Diagnostic(_)
            | Error::DegenerateScore(_)
            | Error::Binning(_)
            | Error::Randomization(_) => true,
            _ => false,
        }
    }

    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io(_) => false,
            e => !e.is_numerical(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str, spec: Option<&str>) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            spec: spec.map(str::to_string),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
