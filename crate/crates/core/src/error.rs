use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: missing header tag <{0}>")]
    MissingTag(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("link {link} has BPR power {power}; only quartic costs (power 4) are supported")]
    UnsupportedExponent { link: usize, power: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("OD pair {origin} -> {destination} is disconnected")]
    Disconnected { origin: usize, destination: usize },

    #[error("infeasible routing program: {0}")]
    Infeasible(String),

    #[error("objective is not convex along the search direction (curvature {curvature:e} at iteration {iteration})")]
    NonConvex { iteration: usize, curvature: f64 },

    #[error("subnetwork {0} is empty")]
    EmptyGroup(usize),

    #[error("selection is empty")]
    EmptySelection,

    #[error("link id {id} out of range for {len} links")]
    OutOfRange { id: usize, len: usize },

    #[error("no cluster count up to {n_c_max} covers every flow within epsilon; uncovered types: {uncovered:?}")]
    Coverage { n_c_max: usize, uncovered: Vec<usize> },

    #[error("attack type {0} belongs to more than one cluster")]
    OverlappingClusters(usize),

    #[error("pair set is empty: every attack type falls in one cluster, nothing to distinguish")]
    EmptyPairSet,

    #[error("attack type {type_id} has zero variance on sensed link {link}")]
    ZeroVariance { type_id: usize, link: usize },

    #[error("node coordinates are required but missing")]
    MissingCoordinates,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
