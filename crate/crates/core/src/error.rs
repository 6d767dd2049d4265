use thiserror::Error;

pub type Result<T, E = GapFillError> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum GapFillError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("insufficient contiguous data: no fully observed window of length {window}")]
    InsufficientContiguousData { window: usize },
    #[error("singular system")]
    SingularSystem,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient pre-history: {available} observed samples, need {required}")]
    InsufficientPreHistory { available: usize, required: usize },
    #[error("insufficient post-history: {available} observed samples, need {required}")]
    InsufficientPostHistory { available: usize, required: usize },
    #[error("series unusable: {observed} observed samples, need at least {required}")]
    SeriesUnusable { observed: usize, required: usize },
    #[error("invalid pipeline: {0}")]
    Structure(#[from] StructureError),
    #[error("node {node} failed to fit: {source}")]
    NodeFit {
        node: u32,
        #[source]
        source: Box<GapFillError>,
    },
    #[error("model is not fitted")]
    NotFitted,
    #[error("no feasible pipeline in the initial population")]
    NoFeasiblePipeline,
    #[error("infeasible gap spec: {0}")]
    InfeasibleGapSpec(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value produced: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Structural rule violated by a pipeline graph.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("empty pipeline")]
    Empty,
    #[error("too many nodes: {count} > {max}")]
    TooManyNodes { count: usize, max: usize },
    #[error("duplicate node id {0}")]
    DuplicateId(u32),
    #[error("node {node} references unknown parent {parent}")]
    UnknownParent { node: u32, parent: u32 },
    #[error("node {node} lists parent {parent} more than once")]
    DuplicateParent { node: u32, parent: u32 },
    #[error("root {0} is not a node")]
    UnknownRoot(u32),
    #[error("cycle through node {0}")]
    Cycle(u32),
    #[error("multiple sinks: {0:?}")]
    MultipleSinks(Vec<u32>),
    #[error("sink {sink} is not the declared root {root}")]
    RootNotSink { root: u32, sink: u32 },
    #[error("arity violation at node {node}: {rule}")]
    Arity { node: u32, rule: &'static str },
    #[error("invalid hyperparameter at node {node}: {rule}")]
    Hyperparameter { node: u32, rule: &'static str },
}
