use crate::series::{Channel, Resolution};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Csv { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid series: {0}")]
    SeriesInvariant(String),

    #[error("refusing to disaggregate {have} to finer {want}")]
    DisaggregationRefused { have: Resolution, want: Resolution },

    #[error("series start {start} is not aligned to a {target} interval boundary")]
    MisalignedStart { start: String, target: Resolution },

    #[error("need at least two observed points, found {found}")]
    TooFewObserved { found: usize },

    #[error("series metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("alignment is empty: every measured value is missing")]
    EmptyAlignment,

    #[error("simulated series has a gap at index {index}")]
    SimulatedGap { index: usize },

    #[error("series does not span whole days (len {len}, {steps_per_day} steps per day)")]
    PartialDays { len: usize, steps_per_day: usize },

    #[error("{op} needs a resolution finer than {limit}, got {got}")]
    ResolutionTooCoarse {
        op: &'static str,
        limit: Resolution,
        got: Resolution,
    },

    #[error("simulation weather is capped at hourly, got {got}")]
    WeatherResolutionCap { got: Resolution },

    #[error("weather field missing in both sources: {0}")]
    BothSourcesMissing(String),

    #[error("channel {channel} is not calibratable: {reason}")]
    NotCalibratable { channel: Channel, reason: String },

    #[error("{op} needs at least {need} points, got {got}")]
    TooFewPoints {
        op: &'static str,
        need: usize,
        got: usize,
    },

    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,

    #[error("cluster count k={k} out of range for {n} points")]
    BadClusterCount { k: usize, n: usize },

    #[error("empty k range: k_min {k_min} > k_max {k_max}")]
    EmptyKRange { k_min: usize, k_max: usize },

    #[error("mixture fit needs at least 2 elite samples, got {got}")]
    TooFewElites { got: usize },

    #[error("degenerate mixture: acceptance rate below 1e-4 after {draws} draws")]
    DegenerateMixture { draws: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter {name}={value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("heating set-point {heat} exceeds cooling set-point {cool}")]
    SetpointOrder { heat: f64, cool: f64 },

    #[error("simulation unstable at step {step}: zone temperature {temp}")]
    UnstableSimulation { step: usize, temp: f64 },

    #[error("every sample in the batch failed: first error: {first}")]
    AllSamplesFailed { first: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Distinguishes bad inputs (CLI exit code 1) from failures that occur
    /// while running on valid inputs (exit code 2).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::DegenerateMixture { .. }
                | Error::UnstableSimulation { .. }
                | Error::AllSamplesFailed { .. }
                | Error::Json(_)
        )
    }
}
