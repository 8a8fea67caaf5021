use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    // audio
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid mix parameter: {0}")]
    InvalidMixParams(&'static str),
    #[error("silent or below absolute gate")]
    BelowAbsoluteGate,
    #[error("background below gate; cannot set margin")]
    BackgroundBelowGate,
    #[error("foreground below gate; cannot set margin")]
    ForegroundBelowGate,
    #[error("too short for STFT: {len} samples, need at least {needed}")]
    TooShortForStft { len: usize, needed: usize },
    #[error("sample rate mismatch: expected {expected} Hz, got {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    // catalog
    #[error("pairing arity violation: `{class}` has {found} backgrounds, expected 4")]
    PairingArity { class: String, found: usize },
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("duplicate background `{background}` for `{class}`")]
    DuplicateBackground { class: String, background: String },
    #[error("class `{0}` is paired with itself")]
    SelfPairing(String),
    #[error("pairing table is empty")]
    EmptyTable,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot split {0} classes")]
    CannotSplit(usize),
    #[error("canonical split needs class `{0}`, which the table lacks")]
    MissingCanonicalClass(String),
    #[error("invalid score {0}, expected 1..=5")]
    InvalidScore(u8),
    #[error("unknown class `{0}`")]
    UnknownClass(String),

    // episodes
    #[error("invalid episode spec: {0}")]
    InvalidEpisodeSpec(&'static str),
    #[error("need {needed} classes for an episode, split has {available}")]
    NotEnoughClasses { needed: usize, available: usize },
    #[error("hard-ood coverage infeasible for class tuple")]
    HardOodInfeasible,
    #[error("ood background assignment infeasible for class tuple")]
    OodInfeasible,
    #[error("pool exhausted for foreground `{fg}` with background `{bg}`")]
    PoolExhausted { fg: String, bg: String },

    // embeddings
    #[error("non-finite embedding for `{0}`")]
    NonFiniteEmbedding(String),
    #[error("dimension mismatch for `{clip}`: expected {expected}, found {found}")]
    DimensionMismatch { clip: String, expected: usize, found: usize },
    #[error("duplicate clip `{0}`")]
    DuplicateClip(String),
    #[error("no embedding for clip `{0}`")]
    MissingEmbedding(String),
    #[error("empty frame matrix for `{0}`")]
    EmptyFrames(String),
    #[error("invalid generator parameter: {0}")]
    InvalidModel(&'static str),

    // heads
    #[error("no local descriptors for `{0}`")]
    NoLocalDescriptors(String),
    #[error("cannot normalize a zero-norm embedding")]
    CannotNormalize,
    #[error("sinkhorn budget exceeded (residual {residual:e})")]
    SinkhornBudgetExceeded { residual: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),
    #[error("malformed task: {0}")]
    MalformedTask(&'static str),

    // geometry / stats
    #[error("no direction for a zero vector")]
    NoDirection,
    #[error("degenerate prototype: mean vector is zero")]
    DegeneratePrototype,
    #[error("missing clean reference for class `{0}`")]
    MissingCleanReference(String),
    #[error("empty sample")]
    EmptySample,
    #[error("vector dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    // eval
    #[error("incomparable reports")]
    IncomparableReports,
    #[error("episode {index}: {source}")]
    Episode { index: usize, source: Box<Error> },
    #[error("matrix cell ({row}, {col}): {source}")]
    Cell { row: usize, col: usize, source: Box<Error> },
}

impl Error {
    pub fn in_episode(self, index: usize) -> Self {
        Error::Episode { index, source: Box::new(self) }
    }

    pub fn in_cell(self, row: usize, col: usize) -> Self {
        Error::Cell { row, col, source: Box::new(self) }
    }
}
