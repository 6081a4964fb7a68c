use std::fmt;

/// Exit status classes: usage 2, configuration 3, anything at run time 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { kind: String, msg: String },
    Runtime { kind: String, msg: String },
}

/// Error kinds that mean the caller's configuration was rejected.
const CONFIG_KINDS: &[&str] = &[
    "InvalidConfig",
    "InvalidSpec",
    "SpecInfeasible",
    "InvalidBudget",
    "InsufficientTrainingBudget",
    "InvalidGrid",
    "InvalidSteps",
    "UnknownSampler",
    "UnknownMode",
    "UnknownDomain",
    "InvalidBandwidth",
    "InvalidSampleCap",
    "KOutOfRange",
    "InvalidPermutations",
    "TargetIsCandidate",
    "EmptyCandidates",
];

impl CliError {
    pub fn config(kind: &str, msg: impl Into<String>) -> Self {
        CliError::Config {
            kind: kind.to_string(),
            msg: msg.into(),
        }
    }

    pub fn runtime(kind: &str, msg: impl Into<String>) -> Self {
        CliError::Runtime {
            kind: kind.to_string(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config { .. } => 3,
            CliError::Runtime { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = |s: &str| s.replace('\n', " ");
        match self {
            CliError::Usage(m) => write!(f, "error: kind=Usage msg={}", one_line(m)),
            CliError::Config { kind, msg } | CliError::Runtime { kind, msg } => {
                write!(f, "error: kind={kind} msg={}", one_line(msg))
            }
        }
    }
}

impl From<emtransfer::Error> for CliError {
    fn from(e: emtransfer::Error) -> Self {
        let kind = e.kind();
        if CONFIG_KINDS.contains(&kind) {
            CliError::config(kind, e.to_string())
        } else {
            CliError::runtime(kind, e.to_string())
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                emtransfer::Error::from(e).into()
            }
        })*
    };
}

via_core!(
    emtransfer::data::DataError,
    emtransfer::model::ModelError,
    emtransfer::mmd::MmdError,
    emtransfer::uncertainty::UncertaintyError,
    emtransfer::sampling::SamplingError,
    emtransfer::adapt::AdaptError,
    emtransfer::segeval::EvalError,
    emtransfer::stats::StatsError,
    emtransfer::synth::SynthError,
    emtransfer::pretrain::PretrainError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime("IoError", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime("SerializationError", e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
