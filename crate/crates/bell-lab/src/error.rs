use crate::core::SettingPair;

/// Crate-wide error type. The CLI maps these onto its exit-code contract.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("correlation for setting pair {0} is missing")]
    MissingCorrelation(SettingPair),

    #[error("correlation for setting pair {pair} is {value}, outside [-1, 1]")]
    CorrelationOutOfRange { pair: SettingPair, value: f64 },

    #[error("invalid response probabilities: p_plus={p_plus}, p_minus={p_minus}")]
    InvalidResponse { p_plus: f64, p_minus: f64 },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("no coincidences for setting pair {0}; correlation undefined")]
    ZeroCoincidences(SettingPair),

    #[error("simulation metadata unavailable: {0}")]
    MissingMetadata(&'static str),

    #[error("distribution cell structures do not match ({0} vs {1} cells)")]
    CellMismatch(usize, usize),

    #[error("efficiency constraint infeasible at eta={0}")]
    Infeasible(f64),

    #[error("bisection interval [{lo}, {hi}] does not bracket the target")]
    NonBracketing { lo: f64, hi: f64 },

    #[error("invalid strategy mixture: {0}")]
    InvalidMixture(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed log record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
