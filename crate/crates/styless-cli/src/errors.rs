//! Error categories mapped to process exit codes:
//! 0 success, 2 usage, 3 data, 4 numerical.

use styless_core::attack::AttackError;
use styless_core::harness::AblationError;
use styless_core::harness::EvalError;
use styless_core::nn::TrainError;
use styless_core::tensor::TensorError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } | TensorError::NonFiniteInput => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::InvalidConfig(m) => CliError::Usage(m),
            AttackError::Setup(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        match e {
            AblationError::Attack(a) => a.into(),
            AblationError::Eval(ev) => ev.into(),
            AblationError::Tensor(t) => t.into(),
            AblationError::NoDepths => CliError::Usage(e.to_string()),
        }
    }
}

impl From<styless_core::nn::DatasetError> for CliError {
    fn from(e: styless_core::nn::DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<styless_core::nn::CheckpointError> for CliError {
    fn from(e: styless_core::nn::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}
