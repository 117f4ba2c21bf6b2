use icvi_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },

    #[error("missing required flag --{0}")]
    MissingFlag(&'static str),

    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 schema, 3 data or checkpoint, 4 numeric divergence, 5 i/o, 6 failed gradient check, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::MissingFlag(_) => 2,
            CliError::GradcheckFailed(_) => 6,
            CliError::Core(e) => match e {
                CoreError::Schema { .. } | CoreError::Checkpoint(_) => 3,
                CoreError::Divergence { .. } | CoreError::NonFinite { .. } => 4,
                CoreError::Io { .. } => 5,
                CoreError::InvalidGeometry(_) | CoreError::Alignment { .. } => 2,
                _ => 1,
            },
        }
    }
}
