use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] lim_core::Error),
    #[error(transparent)]
    Eval(#[from] lim_eval::Error),
    #[error(transparent)]
    Data(#[from] lim_synth::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("input {actual} does not match the configured {expected}")]
    Resolution { expected: String, actual: String },
    #[error("non-finite loss {value} at step {step}")]
    Diverged { step: usize, value: f64 },
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
