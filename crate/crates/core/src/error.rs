use crate::ingest::npy::NpyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown task id {task} (valid ids are 1..={max})")]
    UnknownTask { task: usize, max: usize },

    #[error("cannot combine batches of task {0} and task {1}")]
    TaskMismatch(usize, usize),

    #[error("environment construction failed: {0}")]
    Construction(String),

    #[error("task {0} has no samples")]
    EmptyBatch(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is rank deficient; re-initialization required")]
    RankDeficient,

    #[error("input is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Npy(#[from] NpyError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
