use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Assumption,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("graph has no leader")]
    NoLeader,

    #[error("graph is disconnected")]
    Disconnected,

    #[error("graph has no spanning tree rooted at leader {0}")]
    NoSpanningTree(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("pair is not stabilizable: uncontrollable mode at {re:.6}{im:+.6}i")]
    NotStabilizable { re: f64, im: f64 },

    #[error("pair is not detectable: unobservable mode at {re:.6}{im:+.6}i")]
    NotDetectable { re: f64, im: f64 },

    #[error("riccati solver failed: {0}")]
    Riccati(String),

    #[error("sample stamp {stamp} is later than evaluation time {t}")]
    TimeBeforeStamp { stamp: f64, t: f64 },

    #[error("event bracket violated: f({t_lo}) = {f_lo:e}, f({t_hi}) = {f_hi:e}")]
    Bracket {
        t_lo: f64,
        t_hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("zeno guard: agent {agent} exceeded {limit} events within one time unit at t = {t}")]
    ZenoGuard { agent: usize, t: f64, limit: f64 },

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Disconnected
            | Error::NoSpanningTree(_)
            | Error::NotStabilizable { .. }
            | Error::NotDetectable { .. }
            | Error::Riccati(_) => ErrorKind::Assumption,
            Error::ZenoGuard { .. }
            | Error::NonFiniteState(_)
            | Error::StepUnderflow(_)
            | Error::Bracket { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Runtime,
            _ => ErrorKind::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
