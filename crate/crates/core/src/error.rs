use crate::machine::{AtomId, BlockId, PayloadKind};

/// Every failure the simulator and the algorithms built on it can report.
///
/// Machine-level variants are hard errors: a step that would violate the
/// model is rejected and leaves the machine untouched.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("invalid machine configuration: {0}")]
    Config(String),
    #[error("step {step}: processors {first} and {second} both write block {block}")]
    CrewViolation {
        step: u64,
        block: BlockId,
        first: usize,
        second: usize,
    },
    #[error("cache of processor {proc} would hold {len} atoms (capacity {capacity})")]
    CacheOverflow {
        proc: usize,
        len: usize,
        capacity: usize,
    },
    #[error("block {block} would hold {len} atoms (capacity {capacity})")]
    BlockOverflow {
        block: BlockId,
        len: usize,
        capacity: usize,
    },
    #[error("atom {atom} is not resident in the cache of processor {proc}")]
    NotResident { proc: usize, atom: AtomId },
    #[error("block {0} does not exist")]
    NoSuchBlock(BlockId),
    #[error("processor {proc} does not exist (P = {p})")]
    NoSuchProcessor { proc: usize, p: usize },
    #[error("step carries {got} requests but the machine has {expected} processors")]
    StepWidth { expected: usize, got: usize },
    #[error("normalized mode: active processors mix reads and writes")]
    NotNormalized,
    #[error("atom {atom} has payload kind {found:?}, expected {expected:?}")]
    KindError {
        atom: AtomId,
        expected: PayloadKind,
        found: PayloadKind,
    },
    #[error("edges ({0}, {1}) and ({2}, {3}) do not share a middle vertex")]
    NoSharedVertex(u64, u64, u64, u64),
    #[error("target is not a permutation: {0}")]
    NotAPermutation(String),
    #[error("labeling is not two-regular: {0}")]
    BadLabeling(String),
    #[error("links do not form a single simple path: {0}")]
    NotAPath(String),
    #[error("set is not independent: {0}")]
    DependentSet(String),
    #[error("round guard tripped after {rounds} rounds (limit {limit})")]
    GuardTripped { rounds: usize, limit: usize },
    #[error("corrupt bridge record: {0}")]
    CorruptRecord(String),
    #[error("instance too large for enumeration: N = {0}")]
    TooLarge(usize),
    #[error("layout is not an output for the special instance class: {0}")]
    NotSpecialClass(String),
    #[error("operation log does not reach the full product")]
    IncompleteEvaluation,
    #[error("need at least 3 rows to fit, got {0}")]
    InsufficientData(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal scheduling error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
