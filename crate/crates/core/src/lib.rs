//! Simulation and verification laboratory for the capacity of the range of
//! simple random walk on `Z^d`, `d = 3, 4, 5`.
//!
//! The crate has three layers:
//!
//! * exact machinery: lattice Green's functions ([`green`]), exact walk
//!   distributions and moment oracles ([`oracle`]), and a symbolic
//!   graph-reduction calculus with replayable certificates ([`graph`]);
//! * Monte Carlo estimators: escape probabilities and capacities
//!   ([`capacity`]), cross terms and dyadic decompositions ([`cross`]);
//! * experiment drivers: scaling fits, tail counts, rate functions
//!   ([`deviation`]).
//!
//! Everything randomized runs on counter-based streams ([`rng`]) so results
//! are byte-identical for a fixed seed, independent of worker count.

pub mod capacity;
pub mod cross;
pub mod deviation;
pub mod graph;
pub mod green;
pub mod lattice;
pub mod oracle;
pub(crate) mod par;
pub mod rng;
pub mod stats;

pub use green::{GreenTable, SqrtGreenTable};
pub use lattice::{Point, WalkSegment};
pub use rng::{derive_stream, RngStream};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension {0} unsupported: need 3 <= d <= 5 (transience)")]
    BadDimension(u8),
    #[error("walk length {len} not divisible by {divisor}")]
    IndivisibleLength { len: u64, divisor: u64 },
    #[error("piece index {j} out of range 1..={max} at level {l}")]
    PieceIndex { l: u32, j: u64, max: u64 },
    #[error("walk must have even length, got {0}")]
    OddLength(u64),
    #[error("truncation radius {r_esc} too small for set of radius {set_radius}")]
    TruncationTooTight { r_esc: f64, set_radius: f64 },
    #[error("singular argument: x = 0")]
    SingularPoint,
    #[error("nonpositive input: {0}")]
    NonPositive(&'static str),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("quadrature did not converge: residual {0:.3e}")]
    QuadratureResidual(f64),
    #[error("rule {rule} does not match at pivot {pivot}: expected {expected}, found {found}")]
    RuleMismatch {
        rule: String,
        pivot: String,
        expected: String,
        found: String,
    },
    #[error("reduction stuck at {0}: no rule applies")]
    ReductionStuck(String),
    #[error("invalid two-to-one map: {0}")]
    BadPhi(String),
    #[error("malformed table file: {0}")]
    BadTableFile(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
