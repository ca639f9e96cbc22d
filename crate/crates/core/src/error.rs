use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("input slot {slot} is already used by symbol `{existing}`")]
    DuplicateSlot { slot: u32, existing: String },
    #[error("operator {op} expects {expected} operands, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("{op}: dimension mismatch ({lhs:?} vs {rhs:?})")]
    DimensionMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op} is not supported for {rows}x{cols} matrices")]
    UnsupportedDimension { op: &'static str, rows: usize, cols: usize },
    #[error("differentiation target is not a symbol")]
    NotASymbol,
    #[error("symbol `{0}` appears more than once in the dof list")]
    DuplicateDof(String),
    #[error("empty dof list")]
    NoDofs,
    #[error("symbols without an input slot: {}", .0.join(", "))]
    UnassignedSymbols(Vec<String>),
    #[error("kernel expects {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("array stride must be at least 1")]
    ZeroStride,
    #[error("array length {len} is not a multiple of stride {stride}")]
    RaggedArray { len: usize, stride: usize },
    #[error("dof layout is frozen; register dof arrays before adding energies")]
    LayoutFrozen,
    #[error("connectivity arity must be at least 1 and divide the index count")]
    BadConnectivity,
    #[error("element slot {slot} out of range for arity {arity}")]
    SlotOutOfRange { slot: usize, arity: usize },
    #[error("unknown handle: {0}")]
    UnknownHandle(&'static str),
    #[error("energy `{0}` never called set()")]
    EnergyNotSet(String),
    #[error("energy `{0}` has no dof symbols")]
    NoDofSymbols(String),
    #[error("energy `{energy}`: {message}")]
    Energy { energy: String, message: String },
    #[error("energy `{energy}` element {element}: index {index} out of bounds for array of {len} items")]
    IndexOutOfBounds { energy: String, element: usize, index: usize, len: usize },
    #[error("energy `{energy}` element {element} produced a non-finite value")]
    NonFinite { energy: String, element: usize },
    #[error("state vector has length {got}, layout expects {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("kernel backend: {0}")]
    Backend(String),
}
