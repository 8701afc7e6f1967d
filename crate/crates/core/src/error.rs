use thiserror::Error;

use crate::model::{OrderId, Pos, ShelfId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("grid must be at least 1x1, got {height}x{width}")]
    EmptyGrid { height: u32, width: u32 },
    #[error("position {pos} outside {height}x{width} grid")]
    OutOfBounds { pos: Pos, height: u32, width: u32 },
    #[error("cell {pos} already holds a fixed entity")]
    CellOccupied { pos: Pos },
    #[error("item vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("item {item}: {required} required but only {available} available")]
    InsufficientInventory {
        item: usize,
        available: u32,
        required: u32,
    },
    #[error("item {item} out of range for {num_items} item types")]
    UnknownItem { item: u32, num_items: usize },
    #[error("order {order} has an all-zero demand")]
    EmptyDemand { order: OrderId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("order {0} already has a soft allocation record")]
    DuplicateOrder(OrderId),
    #[error("order {0} has no live soft allocation record")]
    UnknownRecord(OrderId),
    #[error("shelf {0} is not carried by a robot")]
    ShelfNotCarried(ShelfId),
    #[error("order {order} cannot be covered by available inventory")]
    Infeasible { order: OrderId },
    #[error("top-k size must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("potential of an empty active-time vector")]
    EmptyVector,
    #[error("every action is masked out")]
    FullyMasked,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("malformed dataset: {0}")]
    Invalid(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no decision is pending")]
    NoPendingDecision,
    #[error("invalid action {index}: {reason}")]
    InvalidAction { index: usize, reason: String },
    #[error("episode aborted at t={time}: {reason}")]
    Aborted { time: u64, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("replay diverged at line {line}: expected `{expected}`, got `{actual}`")]
    ReplayMismatch {
        line: usize,
        expected: String,
        actual: String,
    },
}
