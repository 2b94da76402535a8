//! Distributed Stackelberg-equilibrium seeking for aggregative games with a
//! bilevel structure.
//!
//! Players minimize outer costs that depend on their own action and on an
//! aggregation term, where the aggregation is itself the minimizer of a sum
//! of local inner bifunctions. Two neighbor-communication engines search the
//! equilibrium: a second-order one that tracks the average inner Hessian,
//! and a first-order one that replaces the Hessian machinery with a
//! two-point gradient estimate over perturbed inner problems. A centralized
//! oracle provides exact references for tests and diagnostics, and a
//! config-driven runner emits trace CSVs and summary JSON.

pub mod benchmarks;
pub mod consensus;
pub mod diagnostics;
pub mod error;
pub mod fogd;
pub mod game;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod sogd;

pub use error::{Error, Result};
