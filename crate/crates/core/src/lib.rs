//! Clearing payment vectors for financial liability networks.
//!
//! A financial system is a set of nodes `0..n`, a row-stochastic matrix `pi`
//! of relative liabilities, strictly positive nominal obligations `p_bar` and
//! nonnegative external cash `e`. A clearing vector is a fixed point of the
//! clearing operator `p -> (p * pi + e) min p_bar` on `[0, p_bar]`, with the
//! convention that nodes unreachable from any cash receive zero payments.
//!
//! Every financial system has exactly one clearing vector under that
//! convention, regular or not. [`solver::solve_clearing`] computes it by
//! splitting the nodes into cash-accessible nodes (P), cashless nodes that
//! drain into P (A) and cashless nodes that never reach P (N), solving the P
//! block by two-sided monotone iteration and zeroing A and N.
//!
//! The library API indexes nodes from 0. Reports produced by the CLI and the
//! `to_json` helpers label nodes from 1.

pub mod cli;
pub mod gen;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod report;
pub mod solver;

pub use graph::{NodePartition, ReachabilityMatrix};
pub use model::{FinancialSystem, ModelError, PaymentVector, RawSystem};
pub use solver::{Method, SolveError, SolveOptions, SolveReport};
