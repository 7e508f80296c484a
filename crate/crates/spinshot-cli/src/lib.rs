//! Command-line front end: experiment records, qubit lists and report output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod error;
pub mod format;
pub mod qubits;
pub mod records;
pub mod sidecar;
