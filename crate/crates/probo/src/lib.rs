//! File formats, persistence and the command line for the probo ledger.

pub mod cli;
pub mod files;
