//! Accounting, throughput, the ablation sweep and the command-line tool.

pub mod ablation;
pub mod config;
pub mod count;
pub mod throughput;
