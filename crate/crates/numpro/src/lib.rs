//! File formats, frame IO, inference and the command line for NumPro.

pub mod cli;
pub mod client;
pub mod config;
pub mod dataset;
pub mod decode;
pub mod eval;
pub mod frames;
pub mod jsonl;
pub mod provider;
pub mod retry;
pub mod search;
