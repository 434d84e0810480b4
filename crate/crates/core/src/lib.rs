//! Core algorithms for numbered-frame video temporal grounding.
//!
//! Everything in this crate is a pure function of its inputs and builds
//! without `std` (only `alloc` is required):
//!
//! - [`overlay`]: frame normalization, deterministic digit rendering and
//!   frame sampling plans.
//! - [`design`]: embedding-similarity scoring of overlay configurations.
//! - [`metrics`]: moment-retrieval and highlight-detection metrics.
//! - [`parse`]: classification of free-text model answers into spans.
//! - [`prompt`]: the question/answer and instruction templates.
//!
//! File formats, the command line and network clients live in the `numpro`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod design;
pub mod metrics;
pub mod overlay;
pub mod parse;
pub mod prompt;
pub mod span;

pub use span::{SpanError, TemporalSpan, TimeUnit};
