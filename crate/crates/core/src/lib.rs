//! Core algorithms for building and scoring background-correlation few-shot
//! audio benchmarks.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO: waveforms,
//! pairing tables, clip pools and embedding sets are passed in as values.
//! File formats, WAV handling and the command-line driver live in the
//! `spurbench` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod catalog;
pub mod embeddings;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod heads;
pub mod loudness;
pub mod mixer;
pub mod rng;
pub mod stats;

mod fft;
mod linalg;
mod math;

pub use error::{Error, Result};
