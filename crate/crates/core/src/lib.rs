//! Compositional visual-reasoning engine.
//!
//! Reasoning programs (sequences of typed opcodes with dependencies and
//! text arguments) are compiled into a DAG of small differentiable modules
//! and executed over region-level image features. Training support covers
//! decaying teacher forcing, IoU-based ground-truth matching, and a
//! frequency-normalized multi-task loss. A synthetic scene generator with
//! an exact symbolic oracle makes every mechanism checkable at desk scale.
//!
//! The crate is `no_std` (alloc required); IO, file formats, and the CLI
//! live in the companion `nmn-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod executor;
pub mod gradcheck;
pub mod guidance;
pub mod modules;
pub mod graph;
mod math;
pub mod params;
pub mod program;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{DataError, DiffError, ExecError, ParseError};
pub use tensor::{Real, Tensor};
