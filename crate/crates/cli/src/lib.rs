//! IO, file formats, training/evaluation drivers, and trace rendering for
//! the nmn-core reasoning engine.

pub mod config;
pub mod dataset;
pub mod evalcmd;
pub mod formats;
pub mod gradcheck_cmd;
pub mod parallel;
pub mod trace_render;
pub mod train;
