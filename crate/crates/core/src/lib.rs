//! Task-adaptive clustering for semi-supervised few-shot classification.

pub mod datagen;
pub mod embedder;
pub mod episodes;
pub mod error;
pub mod harness;
mod io;
pub mod linalg;
pub mod projection;
pub mod tac;

pub use error::{Result, TacError};
