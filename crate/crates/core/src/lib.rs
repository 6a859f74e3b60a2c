//! QTMT intra partition search with CNN depth capping and probability-ordered
//! split testing.

pub mod bench;
pub mod cli;
pub mod ddff;
pub mod error;
pub mod frame_io;
pub mod intra;
pub mod metrics;
pub mod pipeline;
pub mod ppbe;
pub mod qtmt;

pub use error::{Error, Result};
