//! File formats, checkpoints and the `drss` command line around
//! [`drss_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod history;
pub mod io;
pub mod pipeline;

pub use error::{DrssError, Result};
