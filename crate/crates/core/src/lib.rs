//! Information-gain step annotation, reward computation, recursive context
//! summaries, and best-of-n guided search over simulated multi-hop research
//! worlds.

pub mod annotate;
pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod judge;
pub mod policy;
pub mod reward;
pub mod scorer;
pub mod search;
pub mod seed;
pub mod summary;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
