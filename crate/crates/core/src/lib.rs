pub mod config;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod error;
pub mod gla;
pub mod model;
pub mod neural;
pub mod synth;
pub mod trainer;
mod util;

pub use error::{Error, Result};
pub use util::{thread_count, THREADS_ENV};
