pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod exploit;
pub mod kernels;
pub mod models;
pub mod synthdata;
pub mod trainer;

pub use error::{DilError, Result};
