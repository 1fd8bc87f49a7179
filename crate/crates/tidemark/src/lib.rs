//! Training and evaluation toolkit for codec-robust collaborative speech
//! watermarking.

pub mod audio;
pub mod autodiff;
pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod training;

pub use error::{Error, Result};
