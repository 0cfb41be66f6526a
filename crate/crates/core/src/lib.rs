//! Learned camera pipeline for extreme low-light RAW imaging.

pub mod app;
pub mod contrast;
pub mod error;
pub mod image;
pub mod loss;
pub mod net;
pub mod raw;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
