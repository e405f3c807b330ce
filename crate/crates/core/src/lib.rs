//! Polynomial diffusion models for long-term electricity forwards.

pub mod error;
pub mod linalg;
pub mod model;
pub mod pricing;
pub mod qkf;
pub mod calibrate;
pub mod simhedge;
pub mod cli;

pub use error::{Error, ErrorKind, Result};
