//! File formats, configuration, the external denoiser bridge and the
//! experiment harness around `rds-core`.

#![deny(rust_2018_idioms)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod external;
pub mod harness;
pub mod io;

pub use error::{RdsError, Result};
