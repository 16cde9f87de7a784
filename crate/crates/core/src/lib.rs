#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;

pub mod adversarial;
pub mod aggregation_decoder;
pub mod captioner;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod imagination;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod text_encoder;

pub use error::{Error, Result};
