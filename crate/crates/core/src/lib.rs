//! Selective inference for anomalies detected after optimal-transport
//! domain adaptation.

pub mod engine;
pub mod error;
pub mod events;
pub mod harness;
pub mod mad;
pub mod ot;
pub mod selftest;
pub mod stats;

pub use error::{Error, Result};
