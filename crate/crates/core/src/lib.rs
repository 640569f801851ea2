//! Website-fingerprinting analysis toolkit.

pub mod classic;
pub mod defense;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod html;
pub mod nn;
pub mod par;
pub mod trace;
pub mod tune;

pub use error::{Error, Result};
