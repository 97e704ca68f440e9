#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod ccm;
pub mod channel;
pub mod crb;
pub mod dictionary;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod localizer;
pub mod parallel;
pub mod phase;
pub mod protocol;

pub use error::{Error, Result};
