//! Multi-phase contrast-enhanced CT survival modeling from scratch.
//!
//! [`convlstm`] holds the recurrent cell, [`prognet`] the two-branch network,
//! [`losses`] the Cox and weighted cross-entropy objectives, [`survstats`]
//! the evaluation statistics, [`phantom`] the synthetic cohorts and
//! [`harness`] the cross-validated training and analysis pipeline.

pub mod convlstm;
pub mod error;
pub mod harness;
pub mod kv;
pub mod losses;
pub mod nn;
pub mod phantom;
pub mod prognet;
pub mod survstats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Param, Tensor};
