//! The two-branch prognosis network.
//!
//! The early-fusion branch reads all phases stacked as channels together
//! with the masks; the recurrent branch encodes each phase with a shared
//! encoder and feeds the maps through the ConvLSTM in phase order. Both are
//! globally average-pooled and concatenated before the risk and margin heads.

mod blocks;
pub mod checkpoint;
mod config;
mod net;

pub use blocks::Head;
pub use config::{ModelConfig, Readout, Variant, DEFAULT_HEAD_HIDDEN, KERNEL};
pub use net::{BatchInput, ForwardCache, LossBreakdown, PrognosisNet, PrognosisOutput};
