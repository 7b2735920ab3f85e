//! Synthetic cohorts, augmentation, and the on-disk dataset format.

mod augment;
mod generate;
pub mod io;
mod sequence;

pub use augment::{apply_augmentation, augment, Augmentation};
pub use generate::{generate_cohort, PhantomParams, HU_WINDOW};
pub use io::{read_dataset, write_dataset};
pub use sequence::{
    CeCtSequence, PlantedTruth, CHANNELS, CT_CHANNEL, PANCREAS_CHANNEL, PHASES, TUMOR_CHANNEL,
};
