use crate::error::{Error, Result};
use crate::losses::{MarginLabel, SurvivalLabel};
use crate::tensor::Tensor;

pub const PHASES: usize = 3;
pub const CHANNELS: usize = 3;
pub const CT_CHANNEL: usize = 0;
pub const TUMOR_CHANNEL: usize = 1;
pub const PANCREAS_CHANNEL: usize = 2;

/// Ground truth the phantom generator planted; not visible to models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedTruth {
    /// Iso-attenuation level in `[0, 1]` (0: hypo in the venous phase, 1: iso/hyper).
    pub iso: f64,
    /// Fraction of tumor voxels lying outside the pancreas mask.
    pub infiltration: f64,
}

/// One patient: `[phase, channel, z, y, x]` volumes plus outcome labels.
///
/// Channel 0 is the windowed, normalized CT (zero on background), channel 1
/// the binary tumor mask and channel 2 the binary pancreas mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CeCtSequence {
    pub patient_id: String,
    pub volumes: Tensor,
    pub label: SurvivalLabel,
    pub margin: MarginLabel,
    pub truth: Option<PlantedTruth>,
}

impl CeCtSequence {
    pub fn new(
        patient_id: impl Into<String>,
        volumes: Tensor,
        label: SurvivalLabel,
        margin: MarginLabel,
    ) -> Result<Self> {
        let seq = Self {
            patient_id: patient_id.into(),
            volumes,
            label,
            margin,
            truth: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn phases(&self) -> usize {
        self.volumes.shape()[0]
    }

    pub fn extent(&self) -> [usize; 3] {
        let s = self.volumes.shape();
        [s[2], s[3], s[4]]
    }

    pub fn voxels(&self) -> usize {
        self.extent().iter().product()
    }

    /// Flat slice of one `(phase, channel)` volume.
    pub fn channel(&self, phase: usize, channel: usize) -> &[f64] {
        let v = self.voxels();
        let start = (phase * CHANNELS + channel) * v;
        &self.volumes.data()[start..start + v]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.volumes.shape();
        if s.len() != 5 || s[1] != CHANNELS || s[0] == 0 {
            return Err(Error::shape(format!(
                "patient {}: volumes must be [phases, {CHANNELS}, z, y, x], got {s:?}",
                self.patient_id
            )));
        }
        let binary = |c: usize| {
            (0..self.phases()).all(|p| self.channel(p, c).iter().all(|&v| v == 0.0 || v == 1.0))
        };
        if !binary(TUMOR_CHANNEL) || !binary(PANCREAS_CHANNEL) {
            return Err(Error::invalid(format!(
                "patient {}: mask channels must be {{0,1}}-valued",
                self.patient_id
            )));
        }
        let tumor0 = self.channel(0, TUMOR_CHANNEL);
        if (1..self.phases()).any(|p| self.channel(p, TUMOR_CHANNEL) != tumor0) {
            return Err(Error::invalid(format!(
                "patient {}: tumor mask differs across phases",
                self.patient_id
            )));
        }
        Ok(())
    }
}
