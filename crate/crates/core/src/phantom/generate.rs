//! Synthetic three-phase cohorts with planted survival and margin signal.
//!
//! Each patient gets an ellipsoidal pancreas and an ellipsoidal tumor
//! centered in the crop. A latent score `z ~ N(0, 1)` sets the tumor's
//! venous-phase attenuation through `u = Φ(z)`: at `u = 0` the tumor stays
//! hypo-attenuating in both contrast phases, at `u = 1` it is hypo in the
//! pancreatic phase and iso/hyper in the venous phase. Survival is
//! exponential with log-hazard `log(base_hazard) − attenuation_effect·z +
//! margin_effect·[R1]`, where R1 means the tumor extends past the pancreas
//! mask by more than the infiltration threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};
use crate::losses::{MarginLabel, SurvivalLabel};
use crate::phantom::sequence::{
    CeCtSequence, PlantedTruth, CHANNELS, CT_CHANNEL, PANCREAS_CHANNEL, PHASES, TUMOR_CHANNEL,
};
use crate::tensor::Tensor;

/// Soft-tissue window in HU.
pub const HU_WINDOW: (f64, f64) = (-100.0, 200.0);

/// Mean pancreas enhancement per phase (non-contrast, pancreatic, venous), HU.
const PANCREAS_HU: [f64; PHASES] = [40.0, 110.0, 95.0];
/// Tumor minus pancreas in the first two phases, HU.
const TUMOR_OFFSET_HU: [f64; 2] = [-5.0, -45.0];
/// Venous-phase tumor contrast runs from `VENOUS_HYPO` (u = 0) to `VENOUS_HYPO + VENOUS_SPAN` (u = 1).
const VENOUS_HYPO: f64 = -40.0;
const VENOUS_SPAN: f64 = 55.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub n_patients: usize,
    pub extent: usize,
    /// Log-hazard decrease per standard deviation of latent iso-attenuation.
    pub attenuation_effect: f64,
    /// Log-hazard increase for an R1 margin.
    pub margin_effect: f64,
    /// Target fraction of censored patients, in `[0, 1)`.
    pub censoring_rate: f64,
    /// Baseline hazard per month.
    pub base_hazard: f64,
    /// Voxel noise standard deviation in HU.
    pub noise_sigma: f64,
    /// Probability a tumor is placed across the pancreas boundary.
    pub r1_prevalence: f64,
    /// Infiltration fraction above which the margin is R1.
    pub infiltration_threshold: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            n_patients: 200,
            extent: 16,
            attenuation_effect: 1.5,
            margin_effect: 2.0,
            censoring_rate: 0.3,
            base_hazard: 1.0 / 24.0,
            noise_sigma: 10.0,
            r1_prevalence: 0.15,
            infiltration_threshold: 0.1,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("phantom params: {m}")));
        if self.extent < 8 {
            return fail("extent must be at least 8");
        }
        if self.n_patients < 2 {
            return fail("need at least 2 patients");
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return fail("censoring_rate must lie in [0, 1)");
        }
        if !(self.base_hazard > 0.0 && self.base_hazard.is_finite()) {
            return fail("base_hazard must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.r1_prevalence) {
            return fail("r1_prevalence must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.infiltration_threshold) {
            return fail("infiltration_threshold must lie in [0, 1)");
        }
        if !self.attenuation_effect.is_finite() || !self.margin_effect.is_finite() {
            return fail("effects must be finite");
        }
        Ok(())
    }
}

struct Anatomy {
    volumes: Tensor,
    infiltration: f64,
}

fn ellipsoid_contains(p: [f64; 3], center: [f64; 3], axes: [f64; 3]) -> bool {
    (0..3)
        .map(|i| ((p[i] - center[i]) / axes[i]).powi(2))
        .sum::<f64>()
        <= 1.0
}

fn draw_anatomy(params: &PhantomParams, iso: f64, invasive: bool, rng: &mut ChaCha8Rng) -> Anatomy {
    let s = params.extent;
    let sf = s as f64;
    let c = (sf - 1.0) / 2.0;
    let center = [c; 3];
    let tumor_axes: [f64; 3] = std::array::from_fn(|_| sf * rng.random_range(0.14..0.22));
    let pancreas_axes: [f64; 3] = std::array::from_fn(|_| sf * rng.random_range(0.30..0.40));

    // Random direction for the pancreas center relative to the tumor.
    let mut dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|v| *v /= norm);

    let offset = if invasive {
        // Pancreas boundary passes close to the tumor center.
        let reach = 1.0 / (0..3).map(|i| (dir[i] / pancreas_axes[i]).powi(2)).sum::<f64>().sqrt();
        let mean_r = tumor_axes.iter().sum::<f64>() / 3.0;
        reach + rng.random_range(-0.3..0.3) * mean_r
    } else {
        let min_a = pancreas_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_t = tumor_axes.iter().cloned().fold(0.0, f64::max);
        rng.random_range(0.0..1.0) * (min_a - max_t - 0.5).max(0.0)
    };
    let pancreas_center: [f64; 3] = std::array::from_fn(|i| center[i] + offset * dir[i]);

    let v = s * s * s;
    let mut tumor = vec![0.0; v];
    let mut pancreas = vec![0.0; v];
    for z in 0..s {
        for y in 0..s {
            for x in 0..s {
                let p = [z as f64, y as f64, x as f64];
                let i = (z * s + y) * s + x;
                if ellipsoid_contains(p, center, tumor_axes) {
                    tumor[i] = 1.0;
                }
                if ellipsoid_contains(p, pancreas_center, pancreas_axes) {
                    pancreas[i] = 1.0;
                }
            }
        }
    }
    let tumor_voxels = tumor.iter().sum::<f64>();
    let outside = tumor
        .iter()
        .zip(&pancreas)
        .filter(|(&t, &p)| t == 1.0 && p == 0.0)
        .count() as f64;
    let infiltration = outside / tumor_voxels;

    let jitter = Normal::new(0.0, 8.0).expect("valid sigma");
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).expect("valid sigma");
    let pancreas_hu: [f64; PHASES] = std::array::from_fn(|p| PANCREAS_HU[p] + jitter.sample(rng));
    let tumor_hu = [
        pancreas_hu[0] + TUMOR_OFFSET_HU[0] + 0.5 * jitter.sample(rng),
        pancreas_hu[1] + TUMOR_OFFSET_HU[1] + 0.5 * jitter.sample(rng),
        pancreas_hu[2] + VENOUS_HYPO + VENOUS_SPAN * iso,
    ];

    let mut data = Vec::with_capacity(PHASES * CHANNELS * v);
    for phase in 0..PHASES {
        let mut ct = vec![0.0; v];
        let mut fg = Vec::new();
        for i in 0..v {
            let base = if tumor[i] == 1.0 {
                tumor_hu[phase]
            } else if pancreas[i] == 1.0 {
                pancreas_hu[phase]
            } else {
                continue;
            };
            let hu = if params.noise_sigma > 0.0 {
                base + noise.sample(rng)
            } else {
                base
            };
            ct[i] = hu.clamp(HU_WINDOW.0, HU_WINDOW.1);
            fg.push(i);
        }
        let n = fg.len() as f64;
        let mean = fg.iter().map(|&i| ct[i]).sum::<f64>() / n;
        let var = fg.iter().map(|&i| (ct[i] - mean).powi(2)).sum::<f64>() / n;
        let inv_std = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
        for &i in &fg {
            ct[i] = (ct[i] - mean) * inv_std;
        }
        for ch in 0..CHANNELS {
            match ch {
                CT_CHANNEL => data.extend_from_slice(&ct),
                TUMOR_CHANNEL => data.extend_from_slice(&tumor),
                PANCREAS_CHANNEL => data.extend_from_slice(&pancreas),
                _ => unreachable!(),
            }
        }
    }
    Anatomy {
        volumes: Tensor::from_vec(&[PHASES, CHANNELS, s, s, s], data).expect("sized above"),
        infiltration,
    }
}

/// Upper bound `c` of `U(0, c)` censoring times giving the requested censored fraction.
fn censoring_bound(times: &[f64], rate: f64) -> f64 {
    // P(C < T_i) = min(T_i, c) / c, decreasing in c.
    let frac = |c: f64| times.iter().map(|&t| t.min(c) / c).sum::<f64>() / times.len() as f64;
    let mut lo = times.iter().cloned().fold(f64::INFINITY, f64::min) * 1e-6;
    let mut hi = times.iter().cloned().fold(0.0, f64::max);
    while frac(hi) > rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn patient_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index as u64) << 8 | stream);
    rng
}

/// Deterministic cohort for `params`; patient `i` depends only on `(seed, i)`.
pub fn generate_cohort(params: &PhantomParams) -> Result<Vec<CeCtSequence>> {
    params.validate()?;
    let std_normal = NormalDist::new(0.0, 1.0).expect("standard normal");
    let mut drafts = Vec::with_capacity(params.n_patients);
    for i in 0..params.n_patients {
        let mut rng = patient_rng(params.seed, i, 0);
        let z: f64 = StandardNormal.sample(&mut rng);
        let iso = std_normal.cdf(z);
        let invasive = rng.random_bool(params.r1_prevalence);
        let anatomy = draw_anatomy(params, iso, invasive, &mut rng);
        let margin = if anatomy.infiltration > params.infiltration_threshold {
            MarginLabel::R1
        } else {
            MarginLabel::R0
        };
        let log_hazard =
            params.base_hazard.ln() - params.attenuation_effect * z + params.margin_effect * margin.as_f64();
        let time = Exp::new(log_hazard.exp())
            .map_err(|e| Error::invalid(format!("hazard {log_hazard}: {e}")))?
            .sample(&mut rng);
        drafts.push((z, iso, anatomy, margin, time));
    }

    let bound = (params.censoring_rate > 0.0).then(|| {
        let times: Vec<f64> = drafts.iter().map(|d| d.4).collect();
        censoring_bound(&times, params.censoring_rate)
    });

    drafts
        .into_iter()
        .enumerate()
        .map(|(i, (_, iso, anatomy, margin, time))| {
            let (observed, event) = match bound {
                Some(c) => {
                    let censor = patient_rng(params.seed, i, 1).random_range(0.0..c);
                    if censor < time {
                        (censor, false)
                    } else {
                        (time, true)
                    }
                }
                None => (time, true),
            };
            let mut seq = CeCtSequence::new(
                format!("P{i:04}"),
                anatomy.volumes,
                SurvivalLabel::new(observed.max(1e-3), event)?,
                margin,
            )?;
            seq.truth = Some(PlantedTruth {
                iso,
                infiltration: anatomy.infiltration,
            });
            Ok(seq)
        })
        .collect()
}
