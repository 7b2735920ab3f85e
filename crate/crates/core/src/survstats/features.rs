//! Small hand-crafted intensity and shape descriptors for the radiomics-style baseline.

use crate::error::{Error, Result};
use crate::phantom::{CeCtSequence, CT_CHANNEL, PANCREAS_CHANNEL, TUMOR_CHANNEL};

const PER_PHASE: [&str; 8] = [
    "tumor_mean",
    "tumor_std",
    "tumor_p10",
    "tumor_p50",
    "tumor_p90",
    "parenchyma_mean",
    "parenchyma_std",
    "contrast",
];
const SHAPE: [&str; 3] = ["volume", "surface", "infiltration"];

/// Feature count for a sequence with `phases` phases.
pub fn feature_count(phases: usize) -> usize {
    PER_PHASE.len() * phases + SHAPE.len()
}

/// Names in output order: `phase{p}_{stat}` for each phase, then the shape features.
pub fn feature_names(phases: usize) -> Vec<String> {
    let mut out: Vec<String> = (0..phases)
        .flat_map(|p| PER_PHASE.iter().map(move |s| format!("phase{}_{s}", p + 1)))
        .collect();
    out.extend(SHAPE.iter().map(|s| s.to_string()));
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per phase: tumor mean, std and 10/50/90th percentiles, parenchyma
/// (pancreas minus tumor) mean and std, and tumor-minus-parenchyma mean
/// contrast. Then tumor volume in voxels, boundary voxel count (tumor voxels
/// with a 6-neighbour outside the tumor or the crop) and the fraction of
/// tumor voxels outside the pancreas mask.
///
/// An empty parenchyma region contributes zeros. Standard deviations are
/// population values.
pub fn simple_feature_extract(seq: &CeCtSequence) -> Result<Vec<f64>> {
    let tumor = seq.channel(0, TUMOR_CHANNEL);
    let pancreas = seq.channel(0, PANCREAS_CHANNEL);
    let volume = tumor.iter().filter(|&&m| m == 1.0).count();
    if volume == 0 {
        return Err(Error::invalid(format!("patient {}: empty tumor mask", seq.patient_id)));
    }
    let mut out = Vec::with_capacity(feature_count(seq.phases()));
    for p in 0..seq.phases() {
        let ct = seq.channel(p, CT_CHANNEL);
        let mut t: Vec<f64> = (0..ct.len()).filter(|&i| tumor[i] == 1.0).map(|i| ct[i]).collect();
        let par: Vec<f64> = (0..ct.len())
            .filter(|&i| pancreas[i] == 1.0 && tumor[i] == 0.0)
            .map(|i| ct[i])
            .collect();
        let (tm, ts) = mean_std(&t);
        t.sort_by(f64::total_cmp);
        let (pm, ps) = mean_std(&par);
        let contrast = if par.is_empty() { 0.0 } else { tm - pm };
        out.extend([
            tm,
            ts,
            percentile(&t, 0.1),
            percentile(&t, 0.5),
            percentile(&t, 0.9),
            pm,
            ps,
            contrast,
        ]);
    }
    let [d, h, w] = seq.extent();
    let at = |z: isize, y: isize, x: isize| -> bool {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && tumor[(z as usize * h + y as usize) * w + x as usize] == 1.0
    };
    let mut surface = 0usize;
    let mut outside = 0usize;
    for z in 0..d as isize {
        for y in 0..h as isize {
            for x in 0..w as isize {
                if !at(z, y, x) {
                    continue;
                }
                let i = (z as usize * h + y as usize) * w + x as usize;
                if pancreas[i] == 0.0 {
                    outside += 1;
                }
                let neighbours = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if neighbours.iter().any(|(dz, dy, dx)| !at(z + dz, y + dy, x + dx)) {
                    surface += 1;
                }
            }
        }
    }
    out.extend([volume as f64, surface as f64, outside as f64 / volume as f64]);
    Ok(out)
}
