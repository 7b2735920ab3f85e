//! Grid-exact augmentation: axial 90° rotations, mirroring, crop shifts.

use rand::Rng;

use crate::phantom::sequence::CeCtSequence;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Quarter turns in the axial (y, x) plane.
    pub quarter_turns: u8,
    /// Flip along x after rotating.
    pub mirror: bool,
    /// Crop-window shift `(dz, dy, dx)` in voxels; vacated voxels become background.
    pub shift: [i32; 3],
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        mirror: false,
        shift: [0, 0, 0],
    };

    /// Shifts are bounded by 10% of the extent.
    pub fn random<R: Rng + ?Sized>(extent: [usize; 3], rng: &mut R) -> Self {
        let square = extent[1] == extent[2];
        let quarter_turns = if square {
            rng.random_range(0..4)
        } else {
            2 * rng.random_range(0..2)
        };
        let shift = std::array::from_fn(|i| {
            let max = (extent[i] / 10) as i32;
            if max == 0 {
                0
            } else {
                rng.random_range(-max..=max)
            }
        });
        Self {
            quarter_turns,
            mirror: rng.random_bool(0.5),
            shift,
        }
    }
}

/// Draws an [`Augmentation`] and applies it.
pub fn augment<R: Rng + ?Sized>(seq: &CeCtSequence, rng: &mut R) -> CeCtSequence {
    apply_augmentation(seq, Augmentation::random(seq.extent(), rng))
}

/// Applies `aug` identically to every phase and channel. Labels are untouched.
pub fn apply_augmentation(seq: &CeCtSequence, aug: Augmentation) -> CeCtSequence {
    let [d, h, w] = seq.extent();
    let mut turns = aug.quarter_turns % 4;
    if h != w && turns % 2 == 1 {
        // A quarter turn of a non-square plane would change the shape.
        turns = (turns + 1) % 4;
    }
    let shape = seq.volumes.shape().to_vec();
    let planes = shape[0] * shape[1];
    let v = d * h * w;
    let src = seq.volumes.data();
    let mut out = vec![0.0; src.len()];
    for plane in 0..planes {
        let s = &src[plane * v..(plane + 1) * v];
        let o = &mut out[plane * v..(plane + 1) * v];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    // Output voxel (z, y, x) reads the shifted crop position...
                    let (zs, ys, xs) = (
                        z as i64 + aug.shift[0] as i64,
                        y as i64 + aug.shift[1] as i64,
                        x as i64 + aug.shift[2] as i64,
                    );
                    if zs < 0 || ys < 0 || xs < 0 || zs >= d as i64 || ys >= h as i64 || xs >= w as i64 {
                        continue;
                    }
                    let (zs, mut ys, mut xs) = (zs as usize, ys as usize, xs as usize);
                    // ...undoes the mirror...
                    if aug.mirror {
                        xs = w - 1 - xs;
                    }
                    // ...then undoes the rotation; odd turns only occur on square planes.
                    if turns >= 2 {
                        ys = h - 1 - ys;
                        xs = w - 1 - xs;
                    }
                    if turns % 2 == 1 {
                        (ys, xs) = (w - 1 - xs, ys);
                    }
                    o[(z * h + y) * w + x] = s[(zs * h + ys) * w + xs];
                }
            }
        }
    }
    CeCtSequence {
        patient_id: seq.patient_id.clone(),
        volumes: Tensor::from_vec(&shape, out).expect("same shape"),
        label: seq.label,
        margin: seq.margin,
        truth: seq.truth,
    }
}
