//! Geometric preprocessing: hip centering, limb-length normalization,
//! rotation about the vertical axis and temporal sub-sampling.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::skeleton::{SkeletonSequence, Topology, Warnings};

/// Target bone length per topology edge, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceLengths {
    /// Aligned with `Topology::edges()`.
    lengths: Vec<f64>,
}

impl ReferenceLengths {
    pub fn new(topo: &Topology, lengths: Vec<f64>) -> Result<Self> {
        if lengths.len() != topo.edges().len() {
            return Err(Error::config(format!(
                "{} reference lengths for {} edges",
                lengths.len(),
                topo.edges().len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::config(format!("reference length {l} is not positive")));
        }
        Ok(ReferenceLengths { lengths })
    }

    /// Mean bone length over every present body of every frame.
    pub fn estimate<'a>(
        seqs: impl IntoIterator<Item = &'a SkeletonSequence>,
        topo: &Topology,
    ) -> Result<Self> {
        let edges = topo.edges();
        let mut sum = vec![0.0; edges.len()];
        let mut count = 0usize;
        for seq in seqs {
            for frame in &seq.frames {
                for (_, pose) in frame.valid_bodies() {
                    for (s, &(a, b)) in sum.iter_mut().zip(edges) {
                        *s += pose[a].distance(pose[b]);
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::validation("no bodies to estimate reference lengths from"));
        }
        ReferenceLengths::new(topo, sum.into_iter().map(|s| s / count as f64).collect())
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// `edge-name meters` per line.
    pub fn to_text(&self, topo: &Topology) -> String {
        let mut out = format!("# reference bone lengths (m), topology {}\n", topo.id());
        for (&e, l) in topo.edges().iter().zip(&self.lengths) {
            writeln!(out, "{} {l:?}", topo.edge_name(e)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, topo: &Topology) -> Result<Self> {
        let mut lengths = vec![f64::NAN; topo.edges().len()];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::parse(i + 1, 1, "expected `edge meters`"))?;
            let slot = topo
                .edges()
                .iter()
                .position(|&e| topo.edge_name(e) == name)
                .ok_or_else(|| Error::parse(i + 1, 1, format!("unknown edge `{name}`")))?;
            lengths[slot] = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, name.len() + 2, "bad length"))?;
        }
        if lengths.iter().any(|l| l.is_nan()) {
            return Err(Error::config("reference length table does not cover every edge"));
        }
        ReferenceLengths::new(topo, lengths)
    }
}

/// Rescales every bone to its reference length, walking outward from the
/// root so bone directions are preserved. The root joint stays in place.
///
/// A zero-length bone reuses that bone's direction from the previous frame
/// (or +x in the first frame) and records a warning.
pub fn normalize_limbs(
    seq: &SkeletonSequence,
    reference: &ReferenceLengths,
    topo: &Topology,
    warnings: &mut Warnings,
) -> Result<SkeletonSequence> {
    let edges = topo.edges();
    let slots = seq.body_slots();
    let mut last_dir = vec![vec![Vec3::X; edges.len()]; slots];
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        for (slot, body) in frame.bodies.iter_mut().enumerate() {
            let Some(pose) = body else { continue };
            if pose.len() != topo.joint_count() {
                return Err(Error::shape(format!(
                    "frame {t}: pose has {} joints, topology {}",
                    pose.len(),
                    topo.joint_count()
                )));
            }
            let src = pose.clone();
            for (e, (&(parent, child), &len)) in edges.iter().zip(reference.lengths()).enumerate() {
                let bone = src[child] - src[parent];
                let norm = bone.norm();
                let dir = if norm > 1e-12 {
                    bone * (1.0 / norm)
                } else {
                    warnings.push(format!(
                        "sequence `{}`, frame {t}, body {slot}: zero-length bone {}",
                        seq.id,
                        topo.edge_name((parent, child))
                    ));
                    last_dir[slot][e]
                };
                last_dir[slot][e] = dir;
                pose[child] = pose[parent] + dir * len;
            }
        }
    }
    Ok(out)
}

/// Translates each body so its root (hip center) joint sits at the origin.
pub fn center_on_hip(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    let root = topo.root();
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        for (slot, pose) in frame.bodies.iter_mut().enumerate() {
            let Some(pose) = pose else { continue };
            let hip = *pose.get(root).ok_or_else(|| {
                Error::validation(format!("frame {t}, body {slot}: missing hip joint"))
            })?;
            if !hip.is_finite() {
                return Err(Error::validation(format!(
                    "frame {t}, body {slot}: invalid hip joint"
                )));
            }
            for p in pose.iter_mut() {
                *p = *p - hip;
            }
        }
    }
    Ok(out)
}

/// Rotates every joint about the Y axis:
/// `(x, y, z) -> (x cos + z sin, y, -x sin + z cos)`.
pub fn rotate_y(seq: &SkeletonSequence, angle_degrees: f64) -> SkeletonSequence {
    let rad = angle_degrees.to_radians();
    seq.map_joints(|p| p.rotate_y(rad))
}

/// `count` copies rotated by multiples of `360 / count` degrees, starting at 0.
pub fn rotation_augment(seq: &SkeletonSequence, count: usize) -> Vec<SkeletonSequence> {
    (0..count.max(1))
        .map(|k| {
            if k == 0 {
                seq.clone()
            } else {
                rotate_y(seq, 360.0 * k as f64 / count as f64)
            }
        })
        .collect()
}

/// Frame indices picked by `sample_subsequences`.
///
/// With `total >= n` the sequence is cut into `n` contiguous blocks (the
/// first `total % n` blocks get one extra frame) and one frame is drawn
/// uniformly from each. Shorter sequences map block `i` to `floor(i*total/n)`.
pub fn sample_indices(total: usize, n: usize, seed: u64) -> Vec<usize> {
    assert!(n >= 1, "need at least one sub-sequence");
    if total < n {
        return (0..n).map(|i| i * total / n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, rem) = (total / n, total % n);
    (0..n)
        .map(|i| {
            let start = i * base + i.min(rem);
            let size = base + usize::from(i < rem);
            start + rng.gen_range(0..size)
        })
        .collect()
}

pub fn sample_subsequences(seq: &SkeletonSequence, n: usize, seed: u64) -> SkeletonSequence {
    let idx = sample_indices(seq.len(), n, seed);
    SkeletonSequence {
        frames: idx.iter().map(|&i| seq.frames[i].clone()).collect(),
        ..seq.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Frame;

    fn one_frame(points: Vec<Vec3>) -> SkeletonSequence {
        SkeletonSequence {
            id: "t".into(),
            label: 0,
            subject_id: 0,
            view_id: 0,
            topology_id: "default-12".into(),
            frames: vec![Frame {
                index: 0,
                bodies: vec![Some(points)],
            }],
        }
    }

    #[test]
    fn center_translates_hip_to_origin() {
        let mut pose = vec![Vec3::new(1.0, 2.0, 3.0); 12];
        pose[3] = Vec3::new(1.0, 2.0, 4.0);
        let out = center_on_hip(&one_frame(pose), &Topology::default_12()).unwrap();
        let p = out.frames[0].body(0).unwrap();
        assert_eq!(p[0], Vec3::ZERO);
        assert_eq!(p[3], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn rotate_unit_x_by_45() {
        let out = rotate_y(&one_frame(vec![Vec3::X; 12]), 45.0);
        let p = out.frames[0].body(0).unwrap()[0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.x - h).abs() < 1e-9 && p.y.abs() < 1e-9 && (p.z + h).abs() < 1e-9);
    }

    #[test]
    fn full_turn_is_identity() {
        let pose: Vec<Vec3> = (0..12).map(|i| Vec3::new(i as f64, 1.0, -0.5 * i as f64)).collect();
        let seq = one_frame(pose.clone());
        let out = rotate_y(&seq, 360.0);
        for (a, b) in out.frames[0].body(0).unwrap().iter().zip(&pose) {
            assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn block_sampling_stays_in_blocks() {
        for seed in 0..20 {
            let idx = sample_indices(100, 20, seed);
            assert_eq!(idx.len(), 20);
            for (i, &f) in idx.iter().enumerate() {
                assert!((5 * i..=5 * i + 4).contains(&f));
            }
        }
    }

    #[test]
    fn singleton_blocks_keep_every_frame() {
        for seed in [0, 1, 99] {
            assert_eq!(sample_indices(20, 20, seed), (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_sequences_repeat_frames() {
        // floor(i * 7 / 20) for i in 0..20
        let expected = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5, 6, 6];
        assert_eq!(sample_indices(7, 20, 3), expected);
    }

    #[test]
    fn remainder_goes_to_earliest_blocks() {
        // T = 23, n = 20: blocks 0..2 hold two frames, the rest one.
        for seed in 0..10 {
            let idx = sample_indices(23, 20, seed);
            for (i, &f) in idx.iter().enumerate() {
                if i < 3 {
                    assert!(f == 2 * i || f == 2 * i + 1);
                } else {
                    assert_eq!(f, i + 3);
                }
            }
        }
    }

    #[test]
    fn reference_table_round_trip() {
        let topo = Topology::default_12();
        let r = ReferenceLengths::new(&topo, (1..=11).map(|i| 0.1 * i as f64 + 1e-17).collect())
            .unwrap();
        assert_eq!(ReferenceLengths::from_text(&r.to_text(&topo), &topo).unwrap(), r);
    }

    #[test]
    fn zero_length_bone_uses_plus_x_then_previous() {
        let topo = Topology::default_12();
        let reference = ReferenceLengths::new(&topo, vec![1.0; 11]).unwrap();
        let mut seq = one_frame(vec![Vec3::ZERO; 12]);
        let mut second: Vec<Vec3> = vec![Vec3::ZERO; 12];
        second[1] = Vec3::new(0.0, 0.0, 0.5);
        seq.frames.push(Frame {
            index: 1,
            bodies: vec![Some(second)],
        });
        let mut third = vec![Vec3::ZERO; 12];
        third[1] = Vec3::ZERO;
        seq.frames.push(Frame {
            index: 2,
            bodies: vec![Some(third)],
        });
        let mut w = Warnings::default();
        let out = normalize_limbs(&seq, &reference, &topo, &mut w).unwrap();
        assert_eq!(out.frames[0].body(0).unwrap()[1], Vec3::X);
        assert_eq!(out.frames[1].body(0).unwrap()[1], Vec3::new(0.0, 0.0, 1.0));
        // frame 2 spine bone collapses again: reuse frame 1's direction
        assert_eq!(out.frames[2].body(0).unwrap()[1], Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(w.len(), 11 + 9 + 11);
    }
}
