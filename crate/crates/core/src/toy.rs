//! Synthetic six-action dataset on the default 12-joint topology.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::skeleton::{Frame, SkeletonSequence, Topology, DEFAULT_TOPOLOGY_ID};

pub const ACTION_NAMES: [&str; 6] = ["raise-hand", "wave", "kick", "squat", "clap", "bow"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub subjects: u32,
    pub repetitions: u32,
    /// Camera yaw in degrees per view; repetition `r` is seen from view `r % views.len()`.
    pub view_angles: Vec<f64>,
    /// Standard deviation of per-joint Gaussian noise, meters.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            subjects: 4,
            repetitions: 5,
            view_angles: vec![0.0, 30.0],
            noise: 0.005,
            seed: 2017,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Style {
    scale: f64,
    amplitude: f64,
    frames: usize,
    cycles: f64,
    delay: f64,
}

// Bone lengths (meters) and rest directions for the default topology, indexed
// by child joint. Right-side directions point to +x; left ones are mirrored.
const BONE: [f64; 12] = [0.0, 0.25, 0.25, 0.2, 0.3, 0.27, 0.08, 0.3, 0.27, 0.08, 0.9, 0.9];
const UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);
const REST_UPPER: Vec3 = Vec3::new(0.35, -1.0, 0.0);
const REST_FORE: Vec3 = Vec3::new(0.05, -1.0, 0.1);
const REST_LEG: Vec3 = Vec3::new(0.12, -1.0, 0.0);

fn lerp(a: Vec3, b: Vec3, w: f64) -> Vec3 {
    let v = a * (1.0 - w) + b * w;
    v * (1.0 / v.norm())
}

fn mirror(v: Vec3) -> Vec3 {
    Vec3::new(-v.x, v.y, v.z)
}

/// Bone directions for `action` at progress `s` in [0, 1].
fn directions(action: usize, s: f64, st: &Style) -> [Vec3; 12] {
    let e = (PI * s).sin().powi(2);
    let a = st.amplitude;
    let osc = (2.0 * PI * st.cycles * s).sin();
    let (mut torso, mut upper_r, mut fore_r, mut upper_l, mut fore_l) = (UP, REST_UPPER, REST_FORE, REST_UPPER, REST_FORE);
    let (mut leg_r, mut leg_l) = (REST_LEG, REST_LEG);
    match action {
        0 => {
            upper_r = lerp(REST_UPPER, Vec3::new(0.15, 1.0, 0.0), e * a.min(1.0));
            fore_r = lerp(REST_FORE, Vec3::new(0.05, 1.0, 0.0), e * a.min(1.0));
        }
        1 => {
            upper_r = lerp(REST_UPPER, Vec3::new(1.0, 0.4, 0.0), e);
            fore_r = lerp(REST_FORE, Vec3::new(0.6 * a * osc, 1.0, 0.0), e);
        }
        2 => {
            leg_r = lerp(REST_LEG, Vec3::new(0.1, -0.5, a), e);
        }
        3 => {
            leg_r = lerp(REST_LEG, Vec3::new(0.12, -1.0, 0.7 * a), e);
            leg_l = leg_r;
            torso = lerp(UP, Vec3::new(0.0, 1.0, 0.4), e);
            upper_r = lerp(REST_UPPER, Vec3::new(0.2, -0.2, 1.0), e);
            fore_r = lerp(REST_FORE, Vec3::new(0.0, 0.0, 1.0), e);
            upper_l = upper_r;
            fore_l = fore_r;
        }
        4 => {
            upper_r = lerp(REST_UPPER, Vec3::new(0.3, -0.3, 1.0), e);
            let g = 0.5 + 0.5 * (2.0 * PI * st.cycles * s).cos();
            fore_r = lerp(REST_FORE, Vec3::new(-0.5 + 0.9 * g * a, 0.0, 1.0), e);
            upper_l = upper_r;
            fore_l = fore_r;
        }
        _ => {
            torso = lerp(UP, Vec3::new(0.0, 0.3, a), e);
        }
    }
    let unit = |v: Vec3| v * (1.0 / v.norm());
    [
        Vec3::ZERO,
        torso,
        torso,
        torso,
        unit(mirror(upper_l)),
        unit(mirror(fore_l)),
        unit(mirror(fore_l)),
        unit(upper_r),
        unit(fore_r),
        unit(fore_r),
        unit(mirror(leg_l)),
        unit(leg_r),
    ]
}

fn pose(topo: &Topology, action: usize, s: f64, st: &Style, hip: Vec3) -> Vec<Vec3> {
    let dirs = directions(action, s, st);
    let mut out = vec![Vec3::ZERO; 12];
    out[topo.root()] = hip;
    for &(p, c) in topo.edges() {
        out[c] = out[p] + dirs[c] * (BONE[c] * st.scale);
    }
    out
}

/// Generates `6 x subjects x repetitions` labelled sequences in a fixed order.
pub fn toy_dataset(cfg: &ToyConfig) -> Vec<SkeletonSequence> {
    let topo = Topology::default_12();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise");
    let subjects: Vec<(f64, f64)> = (0..cfg.subjects)
        .map(|_| (rng.gen_range(0.9..1.1), rng.gen_range(0.8..1.25)))
        .collect();
    let views = if cfg.view_angles.is_empty() { vec![0.0] } else { cfg.view_angles.clone() };
    let mut out = Vec::new();
    for action in 0..ACTION_NAMES.len() {
        for (s, &(scale, speed)) in subjects.iter().enumerate() {
            for r in 0..cfg.repetitions {
                let view = r as usize % views.len();
                let st = Style {
                    scale,
                    amplitude: rng.gen_range(0.8..1.2),
                    frames: ((50.0 / speed) * rng.gen_range(0.9..1.1)).round() as usize,
                    cycles: rng.gen_range(2.0..3.5),
                    delay: rng.gen_range(0.0..0.1),
                };
                let hip = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(0.9..1.1), rng.gen_range(2.5..3.5));
                let yaw = views[view].to_radians();
                let frames = (0..st.frames)
                    .map(|t| {
                        let u = t as f64 / (st.frames - 1) as f64;
                        let prog = ((u - st.delay) / (1.0 - st.delay)).clamp(0.0, 1.0);
                        let body = pose(&topo, action, prog, &st, Vec3::ZERO)
                            .into_iter()
                            .map(|p| {
                                let jitter = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                                (p + jitter).rotate_y(yaw) + hip
                            })
                            .collect();
                        Frame {
                            index: t,
                            bodies: vec![Some(body)],
                        }
                    })
                    .collect();
                out.push(SkeletonSequence {
                    id: format!("toy_a{action:02}_s{}_r{r}", s + 1),
                    label: action,
                    subject_id: s as u32 + 1,
                    view_id: view as u32,
                    topology_id: DEFAULT_TOPOLOGY_ID.to_owned(),
                    frames,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_metadata() {
        let data = toy_dataset(&ToyConfig::default());
        assert_eq!(data.len(), 120);
        for seq in &data {
            seq.validate().unwrap();
            assert_eq!(seq.joint_count(), Some(12));
            assert!(seq.len() >= 30);
        }
        let subjects: std::collections::BTreeSet<u32> = data.iter().map(|s| s.subject_id).collect();
        let views: std::collections::BTreeSet<u32> = data.iter().map(|s| s.view_id).collect();
        assert_eq!(subjects.len(), 4);
        assert_eq!(views.len(), 2);
        for label in 0..6 {
            assert_eq!(data.iter().filter(|s| s.label == label).count(), 20);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = ToyConfig::default();
        assert_eq!(toy_dataset(&cfg), toy_dataset(&cfg));
        let other = ToyConfig { seed: 1, ..cfg.clone() };
        assert_ne!(toy_dataset(&cfg), toy_dataset(&other));
    }

    #[test]
    fn bones_have_subject_length_without_noise() {
        let cfg = ToyConfig { noise: 0.0, ..ToyConfig::default() };
        let topo = Topology::default_12();
        let seq = &toy_dataset(&cfg)[0];
        let pose = seq.frames[0].body(0).unwrap();
        let first = pose[topo.edges()[0].1].distance(pose[topo.edges()[0].0]) / BONE[topo.edges()[0].1];
        for &(p, c) in topo.edges() {
            let ratio = pose[c].distance(pose[p]) / BONE[c];
            assert!((ratio - first).abs() < 1e-9, "{p}-{c}: {ratio} vs {first}");
        }
    }
}
