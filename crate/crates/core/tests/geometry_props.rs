use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelact_core::features::{
    extract_channel, joint_joint_distances, relative_positions, select_lines, FeatureChannel, LineKind,
};
use skelact_core::geometry::Vec3;
use skelact_core::preprocess::{center_on_hip, normalize_limbs, rotate_y, sample_indices, ReferenceLengths};
use skelact_core::skeleton::{Warnings, DEFAULT_TOPOLOGY_ID};
use skelact_core::{Frame, SkeletonSequence, Topology};

fn random_seq(seed: u64, frames: usize) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SkeletonSequence {
        id: "p".into(),
        label: 0,
        subject_id: 1,
        view_id: 0,
        topology_id: DEFAULT_TOPOLOGY_ID.into(),
        frames: (0..frames)
            .map(|index| Frame {
                index,
                bodies: vec![Some(
                    (0..12)
                        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0), rng.gen_range(2.0..4.0)))
                        .collect(),
                )],
            })
            .collect(),
    }
}

#[test]
fn two_joint_chain_has_one_line() {
    let topo = Topology::new(
        "pair",
        vec!["a".into(), "b".into()],
        0,
        &[(0, 1)],
        vec![0, 1],
    );
    // Both joints are ends, so the root must be allowed to be an end joint.
    let topo = topo.unwrap();
    let lines = select_lines(&topo);
    assert_eq!(lines.len(), 1);
    assert_eq!((lines.lines[0].j, lines.lines[0].k), (0, 1));
    assert_eq!(lines.lines[0].kind, LineKind::EndEnd);
}

#[test]
fn custom_topology_toml_round_trip() {
    let topo = Topology::default_12();
    let back = Topology::from_toml(&topo.to_toml()).unwrap();
    assert_eq!(back, topo);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn centering_and_rotation_preserve_pairwise_distances(seed in any::<u64>(), angle in -720.0f64..720.0) {
        let topo = Topology::default_12();
        let seq = random_seq(seed, 3);
        let moved = rotate_y(&center_on_hip(&seq, &topo).unwrap(), angle);
        for (a, b) in seq.frames.iter().zip(&moved.frames) {
            let da = joint_joint_distances(a, 12);
            let db = joint_joint_distances(b, 12);
            for (x, y) in da.iter().zip(&db) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relative_positions_rotate_with_the_pose(seed in any::<u64>(), angle in 0.0f64..360.0) {
        let seq = random_seq(seed, 1);
        let rotated = rotate_y(&seq, angle);
        let r0 = relative_positions(&seq.frames[0], 12);
        let r1 = relative_positions(&rotated.frames[0], 12);
        let rad = angle.to_radians();
        for (a, b) in r0.chunks(3).zip(r1.chunks(3)) {
            let expect = Vec3::new(a[0], a[1], a[2]).rotate_y(rad);
            prop_assert!((expect.x - b[0]).abs() < 1e-9 && (expect.y - b[1]).abs() < 1e-9 && (expect.z - b[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_is_scale_invariant_and_idempotent(seed in any::<u64>(), scale in 0.2f64..5.0) {
        let topo = Topology::default_12();
        let seq = center_on_hip(&random_seq(seed, 4), &topo).unwrap();
        let reference = ReferenceLengths::estimate([&seq], &topo).unwrap();
        let mut w = Warnings::default();
        let once = normalize_limbs(&seq, &reference, &topo, &mut w).unwrap();
        let twice = normalize_limbs(&once, &reference, &topo, &mut w).unwrap();
        let scaled = normalize_limbs(&seq.map_joints(|p| p * scale), &reference, &topo, &mut w).unwrap();
        for ((a, b), c) in once.frames.iter().zip(&twice.frames).zip(&scaled.frames) {
            for ((pa, pb), pc) in a.body(0).unwrap().iter().zip(b.body(0).unwrap()).zip(c.body(0).unwrap()) {
                prop_assert!(pa.distance(*pb) < 1e-6);
                prop_assert!(pa.distance(*pc) < 1e-6);
            }
        }
    }

    #[test]
    fn sampling_is_sorted_and_blockwise(total in 1usize..300, n in 1usize..40, seed in any::<u64>()) {
        let idx = sample_indices(total, n, seed);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(idx.iter().all(|&i| i < total));
        prop_assert_eq!(&idx, &sample_indices(total, n, seed));
    }

    #[test]
    fn static_sequence_gives_identical_rows(seed in any::<u64>()) {
        let topo = Topology::default_12();
        let one = random_seq(seed, 1);
        let mut seq = one.clone();
        seq.frames = (0..5).map(|index| Frame { index, ..one.frames[0].clone() }).collect();
        let lines = select_lines(&topo);
        let mut w = Warnings::default();
        for ch in [FeatureChannel::R, FeatureChannel::J, FeatureChannel::L, FeatureChannel::Concat] {
            let m = extract_channel(&seq, ch, &topo, &lines, &mut w);
            for t in 1..m.rows {
                prop_assert_eq!(m.row(t), m.row(0));
            }
        }
    }
}
