use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelact_core::geometry::Vec3;
use skelact_core::io::{parse_sequence, write_sequence, Format, NTU_SUBSET_V1};
use skelact_core::skeleton::DEFAULT_TOPOLOGY_ID;
use skelact_core::{Frame, SkeletonSequence, Topology};

/// One NTU body block: info line, joint count, 25 joint lines of 12 values.
fn ntu_body(id: &str, offset: f64) -> String {
    let mut s = format!("{id} 0 1 1 1 1 0 0.1 0.2 2\n25\n");
    for j in 0..25 {
        let (x, y, z) = (offset + j as f64 * 0.01, 0.5 + j as f64 * 0.02, 3.0 + offset);
        s.push_str(&format!("{x} {y} {z} 250.1 200.2 900.3 500.4 0.1 0.2 0.3 0.9 2\n"));
    }
    s
}

#[test]
fn ntu_three_frames_one_body() {
    let mut doc = String::from("3\n");
    for t in 0..3 {
        doc.push_str("1\n");
        doc.push_str(&ntu_body("72057594037931101", t as f64 * 0.1));
    }
    let parsed = parse_sequence(doc.as_bytes(), Format::NtuSkeleton).unwrap();
    let seq = parsed.sequence;
    assert_eq!(seq.len(), 3);
    assert!(parsed.warnings.is_empty());
    for (t, frame) in seq.frames.iter().enumerate() {
        let body = frame.body(0).unwrap();
        assert_eq!(body.len(), 12);
        // Canonical joint i comes from the listed NTU joint.
        for (i, &(ntu, _, _)) in NTU_SUBSET_V1.iter().enumerate() {
            let expected_x = t as f64 * 0.1 + ntu as f64 * 0.01;
            assert!((body[i].x - expected_x).abs() < 1e-12);
        }
        assert!(frame.body(1).is_none());
    }
}

#[test]
fn ntu_extra_bodies_keep_most_moving_two() {
    let mut doc = String::from("2\n");
    for t in 0..2 {
        let shift = t as f64;
        doc.push_str("3\n");
        doc.push_str(&ntu_body("still", 0.0));
        doc.push_str(&ntu_body("walker", shift));
        doc.push_str(&ntu_body("runner", 2.0 * shift));
    }
    let parsed = parse_sequence(doc.as_bytes(), Format::NtuSkeleton).unwrap();
    assert_eq!(parsed.sequence.body_slots(), 2);
    assert_eq!(parsed.warnings.len(), 1);
    // The stationary body (x offset 0 in both frames) was dropped.
    for f in &parsed.sequence.frames {
        for (_, pose) in f.valid_bodies() {
            assert!(pose[0].z > 3.0 || f.index == 0);
        }
    }
}

#[test]
fn ntu_truncated_file_is_parse_error() {
    let doc = "2\n1\n".to_owned() + &ntu_body("a", 0.0);
    let err = parse_sequence(doc.as_bytes(), Format::NtuSkeleton).unwrap_err();
    assert!(matches!(err, skelact_core::Error::Parse { .. }), "{err}");
}

fn random_sequence(seed: u64, frames: usize, absent_second: bool) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = || -> Vec<Vec3> {
        (0..12)
            .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..5.0)))
            .collect()
    };
    SkeletonSequence {
        id: format!("rand{seed}"),
        label: (seed % 7) as usize,
        subject_id: 3,
        view_id: 2,
        topology_id: DEFAULT_TOPOLOGY_ID.into(),
        frames: (0..frames)
            .map(|index| Frame {
                index,
                bodies: vec![Some(pose()), if absent_second { None } else { Some(pose()) }],
            })
            .collect(),
    }
}

#[test]
fn hundred_frame_round_trip_is_bit_exact() {
    let topo = Topology::default_12();
    let seq = random_sequence(42, 100, false);
    let back = parse_sequence(&write_sequence(&seq, &topo), Format::CanonicalJson).unwrap().sequence;
    assert_eq!(back, seq);
    for (a, b) in seq.frames.iter().zip(&back.frames) {
        for (pa, pb) in a.body(0).unwrap().iter().zip(b.body(0).unwrap()) {
            assert_eq!(pa.x.to_bits(), pb.x.to_bits());
        }
    }
}

#[test]
fn absent_body_survives_round_trip() {
    let topo = Topology::default_12();
    let seq = random_sequence(3, 4, true);
    let back = parse_sequence(&write_sequence(&seq, &topo), Format::CanonicalJson).unwrap().sequence;
    assert!(back.frames.iter().all(|f| f.bodies.len() == 2 && f.bodies[1].is_none()));
    assert_eq!(back, seq);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_any_coordinates(seed in any::<u64>(), frames in 1usize..12, absent in any::<bool>(),
                                  scale in prop_oneof![Just(1e-300), Just(1.0), Just(1e300)]) {
        let topo = Topology::default_12();
        let mut seq = random_sequence(seed, frames, absent);
        seq = seq.map_joints(|p| p * scale);
        let back = parse_sequence(&write_sequence(&seq, &topo), Format::CanonicalJson).unwrap().sequence;
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        // Either a valid sequence or a structured error; never a panic.
        if let Ok(p) = parse_sequence(&bytes, Format::CanonicalJson) {
            prop_assert!(p.sequence.validate().is_ok());
        }
        let _ = parse_sequence(&bytes, Format::NtuSkeleton);
    }
}
