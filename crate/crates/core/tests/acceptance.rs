//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelact_core::eval::{evaluate, ChannelScores, Protocol};
use skelact_core::features::{
    extract_channel, point_line_distance, select_lines, unconstrained_line_count, FeatureChannel, LineKind,
};
use skelact_core::fusion::{fuse_scores, predict_label, FusionMethod};
use skelact_core::geometry::Vec3;
use skelact_core::maps::{encode_jdm, DistanceRange, JdmParams, Plane};
use skelact_core::nn::{gradient_check, ModelKind};
use skelact_core::pipeline::{run_pipeline, RunConfig};
use skelact_core::preprocess::{center_on_hip, normalize_limbs, rotate_y, ReferenceLengths};
use skelact_core::skeleton::{Warnings, DEFAULT_TOPOLOGY_ID};
use skelact_core::toy::{toy_dataset, ToyConfig};
use skelact_core::{Frame, SkeletonSequence, Topology};

#[path = "golden_maps.rs"]
#[allow(dead_code, unused_imports)]
mod golden;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn c1_line_combinatorics() -> Result<String, String> {
    let t = Instant::now();
    let lines = select_lines(&Topology::default_12());
    let counts = (
        lines.count(LineKind::Adjacent),
        lines.count(LineKind::EndTwoStep),
        lines.count(LineKind::EndEnd),
    );
    ensure(lines.len() == 19 && counts == (6, 3, 10), format!("got {} lines {counts:?}", lines.len()))?;
    for n in [12usize, 24] {
        let mut enumerated = 0;
        for a in 0..n {
            for b in a + 1..n {
                for _c in b + 1..n {
                    enumerated += 3;
                }
            }
        }
        ensure(enumerated == unconstrained_line_count(n), format!("{n} joints: {enumerated} vs formula"))?;
    }
    ensure(unconstrained_line_count(12) == 660 && unconstrained_line_count(24) == 6072, "660 / 6072")?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok("19 lines (6, 3, 10); 660 and 6072 triples by enumeration".into())
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn c2_heron_oracle() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let (n, j, k) = if i < 100 {
            // Needles with aspect ratio >= 1e4: one side far shorter than the
            // other two, either the line itself or the joint-to-endpoint side.
            let j = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let len = rng.gen_range(1.0..10.0);
            let short = len / rng.gen_range(1e4..1e6);
            if i % 2 == 0 {
                let k = j + random_unit(&mut rng) * len;
                let n = j + random_unit(&mut rng) * short;
                (n, j, k)
            } else {
                let k = j + random_unit(&mut rng) * short;
                let n = j + random_unit(&mut rng) * len;
                (n, j, k)
            }
        } else {
            let p = |rng: &mut ChaCha8Rng| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            (p(&mut rng), p(&mut rng), p(&mut rng))
        };
        let heron = point_line_distance(n, j, k).ok_or("degenerate base")?;
        let oracle = (n - j).cross(k - j).norm() / (k - j).norm();
        let rel = (heron - oracle).abs() / oracle.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure(rel <= 1e-6, format!("triangle {i}: heron {heron:e} vs oracle {oracle:e}"))?;
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("10^4 triangles incl. 100 needles, max relative error {worst:.1e}"))
}

fn c3_gradient_fidelity() -> Result<String, String> {
    let t = Instant::now();
    let lstm = gradient_check(ModelKind::Lstm, 7).map_err(|e| e.to_string())?;
    let cnn = gradient_check(ModelKind::Cnn, 7).map_err(|e| e.to_string())?;
    ensure(lstm < 1e-4, format!("LSTM max relative error {lstm:e}"))?;
    ensure(cnn < 1e-4, format!("CNN max relative error {cnn:e}"))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("LSTM {lstm:.1e}, CNN {cnn:.1e} (H=4, 12x12 images)"))
}

fn random_pose_sequence(seed: u64) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SkeletonSequence {
        id: format!("pose{seed}"),
        label: 0,
        subject_id: 1,
        view_id: 0,
        topology_id: DEFAULT_TOPOLOGY_ID.into(),
        frames: vec![Frame {
            index: 0,
            bodies: vec![
                Some(
                    (0..12)
                        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0), rng.gen_range(2.0..4.0)))
                        .collect(),
                ),
                None,
            ],
        }],
    }
}

fn c4_rigid_invariance() -> Result<String, String> {
    let topo = Topology::default_12();
    let lines = select_lines(&topo);
    let mut w = Warnings::default();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..100 {
        let seq = random_pose_sequence(seed);
        let moved = rotate_y(&center_on_hip(&seq, &topo).map_err(|e| e.to_string())?, rng.gen_range(0.0..360.0));
        for ch in [FeatureChannel::J, FeatureChannel::L] {
            let a = extract_channel(&seq, ch, &topo, &lines, &mut w);
            let b = extract_channel(&moved, ch, &topo, &lines, &mut w);
            for (x, y) in a.data.iter().zip(&b.data) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure(worst <= 1e-6, format!("J/L feature drift {worst:e}"))?;

    let params = JdmParams::default();
    let range = DistanceRange { min: 0.0, max: 2.0 };
    let seqs = toy_dataset(&ToyConfig::default());
    let mut compared = 0;
    for seq in seqs.iter().step_by(12) {
        let base = encode_jdm(seq, Plane::Xyz, &params, range).map_err(|e| e.to_string())?;
        for angle in [45.0, 90.0, 135.0, 180.0, 270.0, 315.0] {
            let rotated = encode_jdm(&rotate_y(seq, angle), Plane::Xyz, &params, range).map_err(|e| e.to_string())?;
            ensure(base.pixels == rotated.pixels, format!("JDM-xyz of {} changed under {angle} deg", seq.id))?;
            compared += 1;
        }
    }
    Ok(format!("J/L drift {worst:.1e} over 100 poses; {compared} JDM-xyz maps byte-identical"))
}

fn c5_fusion_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random_prob = |rng: &mut ChaCha8Rng, c: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.001..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    for case in 0..10_000 {
        let c = rng.gen_range(2..12);
        let vs: Vec<Vec<f64>> = (0..10).map(|_| random_prob(&mut rng, c)).collect();
        let fused = fuse_scores(&vs, FusionMethod::Mul).map_err(|e| e.to_string())?;
        let scaled: Vec<Vec<f64>> = vs
            .iter()
            .map(|v| {
                let s = rng.gen_range(1e-3..1e3);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let fused_scaled = fuse_scores(&scaled, FusionMethod::Mul).map_err(|e| e.to_string())?;
        let mut sorted = fused.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let clear = sorted[0] - sorted[1] > 1e-9 * sorted[0];
        ensure(
            !clear || predict_label(&fused) == predict_label(&fused_scaled),
            format!("case {case}: argmax changed under scaling"),
        )?;

        let mut shuffled = vs.clone();
        shuffled.shuffle(&mut rng);
        for m in FusionMethod::ALL {
            let a = fuse_scores(&vs, m).map_err(|e| e.to_string())?;
            let b = fuse_scores(&shuffled, m).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                ensure((x - y).abs() <= 1e-12 * x.abs().max(1e-300), format!("case {case}: {m} not permutation invariant"))?;
            }
            let single = fuse_scores(&vs[..1], m).map_err(|e| e.to_string())?;
            ensure(single == vs[0], format!("case {case}: single-channel {m} is not the identity"))?;
        }
    }
    Ok("10^4 seeded cases: scaling-invariant argmax, identity, permutation invariance".into())
}

fn c6_complementarity() -> Result<String, String> {
    // Four classes, five samples each. Channel A is confident and correct on
    // classes {0, 1} and uniform on {2, 3}; channel B the reverse. Uniform rows
    // predict class 0 (lowest-index tie-break), so A scores 10/20 and B scores
    // 15/20 (its uniform rows are right for class 0). Every fused method is
    // right on all 20.
    let labels: Vec<usize> = (0..20).map(|i| i / 5).collect();
    let ids: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
    let row = |confident: bool, l: usize| -> Vec<f64> {
        if confident {
            (0..4).map(|k| if k == l { 0.7 } else { 0.1 }).collect()
        } else {
            vec![0.25; 4]
        }
    };
    let a = ChannelScores::new("R", ids.clone(), labels.iter().map(|&l| row(l < 2, l)).collect()).map_err(|e| e.to_string())?;
    let b = ChannelScores::new("J", ids, labels.iter().map(|&l| row(l >= 2, l)).collect()).map_err(|e| e.to_string())?;
    let report = evaluate(&[a, b], &labels, &FusionMethod::ALL, "constructed").map_err(|e| e.to_string())?;
    let get = |n: &str| report.fusion_accuracy(n).or(report.channel_accuracy(n)).unwrap_or(f64::NAN);
    let (acc_a, acc_b, mul, max, avg) = (get("R"), get("J"), get("All-Mul"), get("All-Max"), get("All-Ave"));
    ensure(acc_a == 0.5 && acc_b == 0.75, format!("single channels {acc_a} / {acc_b}, expected 0.5 / 0.75"))?;
    ensure(mul == 1.0, format!("mul {mul}, expected 1.0"))?;
    ensure(mul > acc_a && mul > acc_b && mul >= max && mul >= avg, "fusion ordering")?;
    Ok(format!("A {acc_a:.2}, B {acc_b:.2}, mul {mul:.2}, max {max:.2}, avg {avg:.2}"))
}

fn c7_end_to_end() -> Result<String, String> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut parts = Vec::new();
    for protocol in [Protocol::CrossSubject, Protocol::CrossView] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::toy(protocol, dir.path());
        cfg.threads = threads;
        let t = Instant::now();
        let out = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        within(elapsed, Duration::from_secs(15 * 60))?;
        let r = &out.report;
        ensure(r.channels.len() == 10 && r.fusions.len() == 6, format!("{} channel rows, {} fusion rows", r.channels.len(), r.fusions.len()))?;
        ensure(r.samples + out.scores[0].len() > 0, "no samples")?;
        let mul = r.fusion_accuracy("All-Mul").ok_or("no All-Mul row")?;
        let best = r.best_channel_accuracy();
        ensure(mul >= 0.90, format!("{protocol}: All-Mul {mul:.3} < 0.90"))?;
        ensure(mul >= best, format!("{protocol}: All-Mul {mul:.3} below best channel {best:.3}"))?;
        parts.push(format!("{protocol} All-Mul {mul:.3} (best channel {best:.3}, {:.0}s)", elapsed.as_secs_f64()));
    }
    Ok(parts.join("; "))
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::toy(Protocol::CrossSubject, a.path());
    cfg.channels = vec!["R".into(), "L".into(), "JTM-xy".into(), "JDM-xyz".into()];
    cfg.training.lstm.epochs = 3;
    cfg.training.cnn.epochs = 2;
    cfg.threads = 1;
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    // Second run is driven by the first run's manifest.
    let manifest = std::fs::read_to_string(a.path().join("manifest.toml")).map_err(|e| e.to_string())?;
    let mut again = RunConfig::from_toml(&manifest).map_err(|e| e.to_string())?;
    again.out = b.path().to_path_buf();
    run_pipeline(&again).map_err(|e| e.to_string())?;

    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let strip = |m: &BTreeMap<String, Vec<u8>>| m.keys().cloned().collect::<Vec<_>>();
    ensure(strip(&ta) == strip(&tb), "runs produced different file sets")?;
    let manifests_differ_only_in_out = ta.iter().all(|(k, v)| k == "manifest.toml" || tb[k] == *v);
    ensure(manifests_differ_only_in_out, {
        let diff: Vec<&String> = ta.keys().filter(|k| ta[*k] != tb[*k] && *k != "manifest.toml").collect();
        format!("files differ: {diff:?}")
    })?;
    let pngs = ta.keys().filter(|k| k.ends_with(".png")).count();
    let bins = ta.keys().filter(|k| k.ends_with(".bin")).count();
    ensure(pngs > 0 && bins == 4 && ta.contains_key("report.txt"), "missing artifacts")?;

    for (map, name) in [(golden::golden_jtm(), "golden_jtm_xy.png"), (golden::golden_jdm(), "golden_jdm_xyz.png")] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
        let fixture = skelact_core::maps::TextureMap::load_png(&path, map.kind, map.plane).map_err(|e| e.to_string())?;
        ensure(fixture.pixels == map.pixels, format!("{name} differs from golden fixture"))?;
    }
    Ok(format!("{} files byte-identical ({pngs} PNG maps, {bins} checkpoints); golden JTM/JDM match", ta.len() - 1))
}

fn c9_normalization() -> Result<String, String> {
    let topo = Topology::default_12();
    let seqs: Vec<SkeletonSequence> = toy_dataset(&ToyConfig::default())
        .iter()
        .map(|s| center_on_hip(s, &topo))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let reference = ReferenceLengths::estimate(seqs.iter(), &topo).map_err(|e| e.to_string())?;
    let mut w = Warnings::default();
    let mut worst_len: f64 = 0.0;
    let mut worst_idem: f64 = 0.0;
    for seq in &seqs {
        let once = normalize_limbs(seq, &reference, &topo, &mut w).map_err(|e| e.to_string())?;
        let twice = normalize_limbs(&once, &reference, &topo, &mut w).map_err(|e| e.to_string())?;
        for (f1, f2) in once.frames.iter().zip(&twice.frames) {
            for ((_, p1), (_, p2)) in f1.valid_bodies().zip(f2.valid_bodies()) {
                for (e, &(a, b)) in topo.edges().iter().enumerate() {
                    worst_len = worst_len.max((p1[a].distance(p1[b]) - reference.lengths()[e]).abs());
                }
                for (x, y) in p1.iter().zip(p2) {
                    worst_idem = worst_idem.max(x.distance(*y));
                }
            }
        }
    }
    ensure(worst_len <= 1e-6, format!("bone length error {worst_len:e}"))?;
    ensure(worst_idem <= 1e-6, format!("idempotence error {worst_idem:e}"))?;
    Ok(format!("120 sequences: bone error {worst_len:.1e}, idempotence error {worst_idem:.1e}"))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("SKELACT_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, Check); 9] = [
        ("line-selection combinatorics", c1_line_combinatorics),
        ("Heron vs cross-product oracle", c2_heron_oracle),
        ("gradient fidelity", c3_gradient_fidelity),
        ("rigid-motion invariances", c4_rigid_invariance),
        ("fusion properties", c5_fusion_properties),
        ("complementary channels", c6_complementarity),
        ("end-to-end toy pipeline", c7_end_to_end),
        ("determinism", c8_determinism),
        ("normalization contract", c9_normalization),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            println!("criterion {n} ({name}): SKIP");
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(e) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
