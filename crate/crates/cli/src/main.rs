use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skelact_core::eval::{evaluate, ChannelScores, Protocol};
use skelact_core::features::{extract_channel, select_lines, FeatureChannel};
use skelact_core::fusion::{parse_methods, predict_label, FusionMethod};
use skelact_core::io::{parse_sequence_with, write_sequence, Format, NtuName};
use skelact_core::maps::{encode_jdm, encode_jtm, JdmParams, JdmScaling, JtmParams, MapKind, Plane};
use skelact_core::pipeline::{derive_seed, preprocess, read_labels, run_pipeline, RunConfig};
use skelact_core::preprocess::{center_on_hip, rotation_augment, sample_subsequences, ReferenceLengths};
use skelact_core::skeleton::Warnings;
use skelact_core::toy::{toy_dataset, ToyConfig};
use skelact_core::{SkeletonSequence, Topology};

#[derive(Parser)]
#[command(name = "skelact", version, about = "Skeleton action recognition with late-fused LSTM and CNN channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert sequence files to the canonical format.
    Ingest(IngestArgs),
    /// Write per-frame feature matrices for one LSTM channel.
    Featurize(FeaturizeArgs),
    /// Render trajectory or distance maps as PNG files.
    EncodeMaps(EncodeArgs),
    /// Train and score a single channel of a run configuration.
    Train(TrainArgs),
    /// Fuse per-channel score files.
    Fuse(FuseArgs),
    /// Score per-channel and fused accuracy against a label table.
    Eval(EvalArgs),
    /// Run every stage end to end.
    Run(RunArgs),
    /// Write the synthetic toy dataset in the canonical format.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Sequence files or directories containing them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Input format: json or ntu.
    #[arg(long, default_value = "json")]
    format: String,
    /// Topology TOML file (default: built-in 12-joint skeleton).
    #[arg(long)]
    topology: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// R, J, L or concat.
    #[arg(long)]
    channel: FeatureChannel,
    #[arg(long)]
    out: PathBuf,
    /// Frames sampled per sequence; 0 keeps every frame.
    #[arg(long, default_value_t = 20)]
    subseq: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference bone lengths; estimated from the inputs when omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// jtm or jdm.
    #[arg(long)]
    kind: MapKind,
    /// Comma-separated planes (xy, xz, yz, xyz).
    #[arg(long, default_value = "xy")]
    plane: String,
    #[arg(long)]
    out: PathBuf,
    /// Raster side for trajectory maps, column count for distance maps.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Y-rotated copies per sequence (trajectory maps only).
    #[arg(long, default_value_t = 1)]
    augment_rotations: usize,
    /// Reference bone lengths; estimated from the inputs when omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Distance range table for distance maps; estimated from the inputs when omitted.
    #[arg(long)]
    scaling: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Channel name, e.g. R or JDM-xyz.
    #[arg(long)]
    channel: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct FuseArgs {
    /// Per-channel score files.
    #[arg(required = true)]
    scores: Vec<PathBuf>,
    #[arg(long, default_value = "max,avg,mul")]
    methods: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Per-channel score files.
    #[arg(required = true)]
    scores: Vec<PathBuf>,
    /// Table of `sample-id label` lines.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    protocol: Protocol,
    #[arg(long, default_value = "max,avg,mul")]
    methods: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration or a manifest from an earlier run; the toy setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Protocol for the built-in toy setup.
    #[arg(long, default_value = "cross-subject")]
    protocol: Protocol,
    #[arg(long)]
    subseq: Option<usize>,
    #[arg(long)]
    augment_rotations: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Featurize(a) => featurize(a),
        Command::EncodeMaps(a) => encode_maps(a),
        Command::Train(a) => train(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::GenToy(a) => gen_toy(a),
    }
}

fn topology(path: Option<&Path>) -> Result<Topology> {
    Ok(match path {
        None => Topology::default_12(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Topology::from_toml(&text)?
        }
    })
}

fn collect_files(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == ext))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no input sequences found");
    }
    Ok(files)
}

fn read_inputs(input: &InputArgs, topo: &Topology) -> Result<Vec<SkeletonSequence>> {
    let format: Format = input.format.parse()?;
    let ext = match format {
        Format::CanonicalJson => "json",
        Format::NtuSkeleton => "skeleton",
    };
    let mut out = Vec::new();
    for file in collect_files(&input.inputs, ext)? {
        let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
        let parsed = parse_sequence_with(&bytes, format, topo)
            .map_err(|e| e.in_stage("ingest", file.to_str()))?;
        for w in &parsed.warnings.messages {
            eprintln!("warning: {}: {w}", file.display());
        }
        let mut seq = parsed.sequence;
        if format == Format::NtuSkeleton {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            match NtuName::parse(stem) {
                Some(name) => name.apply(stem, &mut seq),
                None => seq.id = stem.to_owned(),
            }
        }
        out.push(seq);
    }
    Ok(out)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let topo = topology(a.input.topology.as_deref())?;
    let seqs = read_inputs(&a.input, &topo)?;
    std::fs::create_dir_all(&a.out)?;
    for seq in &seqs {
        std::fs::write(a.out.join(format!("{}.json", seq.id)), write_sequence(seq, &topo))?;
    }
    println!("wrote {} sequences to {}", seqs.len(), a.out.display());
    Ok(())
}

fn reference_lengths(path: Option<&Path>, seqs: &[SkeletonSequence], topo: &Topology, out: &Path) -> Result<ReferenceLengths> {
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(ReferenceLengths::from_text(&text, topo)?);
    }
    let centered = seqs
        .iter()
        .map(|s| center_on_hip(s, topo))
        .collect::<skelact_core::Result<Vec<_>>>()?;
    let reference = ReferenceLengths::estimate(centered.iter(), topo)?;
    std::fs::write(out.join("reference_lengths.txt"), reference.to_text(topo))?;
    Ok(reference)
}

fn prepared(input: &InputArgs, reference: Option<&Path>, out: &Path) -> Result<(Topology, Vec<SkeletonSequence>)> {
    let topo = topology(input.topology.as_deref())?;
    let raw = read_inputs(input, &topo)?;
    std::fs::create_dir_all(out)?;
    let reference = reference_lengths(reference, &raw, &topo, out)?;
    let mut warnings = Warnings::default();
    let seqs = raw
        .iter()
        .map(|s| preprocess(s, &reference, &topo, &mut warnings).map_err(|e| e.in_stage("prepare", Some(&s.id))))
        .collect::<skelact_core::Result<Vec<_>>>()?;
    for w in &warnings.messages {
        eprintln!("warning: {w}");
    }
    Ok((topo, seqs))
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let (topo, seqs) = prepared(&a.input, a.reference.as_deref(), &a.out)?;
    let lines = select_lines(&topo);
    let mut warnings = Warnings::default();
    for seq in &seqs {
        let sampled = if a.subseq > 0 {
            sample_subsequences(seq, a.subseq, derive_seed(a.seed, &format!("subseq/{}/0", seq.id)))
        } else {
            seq.clone()
        };
        let m = extract_channel(&sampled, a.channel, &topo, &lines, &mut warnings);
        let mut file = std::fs::File::create(a.out.join(format!("{}.feat", seq.id)))?;
        m.write_to(&mut file)?;
    }
    for w in &warnings.messages {
        eprintln!("warning: {w}");
    }
    println!("wrote {} {} feature matrices to {}", seqs.len(), a.channel, a.out.display());
    Ok(())
}

fn encode_maps(a: EncodeArgs) -> Result<()> {
    let (_, seqs) = prepared(&a.input, a.reference.as_deref(), &a.out)?;
    let planes = a
        .plane
        .split(',')
        .map(str::parse)
        .collect::<skelact_core::Result<Vec<Plane>>>()?;
    let scaling = match (a.kind, &a.scaling) {
        (MapKind::Jdm, Some(p)) => Some(JdmScaling::from_text(&std::fs::read_to_string(p)?)?),
        (MapKind::Jdm, None) => {
            let s = JdmScaling::estimate(seqs.iter());
            std::fs::write(a.out.join("jdm_scaling.txt"), s.to_text())?;
            Some(s)
        }
        (MapKind::Jtm, _) => None,
    };
    let mut count = 0;
    for seq in &seqs {
        let variants = if a.kind == MapKind::Jtm && a.augment_rotations > 1 {
            rotation_augment(seq, a.augment_rotations)
                .into_iter()
                .enumerate()
                .map(|(k, mut s)| {
                    if k > 0 {
                        s.id = format!("{}-rot{}", seq.id, k * 360 / a.augment_rotations);
                    }
                    s
                })
                .collect()
        } else {
            vec![seq.clone()]
        };
        for v in &variants {
            for &plane in &planes {
                let map = match &scaling {
                    None => encode_jtm(v, plane, &JtmParams { size: a.size, ..JtmParams::default() }),
                    Some(s) => encode_jdm(v, plane, &JdmParams { width: a.size, ..JdmParams::default() }, s.range(plane)),
                }
                .map_err(|e| e.in_stage("encode", Some(&v.id)))?;
                map.save_png(&a.out.join(map.file_name()))?;
                count += 1;
            }
        }
    }
    println!("wrote {count} maps to {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    a.overrides.apply(&mut cfg);
    cfg.channels = vec![a.channel.clone()];
    let out = run_pipeline(&cfg)?;
    let acc = out.report.channel_accuracy(&a.channel).unwrap_or(0.0);
    println!("{}: test accuracy {:.4}; artifacts in {}", a.channel, acc, out.out.display());
    Ok(())
}

fn read_scores(paths: &[PathBuf]) -> Result<Vec<ChannelScores>> {
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ChannelScores::from_text(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

fn fuse(a: FuseArgs) -> Result<()> {
    let channels = read_scores(&a.scores)?;
    let methods = parse_methods(&a.methods)?;
    std::fs::create_dir_all(&a.out)?;
    let refs: Vec<&ChannelScores> = channels.iter().collect();
    for m in methods {
        let rows = skelact_core::eval::fuse_channels(&refs, m)?;
        let name = format!("All-{}", m.label());
        let fused = ChannelScores::new(name, channels[0].sample_ids.clone(), rows)?;
        std::fs::write(a.out.join(format!("fused_{m}.txt")), fused.to_text())?;
        let mut preds = String::new();
        for (id, row) in fused.sample_ids.iter().zip(&fused.scores) {
            preds.push_str(&format!("{id} {}\n", predict_label(row)));
        }
        std::fs::write(a.out.join(format!("predictions_{m}.txt")), preds)?;
    }
    println!("fused {} channels into {}", channels.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let channels = read_scores(&a.scores)?;
    let methods: Vec<FusionMethod> = parse_methods(&a.methods)?;
    let table = read_labels(&std::fs::read_to_string(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?)?;
    let lookup: std::collections::BTreeMap<&str, usize> = table.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let labels = channels[0]
        .sample_ids
        .iter()
        .map(|id| lookup.get(id.as_str()).copied().with_context(|| format!("no label for sample {id}")))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&channels, &labels, &methods, a.protocol.tag()).map_err(|e| e.in_stage("evaluate", None))?;
    print!("{}", report.to_table());
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("report.txt"), report.to_table())?;
        std::fs::write(out.join("summary.json"), report.to_json())?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::toy(a.protocol, "runs/toy"),
    };
    a.overrides.apply(&mut cfg);
    if let Some(n) = a.subseq {
        cfg.preprocess.subseq = n;
    }
    if let Some(n) = a.augment_rotations {
        cfg.preprocess.augment_rotations = n;
    }
    let out = run_pipeline(&cfg)?;
    print!("{}", out.report.to_table());
    if !out.warnings.is_empty() {
        eprintln!("{} warnings (first: {})", out.warnings.len(), out.warnings.messages[0]);
    }
    println!("artifacts in {}", out.out.display());
    Ok(())
}

fn gen_toy(a: GenToyArgs) -> Result<()> {
    let mut cfg = ToyConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let topo = Topology::default_12();
    std::fs::create_dir_all(&a.out)?;
    let seqs = toy_dataset(&cfg);
    for seq in &seqs {
        std::fs::write(a.out.join(format!("{}.json", seq.id)), write_sequence(seq, &topo))?;
    }
    println!("wrote {} toy sequences to {}", seqs.len(), a.out.display());
    Ok(())
}
