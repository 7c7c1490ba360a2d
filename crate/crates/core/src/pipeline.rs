//! End-to-end run configuration and orchestration.
//!
//! A run is a fixed sequence of stages: load, split, prepare (reference
//! lengths, preprocessing, distance ranges), per-channel train and score,
//! evaluate. Every artifact directory is named after a hash of the
//! configuration that produced it, so an unchanged stage is picked up from
//! disk and a changed upstream setting lands in a fresh directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_file, Error, Result};
use crate::eval::{evaluate, is_channel_name, make_splits, ChannelScores, EvalReport, Protocol, SampleMeta, Split, CHANNEL_NAMES};
use crate::features::{extract_channel, select_lines, FeatureChannel, FeatureMatrix, LineSet};
use crate::fusion::FusionMethod;
use crate::io::{parse_sequence_with, Format, NtuName};
use crate::maps::{encode_jdm, encode_jtm, JdmParams, JdmScaling, JtmParams, MapKind, Plane, TextureMap};
use crate::nn::checkpoint::{self, Architecture};
use crate::nn::{train, CnnClassifier, CnnConfig, ImageInput, LstmClassifier, LstmConfig, Model, TrainConfig, TrainOverride};
use crate::preprocess::{center_on_hip, normalize_limbs, rotation_augment, sample_subsequences, ReferenceLengths};
use crate::skeleton::{SkeletonSequence, Topology, Warnings};
use crate::toy::{toy_dataset, ToyConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Toy {
        #[serde(default)]
        toy: ToyConfig,
    },
    Dir {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: String,
    },
}

fn default_format() -> String {
    "json".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: Protocol,
    /// Subject ids (cross-subject) or view ids (cross-view) used for training.
    pub train: Vec<u32>,
    /// Test ids; every id not in `train` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Frames sampled per sequence for the LSTM channels.
    pub subseq: usize,
    /// Y-rotated copies of each training sequence for the trajectory-map channels.
    pub augment_rotations: usize,
    /// Independent frame samplings of each training sequence for the LSTM channels.
    pub lstm_resamples: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            subseq: 20,
            augment_rotations: 8,
            lstm_resamples: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapsConfig {
    pub jtm_size: usize,
    pub jtm_margin: usize,
    pub jdm_width: usize,
    /// Side of the square CNN input every map is letterboxed to.
    pub cnn_input: usize,
    pub hue_start: f64,
    pub hue_end: f64,
}

impl Default for MapsConfig {
    fn default() -> Self {
        MapsConfig {
            jtm_size: 256,
            jtm_margin: 8,
            jdm_width: 256,
            cnn_input: 256,
            hue_start: 0.0,
            hue_end: 255.0,
        }
    }
}

impl MapsConfig {
    fn jtm(&self) -> JtmParams {
        JtmParams {
            size: self.jtm_size,
            margin: self.jtm_margin,
            hue_start: self.hue_start,
            hue_end: self.hue_end,
        }
    }

    fn jdm(&self) -> JdmParams {
        JdmParams {
            width: self.jdm_width,
            hue_start: self.hue_start,
            hue_end: self.hue_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lstm_hidden: usize,
    /// LSTM channel settings; unset fields keep [`TrainConfig::lstm`].
    #[serde(deserialize_with = "lstm_settings")]
    pub lstm: TrainConfig,
    /// CNN channel settings; unset fields keep [`TrainConfig::cnn`].
    #[serde(deserialize_with = "cnn_settings")]
    pub cnn: TrainConfig,
    /// Per-channel overrides of the `lstm` or `cnn` settings, keyed by channel name.
    pub channels: BTreeMap<String, TrainOverride>,
}

fn lstm_settings<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    Ok(TrainOverride::deserialize(d)?.apply(&TrainConfig::lstm()))
}

fn cnn_settings<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    Ok(TrainOverride::deserialize(d)?.apply(&TrainConfig::cnn()))
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lstm_hidden: 128,
            lstm: TrainConfig::lstm(),
            cnn: TrainConfig::cnn(),
            channels: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub out: PathBuf,
    #[serde(default = "all_channels")]
    pub channels: Vec<String>,
    #[serde(default = "all_methods")]
    pub fusion: Vec<FusionMethod>,
    /// Class count; inferred from the training labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Topology TOML file; the default 12-joint skeleton when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub maps: MapsConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_threads() -> usize {
    1
}

fn all_channels() -> Vec<String> {
    CHANNEL_NAMES.iter().map(|s| s.to_string()).collect()
}

fn all_methods() -> Vec<FusionMethod> {
    FusionMethod::ALL.to_vec()
}

/// What a channel consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelInput {
    Features(FeatureChannel),
    Map(MapKind, Plane),
}

pub fn channel_input(name: &str) -> Result<ChannelInput> {
    Ok(match name {
        "R" => ChannelInput::Features(FeatureChannel::R),
        "J" => ChannelInput::Features(FeatureChannel::J),
        "L" => ChannelInput::Features(FeatureChannel::L),
        _ => {
            let (kind, plane) = name
                .split_once('-')
                .ok_or_else(|| Error::config(format!("unknown channel `{name}`")))?;
            let kind: MapKind = kind.to_ascii_lowercase().parse()?;
            let plane: Plane = plane.parse()?;
            if !is_channel_name(name) {
                return Err(Error::config(format!("unknown channel `{name}`")));
            }
            ChannelInput::Map(kind, plane)
        }
    })
}

impl RunConfig {
    /// Desk-sized settings for the built-in toy dataset.
    pub fn toy(protocol: Protocol, out: impl Into<PathBuf>) -> Self {
        let protocol = match protocol {
            Protocol::CrossSubject => ProtocolConfig {
                kind: protocol,
                train: vec![1, 3],
                test: None,
            },
            Protocol::CrossView => ProtocolConfig {
                kind: protocol,
                train: vec![0],
                test: None,
            },
        };
        let lstm = TrainConfig {
            learning_rate: 0.003,
            epochs: 40,
            batch_size: 8,
            ..TrainConfig::lstm()
        };
        let cnn = TrainConfig {
            learning_rate: 0.01,
            epochs: 25,
            batch_size: 8,
            ..TrainConfig::cnn()
        };
        RunConfig {
            seed: 7,
            threads: 1,
            out: out.into(),
            channels: all_channels(),
            fusion: all_methods(),
            classes: None,
            topology: None,
            dataset: DatasetConfig::Toy { toy: ToyConfig::default() },
            protocol,
            preprocess: PreprocessConfig {
                subseq: 20,
                augment_rotations: 8,
                lstm_resamples: 3,
            },
            maps: MapsConfig {
                jtm_size: 48,
                jtm_margin: 3,
                jdm_width: 48,
                cnn_input: 48,
                ..MapsConfig::default()
            },
            training: TrainingConfig {
                lstm_hidden: 32,
                lstm,
                cnn,
                channels: BTreeMap::new(),
            },
        }
    }

    /// Reads a run config, or the `config` table of a run manifest.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("config_hash").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?).map_err(|_| Error::config("config is not UTF-8"))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetConfig::Dir { path: p, .. } = &mut cfg.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(t) = &mut cfg.topology {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Training settings for `channel`, before the channel seed is applied.
    pub fn train_config(&self, channel: &str) -> Result<TrainConfig> {
        let base = match channel_input(channel)? {
            ChannelInput::Features(_) => &self.training.lstm,
            ChannelInput::Map(..) => &self.training.cnn,
        };
        Ok(match self.training.channels.get(channel) {
            Some(o) => o.apply(base),
            None => base.clone(),
        })
    }

    /// Rejects bad settings before any work is done.
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("no channels selected"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if !is_channel_name(c) {
                return Err(Error::config(format!(
                    "unknown channel `{c}` (expected one of {})",
                    CHANNEL_NAMES.join(", ")
                )));
            }
            if self.channels[..i].contains(c) {
                return Err(Error::config(format!("channel `{c}` listed twice")));
            }
        }
        for name in self.training.channels.keys() {
            if !is_channel_name(name) {
                return Err(Error::config(format!("training override for unknown channel `{name}`")));
            }
        }
        if self.fusion.is_empty() {
            return Err(Error::config("no fusion methods selected"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        if self.preprocess.subseq == 0 || self.preprocess.lstm_resamples == 0 {
            return Err(Error::config("subseq and lstm_resamples must be positive"));
        }
        if self.training.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden must be positive"));
        }
        if self.maps.cnn_input < 8 {
            return Err(Error::config("cnn_input must be at least 8"));
        }
        for c in &self.channels {
            self.train_config(c)?.validate()?;
        }
        CnnConfig::small(self.maps.cnn_input, 2).shapes()?;
        match &self.dataset {
            DatasetConfig::Dir { path, format } => {
                format.parse::<Format>()?;
                if !path.is_dir() {
                    return Err(Error::config(format!("dataset directory {} does not exist", path.display())));
                }
            }
            DatasetConfig::Toy { toy } => {
                if toy.subjects == 0 || toy.repetitions == 0 {
                    return Err(Error::config("toy dataset needs subjects and repetitions"));
                }
            }
        }
        if let Some(t) = &self.topology {
            if !t.is_file() {
                return Err(Error::config(format!("topology file {} does not exist", t.display())));
            }
        }
        Ok(())
    }

    /// Hash of the whole configuration, excluding output path and thread count.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = 0;
        content_hash(&c)
    }
}

/// Hex SHA-256 prefix of a value's JSON form.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("hashable value serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for a named stream: the low 63 bits of `SHA-256(global_le || label)`,
/// so it stays representable as a TOML integer.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap()) & (i64::MAX as u64)
}

/// Loads every sequence of the configured dataset, sorted by id.
pub fn load_dataset(cfg: &DatasetConfig, topo: &Topology) -> Result<(Vec<SkeletonSequence>, Warnings)> {
    let mut warnings = Warnings::default();
    let mut seqs = match cfg {
        DatasetConfig::Toy { toy } => toy_dataset(toy),
        DatasetConfig::Dir { path, format } => {
            let format: Format = format.parse()?;
            let ext = match format {
                Format::CanonicalJson => "json",
                Format::NtuSkeleton => "skeleton",
            };
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|inner| Error::File { path: path.clone(), inner })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == ext))
                .collect();
            files.sort();
            let mut out = Vec::with_capacity(files.len());
            for file in files {
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
                let parsed = parse_sequence_with(&read_file(&file)?, format, topo)
                    .map_err(|e| e.in_stage("load", Some(&stem)))?;
                let mut seq = parsed.sequence;
                if format == Format::NtuSkeleton {
                    let name = NtuName::parse(&stem).ok_or_else(|| {
                        Error::validation(format!("file name `{stem}` does not follow SxxxCxxxPxxxRxxxAxxx"))
                            .in_stage("load", Some(&stem))
                    })?;
                    name.apply(&stem, &mut seq);
                }
                for w in parsed.warnings.messages {
                    warnings.push(format!("{stem}: {w}"));
                }
                out.push(seq);
            }
            out
        }
    };
    seqs.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = seqs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::validation(format!("duplicate sequence id `{}`", w[0].id)).in_stage("load", None));
    }
    if seqs.is_empty() {
        return Err(Error::validation("dataset is empty").in_stage("load", None));
    }
    Ok((seqs, warnings))
}

pub fn sample_meta(seqs: &[SkeletonSequence]) -> Vec<SampleMeta> {
    seqs.iter()
        .map(|s| SampleMeta {
            id: s.id.clone(),
            subject_id: s.subject_id,
            view_id: s.view_id,
        })
        .collect()
}

/// Centers then rescales every bone to the reference length.
pub fn preprocess(
    seq: &SkeletonSequence,
    reference: &ReferenceLengths,
    topo: &Topology,
    warnings: &mut Warnings,
) -> Result<SkeletonSequence> {
    let centered = center_on_hip(seq, topo)?;
    normalize_limbs(&centered, reference, topo, warnings)
}

/// Everything derived from the training split that later stages depend on.
pub struct Prepared {
    pub topology: Topology,
    pub lines: LineSet,
    pub split: Split,
    pub reference: ReferenceLengths,
    pub scaling: JdmScaling,
    /// Preprocessed sequences by id.
    pub sequences: BTreeMap<String, SkeletonSequence>,
    pub warnings: Warnings,
    pub hash: String,
}

fn stage_hash(cfg: &RunConfig) -> String {
    content_hash(&(
        "prepare",
        &cfg.dataset,
        &cfg.topology,
        &cfg.protocol,
        cfg.seed,
    ))
}

fn load_topology(cfg: &RunConfig) -> Result<Topology> {
    match &cfg.topology {
        None => Ok(Topology::default_12()),
        Some(path) => {
            let text = String::from_utf8(read_file(path)?).map_err(|_| Error::config("topology file is not UTF-8"))?;
            Topology::from_toml(&text)
        }
    }
}

fn write_split(split: &Split) -> String {
    let mut out = String::new();
    for id in &split.train {
        let _ = writeln!(out, "train {id}");
    }
    for id in &split.test {
        let _ = writeln!(out, "test {id}");
    }
    out
}

/// Loads the data, splits it, estimates reference lengths and distance
/// ranges on the training side and preprocesses every sequence.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let topology = load_topology(cfg).map_err(|e| e.in_stage("load", None))?;
    let (raw, mut warnings) = load_dataset(&cfg.dataset, &topology)?;
    let split = make_splits(&sample_meta(&raw), cfg.protocol.kind, &cfg.protocol.train, cfg.protocol.test.as_deref())
        .map_err(|e| e.in_stage("split", None))?;
    let by_id: BTreeMap<&str, &SkeletonSequence> = raw.iter().map(|s| (s.id.as_str(), s)).collect();

    let centered_train = split
        .train
        .iter()
        .map(|id| center_on_hip(by_id[id.as_str()], &topology).map_err(|e| e.in_stage("prepare", Some(id))))
        .collect::<Result<Vec<_>>>()?;
    let reference =
        ReferenceLengths::estimate(centered_train.iter(), &topology).map_err(|e| e.in_stage("prepare", None))?;

    let mut sequences = BTreeMap::new();
    for id in split.train.iter().chain(&split.test) {
        let seq = preprocess(by_id[id.as_str()], &reference, &topology, &mut warnings)
            .map_err(|e| e.in_stage("prepare", Some(id)))?;
        sequences.insert(id.clone(), seq);
    }
    let scaling = JdmScaling::estimate(split.train.iter().map(|id| &sequences[id]));
    let lines = select_lines(&topology);

    let hash = stage_hash(cfg);
    let dir = cfg.out.join(format!("prepare-{hash}"));
    if !dir.join("done").exists() {
        write_file(&dir.join("split.txt"), write_split(&split).as_bytes())?;
        write_file(&dir.join("reference_lengths.txt"), reference.to_text(&topology).as_bytes())?;
        write_file(&dir.join("jdm_scaling.txt"), scaling.to_text().as_bytes())?;
        write_file(&dir.join("topology.toml"), topology.to_toml().as_bytes())?;
        write_file(&dir.join("done"), b"")?;
    }
    Ok(Prepared {
        topology,
        lines,
        split,
        reference,
        scaling,
        sequences,
        warnings,
        hash,
    })
}

/// Inputs of one channel for a list of sample ids.
enum Inputs {
    Features(Vec<(FeatureMatrix, String)>),
    Maps(Vec<(ImageInput, String)>),
}

fn channel_hash(cfg: &RunConfig, prep: &Prepared, channel: &str) -> Result<String> {
    Ok(content_hash(&(
        &prep.hash,
        channel,
        &cfg.preprocess,
        &cfg.maps,
        cfg.training.lstm_hidden,
        cfg.train_config(channel)?,
        cfg.classes,
    )))
}

/// Feature matrices for the LSTM channel, persisted under `dir`. Training
/// samples are drawn `lstm_resamples` times, test samples once.
fn feature_inputs(
    cfg: &RunConfig,
    prep: &Prepared,
    channel: FeatureChannel,
    ids: &[String],
    training: bool,
    dir: &Path,
    warnings: &mut Warnings,
) -> Result<Inputs> {
    let draws = if training { cfg.preprocess.lstm_resamples } else { 1 };
    let mut out = Vec::new();
    for id in ids {
        let seq = &prep.sequences[id];
        for k in 0..draws {
            let seed = derive_seed(cfg.seed, &format!("subseq/{id}/{k}"));
            let sampled = sample_subsequences(seq, cfg.preprocess.subseq, seed);
            let m = extract_channel(&sampled, channel, &prep.topology, &prep.lines, warnings);
            let name = if draws > 1 { format!("{id}~{k}") } else { id.clone() };
            let mut bytes = Vec::new();
            m.write_to(&mut bytes)?;
            write_file(&dir.join(format!("{name}.feat")), &bytes)?;
            out.push((m, id.clone()));
        }
    }
    Ok(Inputs::Features(out))
}

fn render(cfg: &RunConfig, prep: &Prepared, seq: &SkeletonSequence, kind: MapKind, plane: Plane) -> Result<TextureMap> {
    match kind {
        MapKind::Jtm => encode_jtm(seq, plane, &cfg.maps.jtm()),
        MapKind::Jdm => encode_jdm(seq, plane, &cfg.maps.jdm(), prep.scaling.range(plane)),
    }
}

/// Texture maps for a CNN channel, saved as PNG under `dir`. Trajectory-map
/// training samples are rotation-augmented.
fn map_inputs(
    cfg: &RunConfig,
    prep: &Prepared,
    kind: MapKind,
    plane: Plane,
    ids: &[String],
    training: bool,
    dir: &Path,
) -> Result<Inputs> {
    let mut out = Vec::new();
    for id in ids {
        let seq = &prep.sequences[id];
        let variants = if training && kind == MapKind::Jtm && cfg.preprocess.augment_rotations > 1 {
            rotation_augment(seq, cfg.preprocess.augment_rotations)
                .into_iter()
                .enumerate()
                .map(|(k, mut s)| {
                    if k > 0 {
                        s.id = format!("{id}-rot{}", k * 360 / cfg.preprocess.augment_rotations);
                    }
                    s
                })
                .collect()
        } else {
            vec![seq.clone()]
        };
        for v in &variants {
            let map = render(cfg, prep, v, kind, plane).map_err(|e| e.in_stage("encode", Some(id)))?;
            map.save_png(&dir.join(map.file_name()))?;
            let boxed = map.letterbox(cfg.maps.cnn_input);
            out.push((ImageInput::from(&boxed), id.clone()));
        }
    }
    Ok(Inputs::Maps(out))
}

/// Trains one channel (or reuses a finished stage directory) and returns its
/// test-set scores.
fn run_channel(
    cfg: &RunConfig,
    prep: &Prepared,
    channel: &str,
    train_labels: &BTreeMap<String, usize>,
    classes: usize,
) -> Result<(ChannelScores, Warnings)> {
    let mut warnings = Warnings::default();
    let hash = channel_hash(cfg, prep, channel)?;
    let dir = cfg.out.join("channels").join(format!("{channel}-{hash}"));
    if dir.join("done").exists() {
        let text = String::from_utf8(read_file(&dir.join("scores.txt"))?)
            .map_err(|_| Error::validation("score file is not UTF-8"))?;
        return Ok((ChannelScores::from_text(&text)?, warnings));
    }

    let mut tc = cfg.train_config(channel)?;
    tc.seed = derive_seed(cfg.seed, &format!("train/{channel}"));
    tc.time_steps = cfg.preprocess.subseq;
    let init_seed = derive_seed(cfg.seed, &format!("init/{channel}"));
    let data_dir = cfg.out.join(format!("inputs-{}", content_hash(&(&prep.hash, &cfg.preprocess, &cfg.maps))));
    let inputs = |ids: &[String], training: bool, warnings: &mut Warnings| -> Result<Inputs> {
        let sub = data_dir.join(channel).join(if training { "train" } else { "test" });
        match channel_input(channel)? {
            ChannelInput::Features(fc) => feature_inputs(cfg, prep, fc, ids, training, &sub, warnings),
            ChannelInput::Map(kind, plane) => map_inputs(cfg, prep, kind, plane, ids, training, &sub),
        }
    };
    let train_in = inputs(&prep.split.train, true, &mut warnings).map_err(|e| e.in_stage("featurize", None))?;
    let test_in = inputs(&prep.split.test, false, &mut warnings).map_err(|e| e.in_stage("featurize", None))?;

    let scores = match (train_in, test_in) {
        (Inputs::Features(tr), Inputs::Features(te)) => {
            let dim = tr.first().map_or(0, |(m, _)| m.cols);
            let mut lc = LstmConfig::new(dim, cfg.training.lstm_hidden, classes);
            lc.time_steps = cfg.preprocess.subseq;
            lc.dropout = tc.dropout;
            let mut model = LstmClassifier::new(lc.clone(), init_seed)?;
            let data: Vec<_> = tr.into_iter().map(|(m, id)| (m, train_labels[&id])).collect();
            train(&mut model, &data, &tc).map_err(|e| e.in_stage("train", Some(channel)))?;
            checkpoint::save_model(&dir, "model", &model, Architecture::Lstm(lc), &tc)?;
            score(&model, te, channel)?
        }
        (Inputs::Maps(tr), Inputs::Maps(te)) => {
            let mut cc = CnnConfig::small(cfg.maps.cnn_input, classes);
            cc.dropout = tc.dropout;
            let mut model = CnnClassifier::new(cc.clone(), init_seed)?;
            let data: Vec<_> = tr.into_iter().map(|(m, id)| (m, train_labels[&id])).collect();
            train(&mut model, &data, &tc).map_err(|e| e.in_stage("train", Some(channel)))?;
            checkpoint::save_model(&dir, "model", &model, Architecture::Cnn(cc), &tc)?;
            score(&model, te, channel)?
        }
        _ => unreachable!("train and test inputs share a channel type"),
    };
    write_file(&dir.join("scores.txt"), scores.to_text().as_bytes())?;
    write_file(&dir.join("done"), b"")?;
    Ok((scores, warnings))
}

fn score<M: Model>(model: &M, inputs: Vec<(M::Input, String)>, channel: &str) -> Result<ChannelScores> {
    let mut ids = Vec::with_capacity(inputs.len());
    let mut rows = Vec::with_capacity(inputs.len());
    for (x, id) in inputs {
        rows.push(model.forward(&x).map_err(|e| e.in_stage("score", Some(&id)))?);
        ids.push(id);
    }
    ChannelScores::new(channel, ids, rows)
}

/// Result of a full run.
pub struct RunOutput {
    pub report: EvalReport,
    pub scores: Vec<ChannelScores>,
    pub warnings: Warnings,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    version: &'static str,
    seed: u64,
    channel_seeds: BTreeMap<String, (u64, u64)>,
    config: &'a RunConfig,
}

/// Runs every stage and writes the report, per-channel scores and a manifest
/// under `cfg.out`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate().map_err(|e| e.in_stage("config", None))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &RunConfig) -> Result<RunOutput> {
    let prep = prepare(cfg)?;
    let mut warnings = prep.warnings.clone();

    let train_labels: BTreeMap<String, usize> =
        prep.split.train.iter().map(|id| (id.clone(), prep.sequences[id].label)).collect();
    let classes = match cfg.classes {
        Some(c) => c,
        None => train_labels.values().max().map_or(0, |m| m + 1),
    };
    if classes < 2 {
        return Err(Error::config("need at least two classes").in_stage("train", None));
    }
    if let Some((id, l)) = train_labels.iter().find(|(_, &l)| l >= classes) {
        return Err(Error::validation(format!("label {l} out of range")).in_stage("train", Some(id)));
    }

    let results: Vec<Result<(ChannelScores, Warnings)>> = cfg
        .channels
        .par_iter()
        .map(|c| run_channel(cfg, &prep, c, &train_labels, classes))
        .collect();
    let mut scores = Vec::new();
    for r in results {
        let (s, w) = r?;
        warnings.extend(w);
        scores.push(s);
    }
    for s in &scores {
        write_file(&cfg.out.join("scores").join(format!("{}.txt", s.channel)), s.to_text().as_bytes())?;
    }

    // Test labels are read here and nowhere earlier.
    let test_labels: Vec<usize> = scores[0].sample_ids.iter().map(|id| prep.sequences[id].label).collect();
    let report = evaluate(&scores, &test_labels, &cfg.fusion, cfg.protocol.kind.tag())
        .map_err(|e| e.in_stage("evaluate", None))?;
    let mut labels = String::new();
    for (id, l) in scores[0].sample_ids.iter().zip(&test_labels) {
        let _ = writeln!(labels, "{id} {l}");
    }
    write_file(&cfg.out.join("labels.txt"), labels.as_bytes())?;
    write_file(&cfg.out.join("report.txt"), report.to_table().as_bytes())?;
    write_file(&cfg.out.join("summary.json"), report.to_json().as_bytes())?;

    // Input paths are stored absolute so the manifest can be reloaded from anywhere.
    let mut recorded = cfg.clone();
    if let DatasetConfig::Dir { path, .. } = &mut recorded.dataset {
        *path = std::path::absolute(&*path)?;
    }
    if let Some(t) = &mut recorded.topology {
        *t = std::path::absolute(&*t)?;
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        channel_seeds: cfg
            .channels
            .iter()
            .map(|c| {
                (
                    c.clone(),
                    (derive_seed(cfg.seed, &format!("init/{c}")), derive_seed(cfg.seed, &format!("train/{c}"))),
                )
            })
            .collect(),
        config: &recorded,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::config(e.to_string()))?;
    write_file(&cfg.out.join("manifest.toml"), text.as_bytes())?;

    Ok(RunOutput {
        report,
        scores,
        warnings,
        out: cfg.out.clone(),
    })
}

/// Reads a `sample-id label` table.
pub fn read_labels(text: &str) -> Result<Vec<(String, usize)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut parts = l.split_whitespace();
            let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(i + 1, 1, "expected `sample-id label`"));
            };
            let label = label.parse().map_err(|_| Error::parse(i + 1, id.len() + 2, "bad label"))?;
            Ok((id.to_owned(), label))
        })
        .collect()
}
