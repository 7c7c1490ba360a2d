//! Per-channel scores, train/test splits and the evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_scores, predict_label, FusionMethod};

/// The ten classifier channels, in report order.
pub const CHANNEL_NAMES: [&str; 10] = [
    "R", "J", "L", "JTM-xy", "JTM-xz", "JTM-yz", "JDM-xy", "JDM-xz", "JDM-yz", "JDM-xyz",
];

/// Named channel subsets fused by product in every report.
pub const NAMED_SUBSETS: [(&str, &[&str]); 3] = [
    ("R-J-L-Mul", &["R", "J", "L"]),
    ("R-J-Mul", &["R", "J"]),
    ("R-JDM-xyz-Mul", &["R", "JDM-xyz"]),
];

pub fn is_channel_name(name: &str) -> bool {
    CHANNEL_NAMES.contains(&name)
}

/// Probability rows of one channel, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScores {
    pub channel: String,
    pub sample_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ChannelScores {
    pub fn new(channel: impl Into<String>, sample_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let s = ChannelScores {
            channel: channel.into(),
            sample_ids,
            scores,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn classes(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_ids.len() != self.scores.len() {
            return Err(Error::shape(format!(
                "channel {}: {} ids for {} score rows",
                self.channel,
                self.sample_ids.len(),
                self.scores.len()
            )));
        }
        let c = self.classes();
        for (id, row) in self.sample_ids.iter().zip(&self.scores) {
            if row.len() != c || c == 0 {
                return Err(Error::shape(format!("channel {}: sample {id} has {} scores", self.channel, row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation(format!("channel {}: sample {id} has an invalid score", self.channel)));
            }
        }
        Ok(())
    }

    /// Accuracy of the channel's own argmax predictions.
    pub fn accuracy(&self, labels: &[usize]) -> Result<f64> {
        let predictions: Vec<usize> = self.scores.iter().map(|r| predict_label(r)).collect();
        accuracy(&predictions, labels)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "skelact-scores 1\nchannel {}\nsamples {}\nclasses {}\n\n",
            self.channel,
            self.len(),
            self.classes()
        );
        for (id, row) in self.sample_ids.iter().zip(&self.scores) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| Error::parse(0, 0, "truncated score header"))?;
            if key.is_empty() {
                return if line == "skelact-scores 1" {
                    Ok(String::new())
                } else {
                    Err(Error::parse(i + 1, 1, "not a score file"))
                };
            }
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| Error::parse(i + 1, 1, format!("expected `{key}`")))
        };
        header("")?;
        let channel = header("channel")?;
        let samples: usize = header("samples")?
            .parse()
            .map_err(|_| Error::parse(3, 9, "bad sample count"))?;
        let classes: usize = header("classes")?
            .parse()
            .map_err(|_| Error::parse(4, 9, "bad class count"))?;
        let mut ids = Vec::with_capacity(samples);
        let mut scores = Vec::with_capacity(samples);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts.next().unwrap().to_owned();
            let row = parts
                .map(f64::from_str)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(i + 1, 1, e.to_string()))?;
            if row.len() != classes {
                return Err(Error::parse(i + 1, 1, format!("expected {classes} scores, found {}", row.len())));
            }
            ids.push(id);
            scores.push(row);
        }
        if ids.len() != samples {
            return Err(Error::validation(format!("score file lists {samples} samples, holds {}", ids.len())));
        }
        ChannelScores::new(channel, ids, scores)
    }
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("no samples to evaluate"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Fuses the rows of several aligned channels sample by sample.
pub fn fuse_channels(channels: &[&ChannelScores], method: FusionMethod) -> Result<Vec<Vec<f64>>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::shape("fusion needs at least one channel"))?;
    check_aligned(channels.iter().copied(), &first.sample_ids)?;
    (0..first.len())
        .map(|i| {
            let rows: Vec<&[f64]> = channels.iter().map(|c| c.scores[i].as_slice()).collect();
            fuse_scores(&rows, method)
        })
        .collect()
}

fn check_aligned<'a>(channels: impl Iterator<Item = &'a ChannelScores>, ids: &[String]) -> Result<()> {
    for c in channels {
        if c.sample_ids != ids {
            return Err(Error::validation(format!(
                "channel {} is not aligned with the reference sample ids",
                c.channel
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub name: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub samples: usize,
    pub classes: usize,
    pub channels: Vec<AccuracyRow>,
    pub fusions: Vec<AccuracyRow>,
    /// Fusion row the confusion matrix belongs to.
    pub best: String,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn channel_accuracy(&self, name: &str) -> Option<f64> {
        self.channels.iter().find(|r| r.name == name).map(|r| r.accuracy)
    }

    pub fn fusion_accuracy(&self, name: &str) -> Option<f64> {
        self.fusions.iter().find(|r| r.name == name).map(|r| r.accuracy)
    }

    pub fn best_channel_accuracy(&self) -> f64 {
        self.channels.iter().map(|r| r.accuracy).fold(0.0, f64::max)
    }

    /// Aligned plain-text table: channel rows, fusion rows, then the confusion matrix.
    pub fn to_table(&self) -> String {
        let width = self
            .channels
            .iter()
            .chain(&self.fusions)
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Protocol: {}  samples: {}  classes: {}",
            self.protocol, self.samples, self.classes
        );
        let rule = "-".repeat(width + 12);
        let _ = writeln!(out, "{rule}\n{:<width$}  {:>9}\n{rule}", "Method", "Accuracy");
        for r in &self.channels {
            let _ = writeln!(out, "{:<width$}  {:>8.2}%", r.name, 100.0 * r.accuracy);
        }
        if !self.fusions.is_empty() {
            let _ = writeln!(out, "{rule}");
        }
        for r in &self.fusions {
            let _ = writeln!(out, "{:<width$}  {:>8.2}%", r.name, 100.0 * r.accuracy);
        }
        let _ = writeln!(out, "{rule}\n\nConfusion matrix ({}), rows = true class:", self.best);
        let cell = self
            .confusion
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(self.classes.to_string().len());
        let _ = write!(out, "{:>cell$} |", "");
        for k in 0..self.classes {
            let _ = write!(out, " {k:>cell$}");
        }
        out.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{k:>cell$} |");
            for v in row {
                let _ = write!(out, " {v:>cell$}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Scores every channel, the named subsets and `All-<method>` for each
/// requested method. `labels[i]` belongs to the i-th sample of the first
/// channel; all channels must share its sample order.
pub fn evaluate(
    channels: &[ChannelScores],
    labels: &[usize],
    methods: &[FusionMethod],
    protocol: &str,
) -> Result<EvalReport> {
    let first = channels
        .first()
        .ok_or_else(|| Error::validation("evaluate needs at least one channel"))?;
    let classes = first.classes();
    for c in channels {
        c.validate()?;
        if c.classes() != classes {
            return Err(Error::shape(format!(
                "channel {} has {} classes, expected {classes}",
                c.channel,
                c.classes()
            )));
        }
    }
    check_aligned(channels.iter(), &first.sample_ids)?;
    if labels.len() != first.len() {
        return Err(Error::shape(format!("{} labels for {} samples", labels.len(), first.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::validation(format!("label {bad} out of range for {classes} classes")));
    }

    let mut channel_rows = Vec::new();
    for c in channels {
        channel_rows.push(AccuracyRow {
            name: c.channel.clone(),
            accuracy: c.accuracy(labels)?,
        });
    }

    let by_name: BTreeMap<&str, &ChannelScores> = channels.iter().map(|c| (c.channel.as_str(), c)).collect();
    let mut fused: Vec<(String, Vec<usize>)> = Vec::new();
    for (name, members) in NAMED_SUBSETS {
        let picked: Option<Vec<&ChannelScores>> = members.iter().map(|m| by_name.get(m).copied()).collect();
        if let Some(picked) = picked {
            let rows = fuse_channels(&picked, FusionMethod::Mul)?;
            fused.push((name.to_owned(), rows.iter().map(|r| predict_label(r)).collect()));
        }
    }
    let all: Vec<&ChannelScores> = channels.iter().collect();
    for &m in methods {
        let name = format!("All-{}", m.label());
        if fused.iter().any(|(n, _)| *n == name) {
            continue;
        }
        let rows = fuse_channels(&all, m)?;
        fused.push((name, rows.iter().map(|r| predict_label(r)).collect()));
    }

    let mut fusion_rows = Vec::new();
    for (name, pred) in &fused {
        fusion_rows.push(AccuracyRow {
            name: name.clone(),
            accuracy: accuracy(pred, labels)?,
        });
    }

    // Best fused row (first on ties); a report without fusions falls back
    // to the first channel.
    let (best, predictions) = match fusion_rows
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, a)) if a >= r.accuracy => acc,
            _ => Some((i, r.accuracy)),
        }) {
        Some((i, _)) => (fused[i].0.clone(), fused[i].1.clone()),
        None => (
            first.channel.clone(),
            first.scores.iter().map(|r| predict_label(r)).collect(),
        ),
    };
    let mut confusion = vec![vec![0; classes]; classes];
    for (&l, &p) in labels.iter().zip(&predictions) {
        confusion[l][p] += 1;
    }

    Ok(EvalReport {
        protocol: protocol.to_owned(),
        samples: labels.len(),
        classes,
        channels: channel_rows,
        fusions: fusion_rows,
        best,
        confusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    CrossSubject,
    CrossView,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::CrossSubject => "cross-subject",
            Protocol::CrossView => "cross-view",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-subject" | "cs" => Ok(Protocol::CrossSubject),
            "cross-view" | "cv" => Ok(Protocol::CrossView),
            _ => Err(Error::config(format!("unknown protocol `{s}`"))),
        }
    }
}

/// What a split needs to know about a sample. Deliberately carries no label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub id: String,
    pub subject_id: u32,
    pub view_id: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Partitions samples by subject or view. With no explicit test list every
/// key outside `train_keys` is a test key; samples whose key is in neither
/// list are dropped.
pub fn make_splits(
    meta: &[SampleMeta],
    protocol: Protocol,
    train_keys: &[u32],
    test_keys: Option<&[u32]>,
) -> Result<Split> {
    let train: BTreeSet<u32> = train_keys.iter().copied().collect();
    if let Some(test) = test_keys {
        if let Some(k) = test.iter().find(|k| train.contains(k)) {
            return Err(Error::config(format!(
                "{} {k} is listed in both train and test partitions",
                if protocol == Protocol::CrossSubject { "subject" } else { "view" }
            )));
        }
    }
    let mut split = Split::default();
    for m in meta {
        let key = match protocol {
            Protocol::CrossSubject => m.subject_id,
            Protocol::CrossView => m.view_id,
        };
        if train.contains(&key) {
            split.train.push(m.id.clone());
        } else if test_keys.is_none_or(|t| t.contains(&key)) {
            split.test.push(m.id.clone());
        }
    }
    if split.train.is_empty() {
        return Err(Error::config(format!("{protocol} split leaves the training set empty")));
    }
    if split.test.is_empty() {
        return Err(Error::config(format!("{protocol} split leaves the test set empty")));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn onehot(labels: &[usize], c: usize) -> Vec<Vec<f64>> {
        labels
            .iter()
            .map(|&l| {
                let mut r = vec![0.1 / (c - 1) as f64; c];
                r[l] = 0.9;
                r
            })
            .collect()
    }

    #[test]
    fn perfect_channel_gives_diagonal_confusion() {
        let labels = [0, 1, 2, 1, 0];
        let ch = ChannelScores::new("R", ids(5), onehot(&labels, 3)).unwrap();
        let r = evaluate(&[ch], &labels, &FusionMethod::ALL, "cross-subject").unwrap();
        assert_eq!(r.channel_accuracy("R"), Some(1.0));
        assert!(r.fusions.iter().all(|f| f.accuracy == 1.0));
        assert_eq!(r.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn uniform_channel_does_not_change_mul() {
        let labels = [0, 1, 2, 2];
        let good = ChannelScores::new("R", ids(4), vec![
            vec![0.5, 0.3, 0.2],
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.2, 0.7],
            vec![0.3, 0.4, 0.3],
        ])
        .unwrap();
        let uniform = ChannelScores::new("J", ids(4), vec![vec![1.0 / 3.0; 3]; 4]).unwrap();
        let alone = evaluate(&[good.clone()], &labels, &[FusionMethod::Mul], "x").unwrap();
        let both = evaluate(&[good, uniform], &labels, &[FusionMethod::Mul], "x").unwrap();
        assert_eq!(alone.fusion_accuracy("All-Mul"), both.fusion_accuracy("All-Mul"));
        assert_eq!(both.fusion_accuracy("All-Mul"), Some(0.5));
    }

    #[test]
    fn named_subsets_and_all_rows() {
        let labels = [0, 1];
        let chans: Vec<ChannelScores> = CHANNEL_NAMES
            .iter()
            .map(|n| ChannelScores::new(*n, ids(2), onehot(&labels, 2)).unwrap())
            .collect();
        let r = evaluate(&chans, &labels, &FusionMethod::ALL, "cross-view").unwrap();
        let names: Vec<&str> = r.fusions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["R-J-L-Mul", "R-J-Mul", "R-JDM-xyz-Mul", "All-Max", "All-Ave", "All-Mul"]);
        assert_eq!(r.channels.len(), 10);
        let table = r.to_table();
        assert!(table.contains("JDM-xyz") && table.contains("All-Mul"));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn misaligned_ids_rejected() {
        let a = ChannelScores::new("R", ids(2), vec![vec![1.0, 0.0]; 2]).unwrap();
        let b = ChannelScores::new("J", vec!["s1".into(), "s0".into()], vec![vec![1.0, 0.0]; 2]).unwrap();
        assert!(evaluate(&[a, b], &[0, 0], &[FusionMethod::Mul], "x").is_err());
    }

    #[test]
    fn score_text_round_trip() {
        let ch = ChannelScores::new("JTM-xz", ids(3), vec![
            vec![0.1, 0.2, 0.7],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.0, 1e-300, 1.0],
        ])
        .unwrap();
        assert_eq!(ChannelScores::from_text(&ch.to_text()).unwrap(), ch);
        assert!(ChannelScores::from_text("skelact-scores 1\nchannel R\nsamples 1\nclasses 2\n\na 0.5\n").is_err());
    }

    fn meta() -> Vec<SampleMeta> {
        (0..8)
            .map(|i| SampleMeta {
                id: format!("s{i}"),
                subject_id: 1 + (i % 4) as u32,
                view_id: (i % 2) as u32,
            })
            .collect()
    }

    #[test]
    fn subject_split() {
        let m = meta();
        let s = make_splits(&m, Protocol::CrossSubject, &[1, 3], None).unwrap();
        let subject = |id: &String| m.iter().find(|x| &x.id == id).unwrap().subject_id;
        assert!(s.test.iter().all(|id| [2, 4].contains(&subject(id))));
        assert!(s.train.iter().all(|id| [1, 3].contains(&subject(id))));
        assert_eq!(s.train.len() + s.test.len(), 8);
    }

    #[test]
    fn split_errors() {
        let m = meta();
        assert!(matches!(
            make_splits(&m, Protocol::CrossView, &[0], Some(&[0, 1])),
            Err(Error::Config(_))
        ));
        let one: Vec<SampleMeta> = m.iter().map(|x| SampleMeta { subject_id: 1, ..x.clone() }).collect();
        assert!(matches!(
            make_splits(&one, Protocol::CrossSubject, &[2], None),
            Err(Error::Config(_))
        ));
    }
}
