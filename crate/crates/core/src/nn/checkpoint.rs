//! Model checkpoints: a TOML manifest next to a flat little-endian `f64` file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cnn::{CnnClassifier, CnnConfig};
use super::lstm::{LstmClassifier, LstmConfig};
use super::params::Segment;
use super::train::TrainConfig;
use super::Model;
use crate::error::{read_file, write_file, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Lstm(LstmConfig),
    Cnn(CnnConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub channel: String,
    pub seed: u64,
    pub parameters: usize,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Lstm(LstmClassifier),
    Cnn(CnnClassifier),
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.manifest.toml")), dir.join(format!("{name}.bin")))
}

pub fn save(dir: &Path, name: &str, manifest: &Manifest, params: &[f64]) -> Result<()> {
    let (mpath, bpath) = paths(dir, name);
    let text = toml::to_string(manifest).map_err(|e| Error::config(e.to_string()))?;
    write_file(&mpath, text.as_bytes())?;
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&bpath, &bytes)
}

pub fn save_model<M: Model>(
    dir: &Path,
    name: &str,
    model: &M,
    architecture: Architecture,
    train: &TrainConfig,
) -> Result<()> {
    let manifest = Manifest {
        channel: name.to_owned(),
        seed: train.seed,
        parameters: model.params().len(),
        train: train.clone(),
        architecture,
        segments: model.params().segments.clone(),
    };
    save(dir, name, &manifest, &model.params().data)
}

pub fn load(dir: &Path, name: &str) -> Result<(Manifest, TrainedModel)> {
    let (mpath, bpath) = paths(dir, name);
    let text = String::from_utf8(read_file(&mpath)?)
        .map_err(|_| Error::validation("manifest is not UTF-8"))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", mpath.display())))?;
    let bytes = read_file(&bpath)?;
    if bytes.len() != manifest.parameters * 8 {
        return Err(Error::shape(format!(
            "{} holds {} bytes, manifest lists {} parameters",
            bpath.display(),
            bytes.len(),
            manifest.parameters
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = match &manifest.architecture {
        Architecture::Lstm(cfg) => TrainedModel::Lstm(LstmClassifier::from_params(cfg.clone(), data)?),
        Architecture::Cnn(cfg) => TrainedModel::Cnn(CnnClassifier::from_params(cfg.clone(), data)?),
    };
    let segments = match &model {
        TrainedModel::Lstm(m) => &m.params().segments,
        TrainedModel::Cnn(m) => &m.params().segments,
    };
    if segments != &manifest.segments {
        return Err(Error::shape("manifest segments do not match the architecture"));
    }
    Ok((manifest, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstm_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LstmConfig::new(4, 3, 2);
        let m = LstmClassifier::new(cfg.clone(), 1).unwrap();
        save_model(dir.path(), "R", &m, Architecture::Lstm(cfg), &TrainConfig::lstm()).unwrap();
        let (manifest, back) = load(dir.path(), "R").unwrap();
        assert_eq!(manifest.parameters, m.params().len());
        assert_eq!(back, TrainedModel::Lstm(m));
    }

    #[test]
    fn cnn_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CnnConfig::small(16, 3);
        let m = CnnClassifier::new(cfg.clone(), 2).unwrap();
        save_model(dir.path(), "JTM-xy", &m, Architecture::Cnn(cfg), &TrainConfig::cnn()).unwrap();
        let (_, back) = load(dir.path(), "JTM-xy").unwrap();
        assert_eq!(back, TrainedModel::Cnn(m));
    }

    #[test]
    fn truncated_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LstmConfig::new(2, 2, 2);
        let m = LstmClassifier::new(cfg.clone(), 1).unwrap();
        save_model(dir.path(), "J", &m, Architecture::Lstm(cfg), &TrainConfig::lstm()).unwrap();
        let bin = dir.path().join("J.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(dir.path(), "J"), Err(Error::Shape(_))));
    }
}
