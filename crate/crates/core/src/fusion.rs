//! Late fusion of per-channel class-probability vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores are clamped to this floor before multiplication.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Max,
    Avg,
    Mul,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Max, FusionMethod::Avg, FusionMethod::Mul];

    pub fn tag(self) -> &'static str {
        match self {
            FusionMethod::Max => "max",
            FusionMethod::Avg => "avg",
            FusionMethod::Mul => "mul",
        }
    }

    /// Suffix used in report row names (`All-Max`, `All-Ave`, `All-Mul`).
    pub fn label(self) -> &'static str {
        match self {
            FusionMethod::Max => "Max",
            FusionMethod::Avg => "Ave",
            FusionMethod::Mul => "Mul",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(FusionMethod::Max),
            "avg" | "ave" | "mean" => Ok(FusionMethod::Avg),
            "mul" | "prod" => Ok(FusionMethod::Mul),
            other => Err(Error::config(format!("unknown fusion method `{other}`"))),
        }
    }
}

/// Parses a comma-separated method list such as `max,avg,mul`.
pub fn parse_methods(s: &str) -> Result<Vec<FusionMethod>> {
    let methods = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Error::config("no fusion methods given"));
    }
    Ok(methods)
}

/// Element-wise max, mean or product of the given vectors. The product is
/// left unnormalized.
pub fn fuse_scores<V: AsRef<[f64]>>(vectors: &[V], method: FusionMethod) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::shape("fusion needs at least one score vector"))?
        .as_ref();
    let c = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.as_ref().len() != c) {
        return Err(Error::shape(format!(
            "score vectors differ in length ({} vs {c})",
            bad.as_ref().len()
        )));
    }
    if vectors.len() == 1 {
        return Ok(first.to_vec());
    }
    let mut out = match method {
        FusionMethod::Max => vec![f64::NEG_INFINITY; c],
        FusionMethod::Avg => vec![0.0; c],
        FusionMethod::Mul => vec![1.0; c],
    };
    for v in vectors {
        for (o, &s) in out.iter_mut().zip(v.as_ref()) {
            match method {
                FusionMethod::Max => *o = o.max(s),
                FusionMethod::Avg => *o += s,
                FusionMethod::Mul => *o *= s.max(SCORE_FLOOR),
            }
        }
    }
    if method == FusionMethod::Avg {
        let n = vectors.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict_label(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mul = fuse_scores(&[[0.6, 0.4], [0.5, 0.5]], FusionMethod::Mul).unwrap();
        assert!((mul[0] - 0.30).abs() < 1e-15 && (mul[1] - 0.20).abs() < 1e-15);
        let max = fuse_scores(&[[0.2, 0.8], [0.9, 0.1]], FusionMethod::Max).unwrap();
        assert_eq!(max, vec![0.9, 0.8]);
        for m in FusionMethod::ALL {
            assert_eq!(fuse_scores(&[[0.1, 0.7, 0.2]], m).unwrap(), vec![0.1, 0.7, 0.2]);
        }
        assert_eq!(predict_label(&mul), 0);
        assert_eq!(predict_label(&[0.5, 0.5]), 0);
    }

    #[test]
    fn errors() {
        let empty: [Vec<f64>; 0] = [];
        assert!(fuse_scores(&empty, FusionMethod::Avg).is_err());
        assert!(fuse_scores(&[vec![0.5, 0.5], vec![1.0]], FusionMethod::Max).is_err());
    }

    #[test]
    fn avg_of_identical_is_exact() {
        let v = [0.1, 0.2, 0.7];
        assert_eq!(fuse_scores(&[v, v], FusionMethod::Avg).unwrap(), v.to_vec());
    }

    #[test]
    fn mul_floor_keeps_class_recoverable() {
        let fused = fuse_scores(&[[0.0, 1.0], [1.0, 0.0], [0.9, 0.1]], FusionMethod::Mul).unwrap();
        assert!(fused.iter().all(|&v| v > 0.0));
        assert_eq!(predict_label(&fused), 0);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(parse_methods("max,avg,mul").unwrap(), FusionMethod::ALL.to_vec());
        assert!(parse_methods("max,sum").is_err());
        assert!(parse_methods("").is_err());
    }
}
