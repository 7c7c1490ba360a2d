//! Python bindings for the skeleton action-recognition core.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use skelact_core::eval::{evaluate, ChannelScores, Protocol};
use skelact_core::features::{extract_channel as extract, select_lines as lines, FeatureChannel};
use skelact_core::fusion::{fuse_scores as fuse, predict_label as predict, FusionMethod};
use skelact_core::geometry::Vec3;
use skelact_core::io::{parse_sequence_with, write_sequence as write, Format};
use skelact_core::maps::{encode_jdm as jdm, encode_jtm as jtm, DistanceRange, JdmParams, JtmParams, Plane, TextureMap};
use skelact_core::nn::{gradient_check as gradcheck, ModelKind};
use skelact_core::pipeline::{run_pipeline as run, RunConfig};
use skelact_core::skeleton::{Frame, Warnings, DEFAULT_TOPOLOGY_ID};
use skelact_core::toy::{toy_dataset as toy, ToyConfig};
use skelact_core::{SkeletonSequence, Topology};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Body = Option<Vec<[f64; 3]>>;

/// A skeleton sequence on the default 12-joint topology.
#[pyclass(name = "Sequence", module = "skelact", skip_from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: SkeletonSequence,
}

#[pymethods]
impl PySequence {
    /// Builds a sequence from `frames[t][body]`, each body a list of `[x, y, z]` or `None`.
    #[new]
    #[pyo3(signature = (id, frames, label=0, subject_id=0, view_id=0))]
    fn new(id: String, frames: Vec<Vec<Body>>, label: usize, subject_id: u32, view_id: u32) -> PyResult<Self> {
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(index, bodies)| Frame {
                index,
                bodies: bodies
                    .into_iter()
                    .map(|b| b.map(|pose| pose.into_iter().map(Vec3::from).collect()))
                    .collect(),
            })
            .collect();
        let inner = SkeletonSequence {
            id,
            label,
            subject_id,
            view_id,
            topology_id: DEFAULT_TOPOLOGY_ID.to_owned(),
            frames,
        };
        inner.validate().map_err(err)?;
        let expected = Topology::default_12().joint_count();
        if let Some(n) = inner.joint_count().filter(|&n| n != expected) {
            return Err(PyValueError::new_err(format!("bodies have {n} joints, expected {expected}")));
        }
        Ok(PySequence { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn label(&self) -> usize {
        self.inner.label
    }

    #[getter]
    fn subject_id(&self) -> u32 {
        self.inner.subject_id
    }

    #[getter]
    fn view_id(&self) -> u32 {
        self.inner.view_id
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Joint coordinates as `frames[t][body]`.
    fn frames(&self) -> Vec<Vec<Body>> {
        self.inner
            .frames
            .iter()
            .map(|f| {
                f.bodies
                    .iter()
                    .map(|b| b.as_ref().map(|pose| pose.iter().map(|p| p.to_array()).collect()))
                    .collect()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(id={:?}, frames={}, label={}, subject_id={}, view_id={})",
            self.inner.id,
            self.inner.len(),
            self.inner.label,
            self.inner.subject_id,
            self.inner.view_id
        )
    }
}

/// Parses a canonical (`json`) or NTU (`ntu`) document. Returns the sequence and its warnings.
#[pyfunction]
#[pyo3(signature = (data, format="json"))]
fn parse_sequence(data: &str, format: &str) -> PyResult<(PySequence, Vec<String>)> {
    let format: Format = format.parse().map_err(err)?;
    let parsed = parse_sequence_with(data.as_bytes(), format, &Topology::default_12()).map_err(err)?;
    Ok((PySequence { inner: parsed.sequence }, parsed.warnings.messages))
}

/// Serializes to the canonical format.
#[pyfunction]
fn write_sequence(seq: &PySequence) -> String {
    String::from_utf8(write(&seq.inner, &Topology::default_12())).expect("canonical output is UTF-8")
}

/// Selected lines of the default topology as `(j, k, kind)`.
#[pyfunction]
fn select_lines() -> Vec<(usize, usize, String)> {
    lines(&Topology::default_12())
        .lines
        .iter()
        .map(|l| (l.j, l.k, format!("{:?}", l.kind)))
        .collect()
}

/// Feature rows (`R`, `J`, `L` or `concat`), one per frame.
#[pyfunction]
fn extract_channel(seq: &PySequence, channel: &str) -> PyResult<Vec<Vec<f64>>> {
    let channel: FeatureChannel = channel.parse().map_err(err)?;
    let topo = Topology::default_12();
    let mut warnings = Warnings::default();
    let m = extract(&seq.inner, channel, &topo, &lines(&topo), &mut warnings);
    Ok((0..m.rows).map(|t| m.row(t).to_vec()).collect())
}

#[pyfunction]
fn triangle_area_heron(a: f64, b: f64, c: f64) -> PyResult<f64> {
    skelact_core::features::triangle_area_heron(a, b, c).map_err(err)
}

fn raster(m: TextureMap) -> (usize, usize, Vec<u8>) {
    (m.width, m.height, m.pixels)
}

/// Joint trajectory map as `(width, height, rgb_bytes)`.
#[pyfunction]
#[pyo3(signature = (seq, plane, size=256))]
fn encode_jtm(seq: &PySequence, plane: &str, size: usize) -> PyResult<(usize, usize, Vec<u8>)> {
    let plane: Plane = plane.parse().map_err(err)?;
    let params = JtmParams { size, ..JtmParams::default() };
    jtm(&seq.inner, plane, &params).map(raster).map_err(err)
}

/// Joint distance map as `(width, height, rgb_bytes)`, hue scaled over `[min_distance, max_distance]`.
#[pyfunction]
#[pyo3(signature = (seq, plane, min_distance, max_distance, width=256))]
fn encode_jdm(
    seq: &PySequence,
    plane: &str,
    min_distance: f64,
    max_distance: f64,
    width: usize,
) -> PyResult<(usize, usize, Vec<u8>)> {
    let plane: Plane = plane.parse().map_err(err)?;
    let params = JdmParams { width, ..JdmParams::default() };
    let range = DistanceRange {
        min: min_distance,
        max: max_distance,
    };
    jdm(&seq.inner, plane, &params, range).map(raster).map_err(err)
}

/// Element-wise `max`, `avg` or `mul` of score vectors.
#[pyfunction]
fn fuse_scores(vectors: Vec<Vec<f64>>, method: &str) -> PyResult<Vec<f64>> {
    let method: FusionMethod = method.parse().map_err(err)?;
    fuse(&vectors, method).map_err(err)
}

/// Index of the largest score (lowest index on ties).
#[pyfunction]
fn predict_label(scores: Vec<f64>) -> PyResult<usize> {
    if scores.is_empty() {
        return Err(PyValueError::new_err("empty score vector"));
    }
    Ok(predict(&scores))
}

/// Max relative error between analytic and finite-difference gradients of a small `lstm` or `cnn`.
#[pyfunction]
#[pyo3(signature = (kind, seed=7))]
fn gradient_check(py: Python<'_>, kind: &str, seed: u64) -> PyResult<f64> {
    let kind: ModelKind = kind.parse().map_err(err)?;
    py.detach(|| gradcheck(kind, seed)).map_err(err)
}

/// The synthetic six-action dataset.
#[pyfunction]
#[pyo3(signature = (seed=None))]
fn toy_dataset(seed: Option<u64>) -> Vec<PySequence> {
    let mut cfg = ToyConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    toy(&cfg).into_iter().map(|inner| PySequence { inner }).collect()
}

/// Accuracy report for per-channel score matrices aligned with `labels`.
/// Returns the JSON summary.
#[pyfunction]
#[pyo3(signature = (channels, labels, protocol="cross-subject"))]
fn evaluate_scores(channels: Vec<(String, Vec<Vec<f64>>)>, labels: Vec<usize>, protocol: &str) -> PyResult<String> {
    let protocol: Protocol = protocol.parse().map_err(err)?;
    let ids: Vec<String> = (0..labels.len()).map(|i| i.to_string()).collect();
    let channels = channels
        .into_iter()
        .map(|(name, rows)| ChannelScores::new(name, ids.clone(), rows))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let report = evaluate(&channels, &labels, &FusionMethod::ALL, protocol.tag()).map_err(err)?;
    Ok(report.to_json())
}

/// Runs the full pipeline from a TOML configuration; returns `(report_table, summary_json)`.
/// With `toy_protocol` set, the built-in toy configuration is used and `config` is the output directory.
#[pyfunction]
#[pyo3(signature = (config, toy_protocol=None))]
fn run_pipeline(py: Python<'_>, config: &str, toy_protocol: Option<&str>) -> PyResult<(String, String)> {
    let cfg = match toy_protocol {
        Some(p) => RunConfig::toy(p.parse().map_err(err)?, config),
        None => RunConfig::from_toml(config).map_err(err)?,
    };
    let out = py.detach(|| run(&cfg)).map_err(err)?;
    Ok((out.report.to_table(), out.report.to_json()))
}

#[pymodule]
fn skelact(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_function(wrap_pyfunction!(parse_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(write_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(select_lines, m)?)?;
    m.add_function(wrap_pyfunction!(extract_channel, m)?)?;
    m.add_function(wrap_pyfunction!(triangle_area_heron, m)?)?;
    m.add_function(wrap_pyfunction!(encode_jtm, m)?)?;
    m.add_function(wrap_pyfunction!(encode_jdm, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_scores, m)?)?;
    m.add_function(wrap_pyfunction!(predict_label, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_scores, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
