//! Reading and writing skeleton sequences.
//!
//! Two inputs are understood: the canonical line-oriented JSON format
//! (see `docs/sequence-format.md`) and the NTU RGB+D `.skeleton` text layout.
//! Only the canonical format is written.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::skeleton::{Frame, Pose, SkeletonSequence, Topology, Warnings, MAX_BODIES};

pub const FORMAT_TAG: &str = "skelact-sequence";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    CanonicalJson,
    NtuSkeleton,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" | "canonical-json" => Ok(Format::CanonicalJson),
            "ntu" | "ntu-skeleton" => Ok(Format::NtuSkeleton),
            _ => Err(Error::config(format!("unknown sequence format `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parsed {
    pub sequence: SkeletonSequence,
    pub warnings: Warnings,
}

/// Parses against the default 12-joint topology.
pub fn parse_sequence(bytes: &[u8], format: Format) -> Result<Parsed> {
    parse_sequence_with(bytes, format, &Topology::default_12())
}

pub fn parse_sequence_with(bytes: &[u8], format: Format, topo: &Topology) -> Result<Parsed> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let (line, column) = locate(bytes, e.valid_up_to());
        Error::parse(line, column, "invalid UTF-8")
    })?;
    let parsed = match format {
        Format::CanonicalJson => parse_canonical(text, topo)?,
        Format::NtuSkeleton => parse_ntu(text)?,
    };
    parsed.sequence.validate()?;
    Ok(parsed)
}

fn locate(bytes: &[u8], offset: usize) -> (usize, usize) {
    let before = &bytes[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Serializes to the canonical format. Coordinates use shortest round-trip
/// formatting, so `parse_sequence(write_sequence(s))` is bit-exact.
pub fn write_sequence(seq: &SkeletonSequence, topo: &Topology) -> Vec<u8> {
    let names = topo.joint_names();
    let mut out = String::new();
    let header = serde_json::json!({
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "id": seq.id,
        "label": seq.label,
        "subject": seq.subject_id,
        "view": seq.view_id,
        "topology": seq.topology_id,
        "body_slots": seq.body_slots(),
        "joints": names,
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for frame in &seq.frames {
        write!(out, "{{\"t\":{},\"bodies\":[", frame.index).unwrap();
        for (slot, body) in frame.bodies.iter().enumerate() {
            if slot > 0 {
                out.push(',');
            }
            match body {
                None => out.push_str("null"),
                Some(pose) => {
                    out.push('{');
                    for (j, p) in pose.iter().enumerate() {
                        if j > 0 {
                            out.push(',');
                        }
                        write!(
                            out,
                            "{}:[{},{},{}]",
                            Value::from(names[j].as_str()),
                            num(p.x),
                            num(p.y),
                            num(p.z)
                        )
                        .unwrap();
                    }
                    out.push('}');
                }
            }
        }
        out.push_str("]}\n");
    }
    out.into_bytes()
}

fn num(v: f64) -> String {
    serde_json::to_string(&v).expect("finite coordinate")
}

struct Header {
    id: String,
    label: usize,
    subject: u32,
    view: u32,
    topology: String,
    slots: usize,
    /// Position in the topology for each joint listed in the header.
    order: Vec<usize>,
    names: Vec<String>,
}

fn parse_canonical(text: &str, topo: &Topology) -> Result<Parsed> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| Error::parse(1, 1, "empty document"))?;
    let header = parse_header(hline, htext, topo)?;

    let mut frames = Vec::new();
    for (lineno, line) in lines {
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(lineno, e.column(), e.to_string()))?;
        frames.push(parse_frame(lineno, frames.len(), &v, &header)?);
    }
    if frames.is_empty() {
        return Err(Error::parse(hline, 1, "document has a header but no frames"));
    }
    Ok(Parsed {
        sequence: SkeletonSequence {
            id: header.id,
            label: header.label,
            subject_id: header.subject,
            view_id: header.view,
            topology_id: header.topology,
            frames,
        },
        warnings: Warnings::default(),
    })
}

fn parse_header(line: usize, text: &str, topo: &Topology) -> Result<Header> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(line, e.column(), e.to_string()))?;
    let err = |msg: String| Error::parse(line, 1, msg);
    let obj = v.as_object().ok_or_else(|| err("header must be an object".into()))?;
    let field = |k: &str| obj.get(k).ok_or_else(|| err(format!("header is missing `{k}`")));
    let uint = |k: &str| -> Result<u64> {
        field(k)?
            .as_u64()
            .ok_or_else(|| err(format!("header `{k}` must be a non-negative integer")))
    };
    let string = |k: &str| -> Result<String> {
        field(k)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| err(format!("header `{k}` must be a string")))
    };
    if string("format")? != FORMAT_TAG {
        return Err(err(format!("not a `{FORMAT_TAG}` document")));
    }
    let version = uint("version")?;
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let slots = uint("body_slots")? as usize;
    if slots == 0 || slots > MAX_BODIES {
        return Err(err(format!("body_slots must be 1..={MAX_BODIES}")));
    }
    let names: Vec<String> = field("joints")?
        .as_array()
        .and_then(|a| a.iter().map(|n| n.as_str().map(str::to_owned)).collect())
        .ok_or_else(|| err("header `joints` must be a list of names".into()))?;
    if names.len() != topo.joint_count() {
        return Err(err(format!(
            "header lists {} joints, topology `{}` has {}",
            names.len(),
            topo.id(),
            topo.joint_count()
        )));
    }
    let order = names
        .iter()
        .map(|n| {
            topo.joint_index(n)
                .ok_or_else(|| err(format!("unknown joint `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = order.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != order.len() {
        return Err(err("duplicate joint names in header".into()));
    }
    Ok(Header {
        id: string("id")?,
        label: uint("label")? as usize,
        subject: uint("subject")? as u32,
        view: uint("view")? as u32,
        topology: string("topology")?,
        slots,
        order,
        names,
    })
}

fn parse_frame(line: usize, t: usize, v: &Value, h: &Header) -> Result<Frame> {
    let err = |msg: String| Error::parse(line, 1, msg);
    let index = v
        .get("t")
        .and_then(Value::as_u64)
        .ok_or_else(|| err("frame needs a non-negative integer `t`".into()))? as usize;
    let bodies = v
        .get("bodies")
        .and_then(Value::as_array)
        .ok_or_else(|| err("frame needs a `bodies` list".into()))?;
    if bodies.len() != h.slots {
        return Err(err(format!(
            "frame has {} body slots, header declares {}",
            bodies.len(),
            h.slots
        )));
    }
    let mut slots = Vec::with_capacity(h.slots);
    for (slot, body) in bodies.iter().enumerate() {
        if body.is_null() {
            slots.push(None);
            continue;
        }
        let joints = body
            .as_object()
            .ok_or_else(|| err(format!("body {slot} must be an object or null")))?;
        if joints.len() != h.names.len() {
            return Err(err(format!(
                "body {slot} has {} joints, expected {}",
                joints.len(),
                h.names.len()
            )));
        }
        let mut pose: Pose = vec![Vec3::ZERO; h.names.len()];
        for (name, &dst) in h.names.iter().zip(&h.order) {
            let coords = joints
                .get(name)
                .ok_or_else(|| err(format!("body {slot} is missing joint `{name}`")))?;
            let p = parse_point(coords)
                .ok_or_else(|| err(format!("joint `{name}` must be [x, y, z]")))?;
            if !p.is_finite() {
                return Err(Error::validation(format!(
                    "frame {t}, body {slot}, joint `{name}`: non-finite coordinate"
                )));
            }
            pose[dst] = p;
        }
        slots.push(Some(pose));
    }
    Ok(Frame {
        index,
        bodies: slots,
    })
}

/// Accepts numbers, or strings holding a float (so `"NaN"` reaches validation).
fn parse_point(v: &Value) -> Option<Vec3> {
    let a = v.as_array()?;
    if a.len() != 3 {
        return None;
    }
    let c = |x: &Value| match x {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    Some(Vec3::new(c(&a[0])?, c(&a[1])?, c(&a[2])?))
}

/// NTU RGB+D joint index (0-based, 25-joint Kinect v2 layout) for each of
/// the twelve retained joints, in canonical order. Version 1.
pub const NTU_SUBSET_V1: [(usize, &str, &str); 12] = [
    (0, "SpineBase", "hip_center"),
    (1, "SpineMid", "spine"),
    (20, "SpineShoulder", "shoulder_center"),
    (3, "Head", "head"),
    (5, "ElbowLeft", "elbow_left"),
    (6, "WristLeft", "wrist_left"),
    (7, "HandLeft", "hand_left"),
    (9, "ElbowRight", "elbow_right"),
    (10, "WristRight", "wrist_right"),
    (11, "HandRight", "hand_right"),
    (14, "AnkleLeft", "ankle_left"),
    (18, "AnkleRight", "ankle_right"),
];

pub const NTU_JOINTS: usize = 25;

/// Canonical joint index for an NTU joint index, if it is retained.
pub fn ntu_to_canonical(ntu_index: usize) -> Option<usize> {
    NTU_SUBSET_V1.iter().position(|&(n, _, _)| n == ntu_index)
}

/// Reduces a 25-joint NTU pose to the canonical 12. Poses that already have
/// 12 joints are returned unchanged.
pub fn ntu_subset(pose: &[Vec3]) -> Pose {
    if pose.len() == NTU_JOINTS {
        NTU_SUBSET_V1.iter().map(|&(n, _, _)| pose[n]).collect()
    } else {
        pose.to_vec()
    }
}

/// Fields encoded in an NTU file name such as `S001C002P003R002A013`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NtuName {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: u32,
}

impl NtuName {
    pub fn parse(name: &str) -> Option<Self> {
        let stem = name.rsplit('/').next()?;
        let stem = stem.split('.').next()?;
        let mut fields = [0u32; 5];
        let mut rest = stem;
        for (i, tag) in ['S', 'C', 'P', 'R', 'A'].into_iter().enumerate() {
            rest = rest.strip_prefix(tag)?;
            let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
            fields[i] = rest[..end].parse().ok()?;
            rest = &rest[end..];
        }
        rest.is_empty().then_some(NtuName {
            setup: fields[0],
            camera: fields[1],
            performer: fields[2],
            replication: fields[3],
            action: fields[4],
        })
    }

    /// Applies id, label (action - 1), subject and view to a parsed sequence.
    pub fn apply(&self, stem: &str, seq: &mut SkeletonSequence) {
        seq.id = stem.to_owned();
        seq.label = self.action.saturating_sub(1) as usize;
        seq.subject_id = self.performer;
        seq.view_id = self.camera;
    }
}

struct NtuReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> NtuReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.lines.next() {
                Some((i, l)) if l.trim().is_empty() => self.last = i + 1,
                Some((i, l)) => {
                    self.last = i + 1;
                    return Ok((i + 1, l));
                }
                None => return Err(Error::parse(self.last + 1, 1, "unexpected end of file")),
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (line, text) = self.next_line()?;
        text.trim()
            .parse()
            .map_err(|_| Error::parse(line, 1, format!("expected {what} count, found `{}`", text.trim())))
    }
}

fn parse_ntu(text: &str) -> Result<Parsed> {
    let mut r = NtuReader {
        lines: text.lines().enumerate().peekable(),
        last: 0,
    };
    let frame_count = r.count("frame")?;
    // Per frame: (body id, 25-joint pose).
    let mut raw: Vec<Vec<(String, Vec<Vec3>)>> = Vec::with_capacity(frame_count);
    let mut max_in_frame = 0;
    for _ in 0..frame_count {
        let bodies = r.count("body")?;
        max_in_frame = max_in_frame.max(bodies);
        let mut frame = Vec::with_capacity(bodies);
        for _ in 0..bodies {
            let (line, info) = r.next_line()?;
            let id = info
                .split_whitespace()
                .next()
                .ok_or_else(|| Error::parse(line, 1, "empty body info line"))?
                .to_owned();
            let joints = r.count("joint")?;
            if joints != NTU_JOINTS {
                return Err(Error::parse(
                    r.last,
                    1,
                    format!("expected {NTU_JOINTS} joints per body, found {joints}"),
                ));
            }
            let mut pose = Vec::with_capacity(NTU_JOINTS);
            for _ in 0..NTU_JOINTS {
                let (line, text) = r.next_line()?;
                let mut it = text.split_whitespace();
                let mut coord = || -> Result<f64> {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::parse(line, 1, "joint line has fewer than 3 values"))?;
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(line, 1, format!("bad coordinate `{tok}`")))
                };
                let p = Vec3::new(coord()?, coord()?, coord()?);
                if !p.is_finite() {
                    return Err(Error::validation(format!(
                        "frame {}, body `{id}`, line {line}: non-finite coordinate",
                        raw.len()
                    )));
                }
                pose.push(p);
            }
            frame.push((id, pose));
        }
        raw.push(frame);
    }

    let mut warnings = Warnings::default();
    // Body ids in order of first appearance, with summed joint displacement.
    let mut ids: Vec<String> = Vec::new();
    let mut motion: HashMap<String, f64> = HashMap::new();
    let mut last_pose: HashMap<String, &Vec<Vec3>> = HashMap::new();
    for frame in &raw {
        for (id, pose) in frame {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
            if let Some(prev) = last_pose.get(id) {
                let d: f64 = prev.iter().zip(pose).map(|(a, b)| a.distance(*b)).sum();
                *motion.entry(id.clone()).or_default() += d;
            }
            last_pose.insert(id.clone(), pose);
        }
    }
    if ids.is_empty() {
        return Err(Error::validation("NTU file contains no bodies"));
    }
    if ids.len() > MAX_BODIES {
        let mut ranked: Vec<(usize, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (i, motion.get(id).copied().unwrap_or(0.0)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = ranked[..MAX_BODIES].iter().map(|r| r.0).collect();
        keep.sort_unstable();
        warnings.push(format!(
            "{} bodies tracked (at most {max_in_frame} in one frame); kept the {MAX_BODIES} with the most motion: {}",
            ids.len(),
            keep.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>().join(", ")
        ));
        ids = keep.into_iter().map(|i| ids[i].clone()).collect();
    }

    let frames = raw
        .iter()
        .enumerate()
        .map(|(t, frame)| Frame {
            index: t,
            bodies: ids
                .iter()
                .map(|id| {
                    frame
                        .iter()
                        .find(|(fid, _)| fid == id)
                        .map(|(_, pose)| ntu_subset(pose))
                })
                .collect(),
        })
        .collect();
    Ok(Parsed {
        sequence: SkeletonSequence {
            id: String::new(),
            label: 0,
            subject_id: 0,
            view_id: 0,
            topology_id: crate::skeleton::DEFAULT_TOPOLOGY_ID.into(),
            frames,
        },
        warnings,
    })
}
