//! Per-frame geometric features for the LSTM channels.
//!
//! * R: relative position `p_j - p_k` for every unordered joint pair.
//! * J: Euclidean distance `|p_j - p_k|` for every unordered joint pair.
//! * L: distance from each joint to each selected line, via triangle area.
//!
//! Rows always cover `MAX_BODIES` body slots; absent bodies contribute zeros.

use std::fmt;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::skeleton::{Frame, SkeletonSequence, Topology, Warnings, MAX_BODIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LineKind {
    /// Both joints interior to the chain and directly connected.
    Adjacent,
    /// An end joint and the joint two steps toward the root.
    EndTwoStep,
    /// Two end joints.
    EndEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Line {
    pub j: usize,
    pub k: usize,
    pub kind: LineKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineSet {
    pub lines: Vec<Line>,
}

impl LineSet {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn count(&self, kind: LineKind) -> usize {
        self.lines.iter().filter(|l| l.kind == kind).count()
    }
}

/// Lines used for joint-line distances, sorted by `(j, k)`.
///
/// A pair produced by more than one rule is kept once, under the earliest rule.
pub fn select_lines(topo: &Topology) -> LineSet {
    let mut lines: Vec<Line> = Vec::new();
    let mut add = |a: usize, b: usize, kind: LineKind| {
        let (j, k) = if a < b { (a, b) } else { (b, a) };
        if !lines.iter().any(|l| l.j == j && l.k == k) {
            lines.push(Line { j, k, kind });
        }
    };
    for &(a, b) in topo.edges() {
        if !topo.is_end(a) && !topo.is_end(b) {
            add(a, b, LineKind::Adjacent);
        }
    }
    for &e in topo.end_joints() {
        if let Some(g) = topo.parent(e).and_then(|p| topo.parent(p)) {
            add(e, g, LineKind::EndTwoStep);
        }
    }
    let ends = topo.end_joints();
    for (i, &a) in ends.iter().enumerate() {
        for &b in &ends[i + 1..] {
            add(a, b, LineKind::EndEnd);
        }
    }
    lines.sort_by_key(|l| (l.j, l.k));
    LineSet { lines }
}

/// Number of (line, third joint) combinations without any line selection:
/// every triple of joints yields three lines.
pub fn unconstrained_line_count(joints: usize) -> usize {
    if joints < 3 {
        return 0;
    }
    3 * joints * (joints - 1) * (joints - 2) / 6
}

/// Triangle area from side lengths, using the cancellation-safe ordering
/// of Heron's formula on sides sorted `a >= b >= c`.
///
/// Side triples that break the triangle inequality by more than a relative
/// `1e-9` are rejected; smaller violations are rounding and give area 0.
pub fn triangle_area_heron(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0 && c >= 0.0) || !(a + b + c).is_finite() {
        return Err(Error::Triangle { a, b, c });
    }
    let mut s = [a, b, c];
    s.sort_by(|x, y| y.total_cmp(x));
    let [a, b, c] = s;
    let gap = c - (a - b);
    if gap < 0.0 {
        if -gap > 1e-9 * a {
            return Err(Error::Triangle { a, b, c });
        }
        return Ok(0.0);
    }
    let prod = (a + (b + c)) * gap * (c + (a - b)) * (a + (b - c));
    Ok(0.25 * prod.max(0.0).sqrt())
}

pub const PAIRS_PER_BODY: usize = 66;

/// Unordered joint pairs `j < k` in row-major order.
pub fn joint_pairs(joints: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..joints).flat_map(move |j| (j + 1..joints).map(move |k| (j, k)))
}

pub fn relative_positions(frame: &Frame, joints: usize) -> Vec<f64> {
    let pairs = joints * joints.saturating_sub(1) / 2;
    let mut row = Vec::with_capacity(MAX_BODIES * pairs * 3);
    for slot in 0..MAX_BODIES {
        match frame.body(slot) {
            Some(p) => {
                for (j, k) in joint_pairs(joints) {
                    row.extend((p[j] - p[k]).to_array());
                }
            }
            None => row.extend(std::iter::repeat_n(0.0, pairs * 3)),
        }
    }
    row
}

pub fn joint_joint_distances(frame: &Frame, joints: usize) -> Vec<f64> {
    let pairs = joints * joints.saturating_sub(1) / 2;
    let mut row = Vec::with_capacity(MAX_BODIES * pairs);
    for slot in 0..MAX_BODIES {
        match frame.body(slot) {
            Some(p) => row.extend(joint_pairs(joints).map(|(j, k)| p[j].distance(p[k]))),
            None => row.extend(std::iter::repeat_n(0.0, pairs)),
        }
    }
    row
}

/// Distance from `n` to the line through `j` and `k`, as twice the triangle
/// area over the base length. `None` when the line is degenerate.
pub fn point_line_distance(n: Vec3, j: Vec3, k: Vec3) -> Option<f64> {
    let base = j.distance(k);
    if base < 1e-9 {
        return None;
    }
    // Side lengths come from real points, so any inequality violation is rounding.
    let area = triangle_area_heron(n.distance(j), n.distance(k), base).unwrap_or(0.0);
    Some(2.0 * area / base)
}

pub fn joint_line_distances(
    frame: &Frame,
    joints: usize,
    lines: &LineSet,
    warnings: &mut Warnings,
) -> Vec<f64> {
    let per_body = lines.len() * joints.saturating_sub(2);
    let mut row = Vec::with_capacity(MAX_BODIES * per_body);
    for slot in 0..MAX_BODIES {
        let Some(p) = frame.body(slot) else {
            row.extend(std::iter::repeat_n(0.0, per_body));
            continue;
        };
        for line in &lines.lines {
            let others = (0..joints).filter(|&n| n != line.j && n != line.k);
            let (a, b) = (p[line.j], p[line.k]);
            if a.distance(b) < 1e-9 {
                warnings.push(format!(
                    "frame {}, body {slot}: degenerate line ({}, {})",
                    frame.index, line.j, line.k
                ));
                row.extend(others.map(|_| 0.0));
            } else {
                row.extend(others.map(|n| point_line_distance(p[n], a, b).unwrap_or(0.0)));
            }
        }
    }
    row
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureChannel {
    R,
    J,
    L,
    Concat,
}

impl FeatureChannel {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureChannel::R => "R",
            FeatureChannel::J => "J",
            FeatureChannel::L => "L",
            FeatureChannel::Concat => "concat",
        }
    }

    /// Row width for a topology with `joints` joints and `lines` lines.
    pub fn dim(self, joints: usize, lines: usize) -> usize {
        let pairs = joints * joints.saturating_sub(1) / 2;
        match self {
            FeatureChannel::R => MAX_BODIES * pairs * 3,
            FeatureChannel::J => MAX_BODIES * pairs,
            FeatureChannel::L => MAX_BODIES * lines * joints.saturating_sub(2),
            FeatureChannel::Concat => {
                Self::R.dim(joints, lines) + Self::J.dim(joints, lines) + Self::L.dim(joints, lines)
            }
        }
    }
}

impl fmt::Display for FeatureChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for FeatureChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" => Ok(FeatureChannel::R),
            "J" => Ok(FeatureChannel::J),
            "L" => Ok(FeatureChannel::L),
            "concat" | "R-J-L" => Ok(FeatureChannel::Concat),
            _ => Err(Error::config(format!("unknown feature channel `{s}`"))),
        }
    }
}

/// Time-major feature table: `rows` frames by `cols` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub channel: FeatureChannel,
    pub topology_id: String,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    /// Writes a text header followed by little-endian `f64` values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        write!(
            w,
            "skelact-features 1\nchannel {}\ntopology {}\nrows {}\ncols {}\n\n",
            self.channel, self.topology_id, self.rows, self.cols
        )?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut fields = std::collections::HashMap::new();
        let mut lineno = 0;
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::parse(lineno + 1, 1, "truncated feature header"));
            }
            lineno += 1;
            let line = line.trim_end_matches('\n');
            if line.is_empty() {
                break;
            }
            if lineno == 1 {
                if line != "skelact-features 1" {
                    return Err(Error::parse(1, 1, "not a feature table"));
                }
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse(lineno, 1, "expected `key value`"))?;
            fields.insert(k.to_owned(), v.to_owned());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::parse(lineno, 1, format!("feature header missing `{k}`")))
        };
        let dim = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(lineno, 1, format!("bad `{k}`")))
        };
        let (rows, cols) = (dim("rows")?, dim("cols")?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != rows * cols * 8 {
            return Err(Error::shape(format!(
                "feature body holds {} bytes, header says {rows}x{cols}",
                bytes.len()
            )));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            channel: get("channel")?.parse()?,
            topology_id: get("topology")?,
            data: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

/// Builds the `T x D` feature table for one channel.
pub fn extract_channel(
    seq: &SkeletonSequence,
    channel: FeatureChannel,
    topo: &Topology,
    lines: &LineSet,
    warnings: &mut Warnings,
) -> FeatureMatrix {
    let joints = topo.joint_count();
    let cols = channel.dim(joints, lines.len());
    let mut data = Vec::with_capacity(seq.len() * cols);
    for frame in &seq.frames {
        match channel {
            FeatureChannel::R => data.extend(relative_positions(frame, joints)),
            FeatureChannel::J => data.extend(joint_joint_distances(frame, joints)),
            FeatureChannel::L => data.extend(joint_line_distances(frame, joints, lines, warnings)),
            FeatureChannel::Concat => {
                data.extend(relative_positions(frame, joints));
                data.extend(joint_joint_distances(frame, joints));
                data.extend(joint_line_distances(frame, joints, lines, warnings));
            }
        }
    }
    FeatureMatrix {
        rows: seq.len(),
        cols,
        channel,
        topology_id: topo.id().to_owned(),
        data,
    }
}
