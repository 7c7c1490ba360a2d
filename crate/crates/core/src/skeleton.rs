//! Sequence data model and joint topology.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Body slots per frame. Sequences with one performer leave the second slot absent.
pub const MAX_BODIES: usize = 2;

/// The twelve retained joints, in canonical index order.
pub const JOINT_NAMES: [&str; 12] = [
    "hip_center",
    "spine",
    "shoulder_center",
    "head",
    "elbow_left",
    "wrist_left",
    "hand_left",
    "elbow_right",
    "wrist_right",
    "hand_right",
    "ankle_left",
    "ankle_right",
];

pub const DEFAULT_TOPOLOGY_ID: &str = "default-12";

/// Joint positions of one body in one frame, indexed by topology joint index.
pub type Pose = Vec<Vec3>;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    /// One entry per body slot; `None` marks an absent body.
    pub bodies: Vec<Option<Pose>>,
}

impl Frame {
    pub fn valid_bodies(&self) -> impl Iterator<Item = (usize, &Pose)> {
        self.bodies
            .iter()
            .enumerate()
            .filter_map(|(slot, b)| b.as_ref().map(|p| (slot, p)))
    }

    /// Body in `slot`, treating slots past the end as absent.
    pub fn body(&self, slot: usize) -> Option<&Pose> {
        self.bodies.get(slot).and_then(Option::as_ref)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    pub subject_id: u32,
    pub view_id: u32,
    pub topology_id: String,
    pub frames: Vec<Frame>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn body_slots(&self) -> usize {
        self.frames.first().map_or(0, |f| f.bodies.len())
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.frames
            .iter()
            .flat_map(|f| f.valid_bodies())
            .map(|(_, p)| p.len())
            .next()
    }

    /// Applies `f` to every joint of every present body.
    pub fn map_joints(&self, mut f: impl FnMut(Vec3) -> Vec3) -> SkeletonSequence {
        let mut out = self.clone();
        for frame in &mut out.frames {
            for pose in frame.bodies.iter_mut().flatten() {
                for p in pose.iter_mut() {
                    *p = f(*p);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::validation(format!("sequence `{}` has no frames", self.id)));
        }
        let slots = self.body_slots();
        if slots == 0 || slots > MAX_BODIES {
            return Err(Error::validation(format!(
                "sequence `{}` has {slots} body slots (expected 1..={MAX_BODIES})",
                self.id
            )));
        }
        let joints = self.joint_count();
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.bodies.len() != slots {
                return Err(Error::validation(format!(
                    "frame {t}: {} body slots, sequence has {slots}",
                    frame.bodies.len()
                )));
            }
            for (slot, pose) in frame.valid_bodies() {
                if Some(pose.len()) != joints {
                    return Err(Error::validation(format!(
                        "frame {t}, body {slot}: {} joints, expected {}",
                        pose.len(),
                        joints.unwrap_or(0)
                    )));
                }
                if let Some(j) = pose.iter().position(|p| !p.is_finite()) {
                    return Err(Error::validation(format!(
                        "frame {t}, body {slot}, joint {j}: non-finite coordinate"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Collected non-fatal diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Warnings {
    pub messages: Vec<String>,
}

impl Warnings {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn extend(&mut self, other: Warnings) {
        self.messages.extend(other.messages);
    }
}

/// Kinetic-chain tree over the retained joints.
///
/// Edges are stored parent -> child, oriented away from `root`. End joints
/// are the chain terminals and must each appear in exactly one edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct Topology {
    id: String,
    joint_names: Vec<String>,
    root: usize,
    edges: Vec<(usize, usize)>,
    end_joints: Vec<usize>,
    parent: Vec<Option<usize>>,
    /// Edges in breadth-first order from the root.
    walk: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    id: String,
    root: String,
    joints: Vec<String>,
    edges: Vec<[String; 2]>,
    end_joints: Vec<String>,
}

impl TryFrom<TopologyFile> for Topology {
    type Error = Error;

    fn try_from(f: TopologyFile) -> Result<Self> {
        let index = |name: &str| {
            f.joints
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(format!("topology: unknown joint `{name}`")))
        };
        let root = index(&f.root)?;
        let edges = f
            .edges
            .iter()
            .map(|[a, b]| Ok((index(a)?, index(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let ends = f
            .end_joints
            .iter()
            .map(|n| index(n))
            .collect::<Result<Vec<_>>>()?;
        Topology::new(f.id.clone(), f.joints.clone(), root, &edges, ends)
    }
}

impl From<Topology> for TopologyFile {
    fn from(t: Topology) -> Self {
        let name = |i: usize| t.joint_names[i].clone();
        TopologyFile {
            id: t.id.clone(),
            root: name(t.root),
            joints: t.joint_names.clone(),
            edges: t.edges.iter().map(|&(a, b)| [name(a), name(b)]).collect(),
            end_joints: t.end_joints.iter().map(|&j| name(j)).collect(),
        }
    }
}

impl Topology {
    /// Builds a topology from undirected edges; they are re-oriented away from `root`.
    pub fn new(
        id: impl Into<String>,
        joint_names: Vec<String>,
        root: usize,
        edges: &[(usize, usize)],
        mut end_joints: Vec<usize>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 || root >= n {
            return Err(Error::config("topology: root out of range"));
        }
        for (i, name) in joint_names.iter().enumerate() {
            if joint_names[..i].contains(name) {
                return Err(Error::config(format!("topology: duplicate joint name `{name}`")));
            }
        }
        if edges.len() + 1 != n {
            return Err(Error::config(format!(
                "topology: {n} joints need {} tree edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::config(format!("topology: invalid edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut walk = Vec::with_capacity(n - 1);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(j) = queue.pop_front() {
            for &k in &adj[j] {
                if !seen[k] {
                    seen[k] = true;
                    parent[k] = Some(j);
                    walk.push((j, k));
                    queue.push_back(k);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config("topology: kinetic chain is not connected"));
        }
        end_joints.sort_unstable();
        end_joints.dedup();
        for &e in &end_joints {
            if e >= n || adj[e].len() != 1 {
                return Err(Error::config(format!(
                    "topology: end joint {e} must appear in exactly one edge"
                )));
            }
        }
        let edges = walk.clone();
        Ok(Topology {
            id: id.into(),
            joint_names,
            root,
            edges,
            end_joints,
            parent,
            walk,
        })
    }

    /// The 12-joint chain used throughout: hip center as root, arms hanging
    /// off the shoulder center, ankles directly off the hip.
    pub fn default_12() -> Self {
        let names = JOINT_NAMES.iter().map(|s| s.to_string()).collect();
        let edges = [
            (0, 1),
            (1, 2),
            (2, 3),
            (2, 4),
            (4, 5),
            (5, 6),
            (2, 7),
            (7, 8),
            (8, 9),
            (0, 10),
            (0, 11),
        ];
        Topology::new(DEFAULT_TOPOLOGY_ID, names, 0, &edges, vec![3, 6, 9, 10, 11])
            .expect("default topology is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("topology file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology serializes")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Parent -> child edges in breadth-first order from the root.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.walk
    }

    pub fn end_joints(&self) -> &[usize] {
        &self.end_joints
    }

    pub fn is_end(&self, j: usize) -> bool {
        self.end_joints.binary_search(&j).is_ok()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn edge_name(&self, (a, b): (usize, usize)) -> String {
        format!("{}-{}", self.joint_names[a], self.joint_names[b])
    }
}

impl Default for Topology {
    fn default() -> Self {
        Topology::default_12()
    }
}
