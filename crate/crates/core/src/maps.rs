//! Texture maps for the CNN channels.
//!
//! A joint trajectory map (JTM) draws each joint's path projected onto a
//! plane, with hue running from `hue_start` to `hue_end` over time. A joint
//! distance map (JDM) gives each unordered joint pair a row and each
//! (resampled) frame a column; the pair distance picks the hue.
//! Saturation and value are fixed at 1, so only hue carries information.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::joint_pairs;
use crate::geometry::Vec3;
use crate::skeleton::{SkeletonSequence, MAX_BODIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapKind {
    Jtm,
    Jdm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Plane {
    Xy,
    Xz,
    Yz,
    Xyz,
}

impl Plane {
    pub const ALL: [Plane; 4] = [Plane::Xy, Plane::Xz, Plane::Yz, Plane::Xyz];

    pub fn tag(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Xz => "xz",
            Plane::Yz => "yz",
            Plane::Xyz => "xyz",
        }
    }

    /// In-plane coordinates (horizontal, vertical). `Xyz` has no projection.
    fn project(self, p: Vec3) -> (f64, f64) {
        match self {
            Plane::Xy => (p.x, p.y),
            Plane::Xz => (p.x, p.z),
            Plane::Yz => (p.y, p.z),
            Plane::Xyz => unreachable!("xyz is not a projection plane"),
        }
    }

    fn distance(self, a: Vec3, b: Vec3) -> f64 {
        match self {
            Plane::Xyz => a.distance(b),
            _ => {
                let ((au, av), (bu, bv)) = (self.project(a), self.project(b));
                (au - bu).hypot(av - bv)
            }
        }
    }
}

impl MapKind {
    pub fn tag(self) -> &'static str {
        match self {
            MapKind::Jtm => "jtm",
            MapKind::Jdm => "jdm",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Plane::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown plane `{s}`")))
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jtm" => Ok(MapKind::Jtm),
            "jdm" => Ok(MapKind::Jdm),
            _ => Err(Error::config(format!("unknown map kind `{s}`"))),
        }
    }
}

/// RGB raster, 8 bits per channel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub kind: MapKind,
    pub plane: Plane,
    pub source_id: String,
}

impl TextureMap {
    fn blank(width: usize, height: usize, kind: MapKind, plane: Plane, source_id: &str) -> Self {
        TextureMap {
            width,
            height,
            pixels: vec![0; width * height * 3],
            kind,
            plane,
            source_id: source_id.to_owned(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// `<seqid>_<kind>_<plane>.png`
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.png", self.source_id, self.kind, self.plane)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: &Path, kind: MapKind, plane: Plane) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(TextureMap {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.into_raw(),
            kind,
            plane,
            source_id: path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned(),
        })
    }

    /// Nearest-neighbour scale to fit inside `size x size` keeping aspect,
    /// centred on black.
    pub fn letterbox(&self, size: usize) -> TextureMap {
        let scale = (size as f64 / self.width as f64).min(size as f64 / self.height as f64);
        let nw = ((self.width as f64 * scale).round() as usize).clamp(1, size);
        let nh = ((self.height as f64 * scale).round() as usize).clamp(1, size);
        let (ox, oy) = ((size - nw) / 2, (size - nh) / 2);
        let mut out = TextureMap::blank(size, size, self.kind, self.plane, &self.source_id);
        for y in 0..nh {
            let sy = y * self.height / nh;
            for x in 0..nw {
                let sx = x * self.width / nw;
                out.put(ox + x, oy + y, self.pixel(sx, sy));
            }
        }
        out
    }

    /// Channel-major `[3][H][W]` floats in `[0, 1]`.
    pub fn to_tensor(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c] as f64 / 255.0;
            }
        }
        out
    }
}

/// HSV with S = V = 1 to 8-bit RGB. `hue` in degrees.
pub fn hue_to_rgb(hue: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let sector = (h.floor() as usize).min(5);
    let f = h - sector as f64;
    let (q, t) = (1.0 - f, f);
    let (r, g, b) = match sector {
        0 => (1.0, t, 0.0),
        1 => (q, 1.0, 0.0),
        2 => (0.0, 1.0, t),
        3 => (0.0, q, 1.0),
        4 => (t, 0.0, 1.0),
        _ => (1.0, 0.0, q),
    };
    let byte = |v: f64| (v * 255.0).round() as u8;
    [byte(r), byte(g), byte(b)]
}

/// Hue in degrees of an RGB pixel; `None` for grey (including black).
pub fn rgb_to_hue([r, g, b]: [u8; 3]) -> Option<f64> {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(60.0 * h)
}

/// Integer Bresenham line, endpoints included, in drawing order.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JtmParams {
    pub size: usize,
    pub margin: usize,
    pub hue_start: f64,
    pub hue_end: f64,
}

impl Default for JtmParams {
    fn default() -> Self {
        JtmParams {
            size: 256,
            margin: 8,
            hue_start: 0.0,
            hue_end: 255.0,
        }
    }
}

fn hue_at(t: usize, frames: usize, start: f64, end: f64) -> f64 {
    if frames <= 1 {
        start
    } else {
        start + (end - start) * t as f64 / (frames - 1) as f64
    }
}

pub fn encode_jtm(seq: &SkeletonSequence, plane: Plane, params: &JtmParams) -> Result<TextureMap> {
    if plane == Plane::Xyz {
        return Err(Error::config("trajectory maps need a projection plane (xy, xz, yz)"));
    }
    let size = params.size;
    if size == 0 || 2 * params.margin >= size {
        return Err(Error::config("trajectory map size must exceed twice the margin"));
    }
    let mut map = TextureMap::blank(size, size, MapKind::Jtm, plane, &seq.id);

    let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for frame in &seq.frames {
        for (_, pose) in frame.valid_bodies() {
            for &p in pose {
                let (u, v) = plane.project(p);
                lo_u = lo_u.min(u);
                hi_u = hi_u.max(u);
                lo_v = lo_v.min(v);
                hi_v = hi_v.max(v);
            }
        }
    }
    if lo_u > hi_u {
        return Ok(map);
    }
    let extent = (hi_u - lo_u).max(hi_v - lo_v);
    let scale = if extent > 1e-12 {
        (size - 1 - 2 * params.margin) as f64 / extent
    } else {
        0.0
    };
    let (mid_u, mid_v) = ((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0);
    let center = (size - 1) as f64 / 2.0;
    let to_px = |p: Vec3| {
        let (u, v) = plane.project(p);
        (
            (center + (u - mid_u) * scale).round() as i64,
            (center - (v - mid_v) * scale).round() as i64,
        )
    };

    let frames = seq.len();
    let hue = |t: usize| hue_at(t, frames, params.hue_start, params.hue_end);
    let mut plot = |x: i64, y: i64, h: f64| {
        if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
            map.put(x as usize, y as usize, hue_to_rgb(h));
        }
    };
    for t in 0..frames {
        let next = seq.frames.get(t + 1);
        for (slot, pose) in seq.frames[t].valid_bodies() {
            match next.and_then(|f| f.body(slot)) {
                Some(next_pose) => {
                    let (h0, h1) = (hue(t), hue(t + 1));
                    for (a, b) in pose.iter().zip(next_pose) {
                        let (x0, y0) = to_px(*a);
                        let (x1, y1) = to_px(*b);
                        let pts = bresenham(x0, y0, x1, y1);
                        let n = pts.len();
                        for (i, (x, y)) in pts.into_iter().enumerate() {
                            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                            plot(x, y, h0 + (h1 - h0) * frac);
                        }
                    }
                }
                None => {
                    for p in pose {
                        let (x, y) = to_px(*p);
                        plot(x, y, hue(t));
                    }
                }
            }
        }
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JdmParams {
    pub width: usize,
    pub hue_start: f64,
    pub hue_end: f64,
}

impl Default for JdmParams {
    fn default() -> Self {
        JdmParams {
            width: 256,
            hue_start: 0.0,
            hue_end: 255.0,
        }
    }
}

/// Dataset-level distance range used to map distances to hue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceRange {
    pub min: f64,
    pub max: f64,
}

impl DistanceRange {
    fn hue(&self, d: f64, start: f64, end: f64) -> f64 {
        let span = self.max - self.min;
        if !(span > 0.0) {
            return (start + end) / 2.0;
        }
        start + ((d - self.min) / span).clamp(0.0, 1.0) * (end - start)
    }
}

/// Per-plane distance ranges, estimated on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct JdmScaling {
    pub ranges: [DistanceRange; 4],
}

impl JdmScaling {
    pub fn range(&self, plane: Plane) -> DistanceRange {
        self.ranges[plane as usize]
    }

    pub fn estimate<'a>(seqs: impl IntoIterator<Item = &'a SkeletonSequence>) -> Self {
        let mut ranges = [DistanceRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }; 4];
        for seq in seqs {
            for frame in &seq.frames {
                for (_, pose) in frame.valid_bodies() {
                    for (j, k) in joint_pairs(pose.len()) {
                        for plane in Plane::ALL {
                            let d = plane.distance(pose[j], pose[k]);
                            let r = &mut ranges[plane as usize];
                            r.min = r.min.min(d);
                            r.max = r.max.max(d);
                        }
                    }
                }
            }
        }
        for r in &mut ranges {
            if r.min > r.max {
                *r = DistanceRange { min: 0.0, max: 0.0 };
            }
        }
        JdmScaling { ranges }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# joint distance ranges per plane: plane min max\n");
        for plane in Plane::ALL {
            let r = self.range(plane);
            writeln!(out, "{plane} {:?} {:?}", r.min, r.max).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ranges = [None; 4];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(i + 1, 1, "expected `plane min max`");
            let [plane, min, max] = parts[..] else {
                return Err(bad());
            };
            let plane: Plane = plane.parse()?;
            ranges[plane as usize] = Some(DistanceRange {
                min: min.parse().map_err(|_| bad())?,
                max: max.parse().map_err(|_| bad())?,
            });
        }
        let mut out = [DistanceRange { min: 0.0, max: 0.0 }; 4];
        for (o, r) in out.iter_mut().zip(ranges) {
            *o = r.ok_or_else(|| Error::config("distance range table must list all four planes"))?;
        }
        Ok(JdmScaling { ranges: out })
    }
}

pub fn encode_jdm(
    seq: &SkeletonSequence,
    plane: Plane,
    params: &JdmParams,
    range: DistanceRange,
) -> Result<TextureMap> {
    let joints = seq
        .joint_count()
        .ok_or_else(|| Error::validation(format!("sequence `{}` has no bodies", seq.id)))?;
    if params.width == 0 || seq.is_empty() {
        return Err(Error::config("distance map needs a positive width and frames"));
    }
    let pairs: Vec<(usize, usize)> = joint_pairs(joints).collect();
    let rows = MAX_BODIES * pairs.len();
    let mut map = TextureMap::blank(params.width, rows, MapKind::Jdm, plane, &seq.id);
    let frames = seq.len();
    for col in 0..params.width {
        let frame = &seq.frames[col * frames / params.width];
        for slot in 0..MAX_BODIES {
            let pose = frame.body(slot);
            for (r, &(j, k)) in pairs.iter().enumerate() {
                let d = pose.map_or(0.0, |p| plane.distance(p[j], p[k]));
                let rgb = hue_to_rgb(range.hue(d, params.hue_start, params.hue_end));
                map.put(col, slot * pairs.len() + r, rgb);
            }
        }
    }
    Ok(map)
}
