//! Procedural 33-part quadruped template.
//!
//! The body is a single tube running from the tail tip through the torso,
//! neck and head to the snout. Legs and ears hang off square holes cut into
//! that tube; jaw and eyes are patches of its surface. Frame: `x` points to
//! the animal's left, `y` up, `z` forward. The left half is built first and
//! the right half is its exact reflection.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::imagefit::KeypointVertexMap;
use crate::mesh::{
    centroid, sagittal_pairing, KinematicTree, Mesh, PartLabeling, SkinningWeights, Vec3,
};
use crate::{Error, Result};

pub const PART_COUNT: usize = 33;

pub const PELVIS: usize = 0;
pub const RUMP: usize = 1;
pub const SHOULDERS: usize = 5;
pub const CHEST: usize = 6;
pub const NECK: usize = 7;
pub const HEAD: usize = 8;
pub const JAW: usize = 9;
pub const LEFT_EAR: usize = 10;
pub const RIGHT_EAR: usize = 11;
pub const LEFT_EYE: usize = 12;
pub const RIGHT_EYE: usize = 13;
pub const LEFT_FRONT_LEG: usize = 14;
pub const RIGHT_FRONT_LEG: usize = 17;
pub const LEFT_BACK_LEG: usize = 20;
pub const RIGHT_BACK_LEG: usize = 23;
pub const TAIL_BASE: usize = 26;
pub const TAIL_SECTIONS: usize = 7;

/// Torso sections from rear to front.
pub const TORSO: [usize; 7] = [RUMP, PELVIS, 2, 3, 4, SHOULDERS, CHEST];

pub const PART_NAMES: [&str; PART_COUNT] = [
    "pelvis",
    "rump",
    "torso_2",
    "torso_3",
    "torso_4",
    "shoulders",
    "chest",
    "neck",
    "head",
    "jaw",
    "left_ear",
    "right_ear",
    "left_eye",
    "right_eye",
    "left_front_upper",
    "left_front_lower",
    "left_front_paw",
    "right_front_upper",
    "right_front_lower",
    "right_front_paw",
    "left_back_upper",
    "left_back_lower",
    "left_back_paw",
    "right_back_upper",
    "right_back_lower",
    "right_back_paw",
    "tail_0",
    "tail_1",
    "tail_2",
    "tail_3",
    "tail_4",
    "tail_5",
    "tail_6",
];

/// Left/right counterpart of a part; midline parts map to themselves.
pub fn mirror_part(p: usize) -> usize {
    match p {
        LEFT_EAR | LEFT_EYE => p + 1,
        RIGHT_EAR | RIGHT_EYE => p - 1,
        14..=16 | 20..=22 => p + 3,
        17..=19 | 23..=25 => p - 3,
        _ => p,
    }
}

pub fn is_leg(p: usize) -> bool {
    (14..=25).contains(&p)
}

pub fn is_tail(p: usize) -> bool {
    (TAIL_BASE..TAIL_BASE + TAIL_SECTIONS).contains(&p)
}

/// Construction dimensions of an animal, in model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recipe {
    pub torso_length: f64,
    pub torso_girth: f64,
    pub leg_length: f64,
    pub leg_width: f64,
    pub neck_length: f64,
    pub head_scale: f64,
    pub tail_length: f64,
    pub ear_size: f64,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            torso_length: 1.0,
            torso_girth: 1.0,
            leg_length: 0.55,
            leg_width: 0.045,
            neck_length: 0.25,
            head_scale: 1.0,
            tail_length: 0.6,
            ear_size: 0.08,
        }
    }
}

impl Recipe {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("torso_length", self.torso_length, 0.3, 3.0),
            ("torso_girth", self.torso_girth, 0.4, 2.5),
            ("leg_length", self.leg_length, 0.15, 1.5),
            ("leg_width", self.leg_width, 0.015, 0.09),
            ("neck_length", self.neck_length, 0.08, 0.8),
            ("head_scale", self.head_scale, 0.5, 2.0),
            ("tail_length", self.tail_length, 0.1, 1.5),
            ("ear_size", self.ear_size, 0.02, 0.25),
        ];
        for (name, v, lo, hi) in fields {
            if !(v >= lo && v <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "recipe {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSpec {
    /// Ring resolution: tube rings carry `8 * resolution` vertices.
    pub resolution: usize,
    pub recipe: Recipe,
    /// Length scale of the Gaussian skinning-weight falloff.
    pub skinning_falloff: f64,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self {
            resolution: 2,
            recipe: Recipe::default(),
            skinning_falloff: 0.03,
        }
    }
}

impl TemplateSpec {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }
}

/// Segmented, skinned quadruped mesh with everything the pipeline needs.
#[derive(Debug, Clone)]
pub struct Template {
    pub spec: TemplateSpec,
    pub mesh: Mesh,
    pub labels: PartLabeling,
    pub weights: SkinningWeights,
    pub tree: KinematicTree,
    pub face_parts: Vec<usize>,
    /// Global vertices touched by each part's faces, interfaces included.
    pub part_vertices: Vec<Vec<usize>>,
    /// Vertices averaged into each joint: the interface with the parent, or
    /// the whole part for the root.
    pub joint_vertices: Vec<Vec<usize>>,
    pub pairing: Vec<usize>,
    pub scan_keypoints: Vec<(String, usize)>,
    pub image_keypoints: KeypointVertexMap,
    pub symmetry_groups: Vec<Vec<usize>>,
}

impl Template {
    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn part_count(&self) -> usize {
        self.part_vertices.len()
    }

    /// Joint locations for a mesh with this template's topology.
    pub fn joints_for(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        joints_from_sets(&self.joint_vertices, vertices)
    }

    pub fn scan_keypoint(&self, name: &str) -> Option<usize> {
        self.scan_keypoints
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Depth of each part in the kinematic tree.
    pub fn part_depths(&self) -> Vec<usize> {
        tree_depths(&self.tree)
    }
}

pub fn joints_from_sets(sets: &[Vec<usize>], vertices: &[Vec3]) -> Vec<Vec3> {
    sets.iter()
        .map(|s| s.iter().fold(Vec3::zeros(), |a, &v| a + vertices[v]) / s.len() as f64)
        .collect()
}

fn tree_depths(tree: &KinematicTree) -> Vec<usize> {
    let mut depth = vec![0; tree.joint_count()];
    for &j in tree.order() {
        if let Some(p) = tree.parent(j) {
            depth[j] = depth[p] + 1;
        }
    }
    depth
}

/// One cross-section of the body tube.
#[derive(Debug, Clone, Copy)]
struct Station {
    center: Vec3,
    up: Vec3,
    a: f64,
    b: f64,
}

/// Point and tangent angle along a planar arc in the y-z plane. The angle is
/// measured from `+z` towards `+y`.
fn arc(start: Vec3, angle0: f64, curvature: f64, s: f64) -> (Vec3, f64) {
    let angle = angle0 + curvature * s;
    let offset = if curvature.abs() < 1e-12 {
        Vec3::new(0.0, s * angle0.sin(), s * angle0.cos())
    } else {
        Vec3::new(
            0.0,
            (angle0.cos() - angle.cos()) / curvature,
            (angle.sin() - angle0.sin()) / curvature,
        )
    };
    (start + offset, angle)
}

fn up_from_angle(angle: f64) -> Vec3 {
    let u = Vec3::new(0.0, angle.cos(), -angle.sin());
    if u.y >= 0.0 {
        u
    } else {
        -u
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Girth profile along the torso, `u` running from rear to front.
fn torso_profile(u: f64) -> f64 {
    let rear = lerp(0.3, 1.0, smoothstep(u / 0.2));
    let front = lerp(1.0, 0.7, smoothstep((u - 0.8) / 0.2));
    rear.min(front)
}

/// Index layout of the body tube.
struct TubeLayout {
    q: usize,
    ring: usize,
    /// First torso ring (interface between tail and rump).
    torso_start: usize,
    /// Last torso ring (interface between chest and neck).
    torso_end: usize,
    /// Last neck ring (interface with the head).
    neck_end: usize,
    /// Last head ring, closed by the snout cap.
    head_end: usize,
}

impl TubeLayout {
    fn new(q: usize) -> Self {
        let torso_start = TAIL_SECTIONS * q;
        let torso_end = torso_start + 7 * (q + 2);
        let neck_end = torso_end + q + 1;
        let head_end = neck_end + q + 4;
        Self {
            q,
            ring: 8 * q,
            torso_start,
            torso_end,
            neck_end,
            head_end,
        }
    }

    fn rings(&self) -> usize {
        self.head_end + 1
    }

    fn index(&self, j: usize, k: usize) -> usize {
        j * self.ring + k % self.ring
    }

    fn mirror_k(&self, k: usize) -> usize {
        (4 * self.q + self.ring - k % self.ring) % self.ring
    }

    /// Mirror of the quad starting at angular index `k`.
    fn mirror_quad(&self, k: usize) -> usize {
        (4 * self.q + 2 * self.ring - 1 - k % self.ring) % self.ring
    }

    fn torso_section_start(&self, s: usize) -> usize {
        self.torso_start + s * (self.q + 2)
    }

    /// Part that owns band `j` (between rings `j` and `j + 1`) before patches.
    fn band_part(&self, j: usize) -> usize {
        if j < self.torso_start {
            TAIL_BASE + TAIL_SECTIONS - 1 - j / self.q
        } else if j < self.torso_end {
            TORSO[(j - self.torso_start) / (self.q + 2)]
        } else if j < self.neck_end {
            NECK
        } else {
            HEAD
        }
    }

    fn ear_bands(&self) -> std::ops::Range<usize> {
        self.neck_end + 1..self.neck_end + 1 + self.q
    }

    fn ear_quads(&self) -> std::ops::Range<usize> {
        self.q - 1..2 * self.q - 1
    }

    fn eye_band(&self) -> usize {
        self.neck_end + self.q + 2
    }

    fn eye_quad(&self) -> usize {
        self.q / 2
    }

    fn jaw_bands(&self) -> std::ops::Range<usize> {
        self.neck_end + self.q + 2..self.neck_end + self.q + 4
    }

    fn jaw_quads(&self) -> std::ops::Range<usize> {
        5 * self.q..7 * self.q
    }

    fn leg_hole_start(&self) -> usize {
        6 * self.q + self.q.div_ceil(2)
    }
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_part: Vec<usize>,
}

impl Builder {
    fn push(&mut self, p: Vec3) -> usize {
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    /// Adds `abc` wound so that its normal points away from `inside`.
    fn tri(&mut self, part: usize, mut t: [usize; 3], inside: &Vec3) {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&((a + b + c) / 3.0 - inside)) < 0.0 {
            t.swap(1, 2);
        }
        self.faces.push(t);
        self.face_part.push(part);
    }

    /// Quad `a b c d` split along `a c`.
    fn quad(&mut self, part: usize, q: [usize; 4], inside: &Vec3) {
        self.tri(part, [q[0], q[1], q[2]], inside);
        self.tri(part, [q[0], q[2], q[3]], inside);
    }

    /// Tube between two rings of equal length, ring vertex `i` joined to `i`.
    fn band(&mut self, part: usize, lower: &[usize], upper: &[usize], inside: &Vec3) {
        let n = lower.len();
        for i in 0..n {
            let i1 = (i + 1) % n;
            self.quad(part, [lower[i], lower[i1], upper[i1], upper[i]], inside);
        }
    }

    fn fan(&mut self, part: usize, ring: &[usize], apex: usize, inside: &Vec3) {
        let n = ring.len();
        for i in 0..n {
            self.tri(part, [ring[i], ring[(i + 1) % n], apex], inside);
        }
    }
}

/// Boundary loop of an `h x h` patch of the tube: rings `j0..=j0+h`,
/// angular indices `k0..=k0+h`.
fn patch_loop(layout: &TubeLayout, j0: usize, k0: usize, h: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(4 * h);
    for i in 0..h {
        out.push(layout.index(j0, k0 + i));
    }
    for i in 0..h {
        out.push(layout.index(j0 + i, k0 + h));
    }
    for i in 0..h {
        out.push(layout.index(j0 + h, k0 + h - i));
    }
    for i in 0..h {
        out.push(layout.index(j0 + h - i, k0));
    }
    out
}

/// Named vertices recorded while building the left side.
#[derive(Default)]
struct Landmarks {
    named: BTreeMap<String, usize>,
    sets: BTreeMap<String, Vec<usize>>,
}

struct LegRings {
    upper_mid: usize,
    knee: Vec<usize>,
    knee_front: usize,
    ankle_front: usize,
    paw: usize,
}

/// Upper leg, lower leg and paw below a hole loop.
fn build_leg(
    b: &mut Builder,
    loop_: &[usize],
    parts: [usize; 3],
    recipe: &Recipe,
    q: usize,
) -> LegRings {
    let pts: Vec<Vec3> = loop_.iter().map(|&i| b.vertices[i]).collect();
    let c = centroid(&pts);
    let azimuth: Vec<f64> = pts.iter().map(|p| (p.z - c.z).atan2(p.x - c.x)).collect();
    let ex = pts.iter().map(|p| (p.x - c.x).abs()).fold(0.0, f64::max) * 0.9;
    let ez = pts.iter().map(|p| (p.z - c.z).abs()).fold(0.0, f64::max) * 0.9;
    let y_top = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let len = recipe.leg_length;
    let r = recipe.leg_width;
    let y_start = y_top - 0.05 * len;
    let y_knee = 0.5 * len;
    let y_ankle = 0.13 * len;

    let make_ring = |b: &mut Builder, y: f64, rx: f64, rz: f64, dz: f64| -> Vec<usize> {
        azimuth
            .iter()
            .map(|a| b.push(Vec3::new(c.x + rx * a.cos(), y, c.z + dz + rz * a.sin())))
            .collect()
    };
    let axis = |y: f64, dz: f64| Vec3::new(c.x, y, c.z + dz);

    let mut prev = loop_.to_vec();
    let mut prev_y = c.y;
    let mut upper_rings = Vec::new();
    for i in 0..=q {
        let t = i as f64 / q as f64;
        let y = lerp(y_start, y_knee, t);
        let ring = make_ring(b, y, lerp(ex, 0.8 * r, t), lerp(ez, 0.8 * r, t), 0.0);
        b.band(parts[0], &prev, &ring, &axis(0.5 * (y + prev_y), 0.0));
        upper_rings.push(ring.clone());
        prev = ring;
        prev_y = y;
    }
    let knee = prev.clone();
    for i in 1..=q + 1 {
        let t = i as f64 / (q + 1) as f64;
        let y = lerp(y_knee, y_ankle, t);
        let rr = lerp(0.8 * r, 0.6 * r, t);
        let ring = make_ring(b, y, rr, rr, 0.0);
        b.band(parts[1], &prev, &ring, &axis(0.5 * (y + prev_y), 0.0));
        prev = ring;
        prev_y = y;
    }
    let ankle = prev.clone();
    for (y, rx, rz, dz) in [
        (0.07 * len, 0.7 * r, 0.9 * r, 0.3 * r),
        (0.025 * len, 0.65 * r, 0.85 * r, 0.45 * r),
    ] {
        let ring = make_ring(b, y, rx, rz, dz);
        b.band(parts[2], &prev, &ring, &axis(0.5 * (y + prev_y), 0.2 * r));
        prev = ring;
        prev_y = y;
    }
    let apex = b.push(axis(0.0, 0.5 * r));
    b.fan(parts[2], &prev, apex, &axis(prev_y + 0.01 * len, 0.45 * r));

    let front = |ring: &[usize], b: &Builder| -> usize {
        *ring
            .iter()
            .max_by(|&&i, &&j| b.vertices[i].z.total_cmp(&b.vertices[j].z))
            .unwrap()
    };
    let mid = &upper_rings[q / 2];
    LegRings {
        upper_mid: front(mid, b),
        knee_front: front(&knee, b),
        ankle_front: front(&ankle, b),
        knee,
        paw: apex,
    }
}

/// Cone erected on a hole loop, pointing along `dir`.
fn build_ear(b: &mut Builder, loop_: &[usize], dir: &Vec3, size: f64, part: usize) -> usize {
    let pts: Vec<Vec3> = loop_.iter().map(|&i| b.vertices[i]).collect();
    let c = centroid(&pts);
    let inside = c - dir * size;
    let mid = c + dir * (0.5 * size);
    let ring: Vec<usize> = pts.iter().map(|p| b.push(mid + (p - c) * 0.6)).collect();
    b.band(part, loop_, &ring, &inside);
    let apex = b.push(c + dir * size);
    b.fan(part, &ring, apex, &inside);
    apex
}

pub fn make_template(spec: &TemplateSpec) -> Result<Template> {
    let q = spec.resolution;
    if q == 0 {
        return Err(Error::InvalidArgument(
            "template resolution must be at least 1".into(),
        ));
    }
    spec.recipe.validate()?;
    if !(spec.skinning_falloff > 0.0) {
        return Err(Error::InvalidArgument(
            "skinning falloff must be positive".into(),
        ));
    }
    let recipe = &spec.recipe;
    let layout = TubeLayout::new(q);
    let stations = tube_stations(&layout, recipe);

    let mut b = Builder::default();
    let ring = layout.ring;
    for st in &stations {
        let mut row = vec![Vec3::zeros(); ring];
        for step in 0..=4 * q {
            // Left half: angles from the bottom (6q) through the side (0) to the top (2q).
            let k = (6 * q + step) % ring;
            let phi = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
            let mut p = st.center + Vec3::x() * (st.a * phi.cos()) + st.up * (st.b * phi.sin());
            if step == 0 || step == 4 * q {
                p.x = 0.0;
            }
            row[k] = p;
            let m = layout.mirror_k(k);
            row[m] = Vec3::new(-p.x, p.y, p.z);
        }
        for p in row {
            b.push(p);
        }
    }

    // Patches cut out of, or relabelled on, the tube.
    let h = q;
    let mut holes: HashSet<(usize, usize)> = HashSet::new();
    let mut relabel: HashMap<(usize, usize), usize> = HashMap::new();
    let hole_rows = |section: usize| {
        let s = layout.torso_section_start(section);
        s + 1..s + 1 + h
    };
    let rear_section = TORSO.iter().position(|&p| p == PELVIS).unwrap();
    let front_section = TORSO.iter().position(|&p| p == SHOULDERS).unwrap();
    let k0 = layout.leg_hole_start();
    for section in [rear_section, front_section] {
        for j in hole_rows(section) {
            for i in 0..h {
                let k = (k0 + i) % ring;
                holes.insert((j, k));
                holes.insert((j, layout.mirror_quad(k)));
            }
        }
    }
    for j in layout.ear_bands() {
        for k in layout.ear_quads() {
            holes.insert((j, k));
            holes.insert((j, layout.mirror_quad(k)));
        }
    }
    relabel.insert((layout.eye_band(), layout.eye_quad()), LEFT_EYE);
    relabel.insert(
        (layout.eye_band(), layout.mirror_quad(layout.eye_quad())),
        RIGHT_EYE,
    );
    for j in layout.jaw_bands() {
        for k in layout.jaw_quads() {
            relabel.insert((j, k), JAW);
        }
    }

    for j in 0..layout.rings() - 1 {
        let inside = (stations[j].center + stations[j + 1].center) / 2.0;
        for k in 0..ring {
            if holes.contains(&(j, k)) {
                continue;
            }
            let part = relabel
                .get(&(j, k))
                .copied()
                .unwrap_or_else(|| layout.band_part(j));
            let (a, b1, c, d) = (
                layout.index(j, k),
                layout.index(j, k + 1),
                layout.index(j + 1, k + 1),
                layout.index(j + 1, k),
            );
            // Mirror-consistent diagonals: left quads split along a-c, right along b-d.
            let left = k < 2 * q || k >= 6 * q;
            if left {
                b.quad(part, [a, b1, c, d], &inside);
            } else {
                b.quad(part, [b1, c, d, a], &inside);
            }
        }
    }

    // Caps.
    let first_ring: Vec<usize> = (0..ring).map(|k| layout.index(0, k)).collect();
    let last_ring: Vec<usize> = (0..ring)
        .map(|k| layout.index(layout.head_end, k))
        .collect();
    let tail_tip = {
        let st = &stations[0];
        let next = &stations[1];
        let dir = (st.center - next.center).normalize();
        b.push(st.center + dir * (0.6 * st.b))
    };
    b.fan(
        TAIL_BASE + TAIL_SECTIONS - 1,
        &first_ring,
        tail_tip,
        &stations[0].center,
    );
    let nose = {
        let st = &stations[layout.head_end];
        let prev = &stations[layout.head_end - 1];
        let dir = (st.center - prev.center).normalize();
        b.push(st.center + dir * (0.5 * st.b))
    };
    b.fan(HEAD, &last_ring, nose, &stations[layout.head_end].center);
    let tube_vertex_count = b.vertices.len();

    // Left attachments; recorded so they can be mirrored.
    let mut marks = Landmarks::default();
    let attach_start = b.vertices.len();
    let attach_face_start = b.faces.len();
    let mut legs = Vec::new();
    for (section, parts, name) in [
        (front_section, [14, 15, 16], "left_front"),
        (rear_section, [20, 21, 22], "left_back"),
    ] {
        let j0 = hole_rows(section).start;
        let loop_ = patch_loop(&layout, j0, k0, h);
        let rings = build_leg(&mut b, &loop_, parts, recipe, q);
        legs.push((name, rings));
    }
    let ear_j0 = layout.ear_bands().start;
    let ear_loop = patch_loop(&layout, ear_j0, layout.ear_quads().start, h);
    let ear_dir = {
        let pts: Vec<Vec3> = ear_loop.iter().map(|&i| b.vertices[i]).collect();
        let c = centroid(&pts);
        let axis = stations[ear_j0 + h / 2].center;
        ((c - axis).normalize() + Vec3::y()).normalize()
    };
    let ear_tip = build_ear(
        &mut b,
        &ear_loop,
        &ear_dir,
        recipe.ear_size * recipe.head_scale,
        LEFT_EAR,
    );
    let attach_end = b.vertices.len();
    let attach_face_end = b.faces.len();

    // Mirror the attachments.
    let mut mirror_of: HashMap<usize, usize> = HashMap::new();
    for v in attach_start..attach_end {
        let p = b.vertices[v];
        let m = b.push(Vec3::new(-p.x, p.y, p.z));
        mirror_of.insert(v, m);
    }
    let map = |v: usize, mirror_of: &HashMap<usize, usize>| -> usize {
        if v < tube_vertex_count - 2 {
            let (j, k) = (v / ring, v % ring);
            layout.index(j, layout.mirror_k(k))
        } else {
            mirror_of[&v]
        }
    };
    for f in attach_face_start..attach_face_end {
        let [x, y, z] = b.faces[f];
        let part = mirror_part(b.face_part[f]);
        let face = [map(x, &mirror_of), map(z, &mirror_of), map(y, &mirror_of)];
        b.faces.push(face);
        b.face_part.push(part);
    }

    // Landmarks on the left side and the midline.
    let t = |j: usize, k: usize| layout.index(j, k);
    let mid_ring = |part: usize| {
        let s = TORSO.iter().position(|&p| p == part).unwrap();
        layout.torso_section_start(s) + (q + 2) / 2
    };
    let top = 2 * q;
    let bottom = 6 * q;
    let eye_quad = [
        t(layout.eye_band(), layout.eye_quad()),
        t(layout.eye_band(), layout.eye_quad() + 1),
        t(layout.eye_band() + 1, layout.eye_quad() + 1),
        t(layout.eye_band() + 1, layout.eye_quad()),
    ];
    let neck_mid = layout.torso_end + q.div_ceil(2);
    let tail_mid_ring = layout.torso_start - (TAIL_SECTIONS / 2) * q - q / 2;
    let named = &mut marks.named;
    named.insert("left_eye".into(), eye_quad[0]);
    named.insert("nose".into(), nose);
    named.insert("chin".into(), t(layout.head_end, bottom));
    named.insert("throat".into(), t(neck_mid, bottom));
    named.insert("left_ear_tip".into(), ear_tip);
    named.insert("left_ear_base".into(), ear_loop[0]);
    named.insert("head_top".into(), t(ear_j0 + h, top));
    named.insert("withers".into(), t(mid_ring(SHOULDERS), top));
    named.insert("mid_back".into(), t(mid_ring(3), top));
    named.insert("tail_base".into(), t(layout.torso_start, top));
    named.insert("left_shoulder".into(), t(mid_ring(SHOULDERS), 0));
    named.insert("left_hip".into(), t(mid_ring(PELVIS), 0));
    named.insert("tail_mid".into(), t(tail_mid_ring, top));
    named.insert("tail_tip".into(), tail_tip);
    named.insert("chest".into(), t(mid_ring(CHEST), bottom));
    for (name, rings) in &legs {
        named.insert(format!("{name}_upper"), rings.upper_mid);
        named.insert(format!("{name}_knee"), rings.knee_front);
        named.insert(format!("{name}_ankle"), rings.ankle_front);
        named.insert(format!("{name}_paw"), rings.paw);
        let n = rings.knee.len();
        let knee: Vec<usize> = (0..4).map(|i| rings.knee[i * n / 4]).collect();
        marks.sets.insert(format!("{name}_knee"), knee);
    }
    marks.sets.insert("left_eye".into(), eye_quad.to_vec());
    marks.sets.insert(
        "chin".into(),
        vec![t(layout.head_end, bottom), t(layout.head_end - 1, bottom)],
    );

    finish(spec, b, marks)
}

fn tube_stations(layout: &TubeLayout, recipe: &Recipe) -> Vec<Station> {
    let g = recipe.torso_girth;
    let (a0, b0) = (0.16 * g, 0.19 * g);
    let len = recipe.torso_length;
    let yc = recipe.leg_length + b0;
    let mut st = Vec::with_capacity(layout.rings());
    let torso = |j: usize| {
        let u = (j - layout.torso_start) as f64 / (layout.torso_end - layout.torso_start) as f64;
        let m = torso_profile(u);
        Station {
            center: Vec3::new(0.0, yc, -0.5 * len + u * len),
            up: Vec3::y(),
            a: a0 * m,
            b: b0 * m,
        }
    };
    let rear = torso(layout.torso_start);
    let front = torso(layout.torso_end);
    let neck_bend = 0.8;
    let (neck_end, _) = arc(
        front.center,
        0.0,
        neck_bend / recipe.neck_length,
        recipe.neck_length,
    );
    let tail_bend = 1.0;
    for j in 0..layout.rings() {
        let s = if j < layout.torso_start {
            let frac = (layout.torso_start - j) as f64 / layout.torso_start as f64;
            let s = frac * recipe.tail_length;
            let (center, angle) = arc(
                rear.center,
                std::f64::consts::PI,
                tail_bend / recipe.tail_length,
                s,
            );
            let taper = 1.0 - 0.7 * frac;
            Station {
                center,
                up: up_from_angle(angle),
                a: rear.a * taper,
                b: rear.b * taper,
            }
        } else if j <= layout.torso_end {
            torso(j)
        } else if j <= layout.neck_end {
            let frac = (j - layout.torso_end) as f64 / (layout.neck_end - layout.torso_end) as f64;
            let (center, angle) = arc(
                front.center,
                0.0,
                neck_bend / recipe.neck_length,
                frac * recipe.neck_length,
            );
            let taper = lerp(1.0, 0.75, frac);
            Station {
                center,
                up: up_from_angle(angle),
                a: front.a * taper,
                b: front.b * taper,
            }
        } else {
            let head_len = 0.34 * recipe.head_scale;
            let frac = (j - layout.neck_end) as f64 / (layout.head_end - layout.neck_end) as f64;
            let (center, angle) = arc(neck_end, neck_bend, -1.0 / head_len, frac * head_len);
            let (an, bn) = (0.75 * front.a, 0.75 * front.b);
            let (am, bm) = (0.11 * recipe.head_scale, 0.12 * recipe.head_scale);
            let (a, b) = if frac < 0.35 {
                let t = frac / 0.35;
                (lerp(an, am, t), lerp(bn, bm, t))
            } else {
                let t = (frac - 0.35) / 0.65;
                (lerp(am, 0.45 * am, t), lerp(bm, 0.45 * bm, t))
            };
            Station {
                center,
                up: up_from_angle(angle),
                a,
                b,
            }
        };
        st.push(s);
    }
    st
}

/// Drops unreferenced vertices, derives parts, tree, weights and keypoints.
fn finish(spec: &TemplateSpec, b: Builder, marks: Landmarks) -> Result<Template> {
    let mut used = vec![false; b.vertices.len()];
    for f in &b.faces {
        for &v in f {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; b.vertices.len()];
    let mut vertices = Vec::new();
    for (i, p) in b.vertices.iter().enumerate() {
        if used[i] {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    let faces: Vec<[usize; 3]> = b.faces.iter().map(|f| f.map(|v| remap[v])).collect();
    let mesh = Mesh::new(vertices, faces)?;
    let n = mesh.vertex_count();

    let mut part_sets = vec![BTreeSet::new(); PART_COUNT];
    for (f, &p) in mesh.faces.iter().zip(&b.face_part) {
        part_sets[p].extend(f.iter().copied());
    }
    let part_vertices: Vec<Vec<usize>> = part_sets
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    let mut owners = vec![Vec::new(); n];
    for (p, s) in part_vertices.iter().enumerate() {
        for &v in s {
            owners[v].push(p);
        }
    }
    let mut adjacency = vec![BTreeSet::new(); PART_COUNT];
    for (v, o) in owners.iter().enumerate() {
        if o.len() > 2 {
            return Err(Error::InvalidMesh(format!(
                "vertex {v} shared by parts {o:?}"
            )));
        }
        if let [a, c] = o[..] {
            adjacency[a].insert(c);
            adjacency[c].insert(a);
        }
    }
    let adjacency: Vec<Vec<usize>> = adjacency
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    let provisional =
        KinematicTree::from_adjacency(&adjacency, PELVIS, vec![Vec3::zeros(); PART_COUNT])?;
    // The part graph must itself be a tree for interfaces to be joints.
    let edge_count: usize = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
    if edge_count != PART_COUNT - 1 {
        return Err(Error::InvalidMesh(format!(
            "part adjacency has {edge_count} edges, expected {}",
            PART_COUNT - 1
        )));
    }
    let depth = tree_depths(&provisional);
    let part_of_vertex: Vec<usize> = owners
        .iter()
        .map(|o| *o.iter().max_by_key(|&&p| (depth[p], p)).unwrap())
        .collect();
    let labels = PartLabeling::new(part_of_vertex, PART_COUNT)?;
    for p in 0..PART_COUNT {
        if labels.vertices_of(p).len() < 4 {
            return Err(Error::InvalidMesh(format!(
                "part {p} owns fewer than 4 vertices"
            )));
        }
    }

    let joint_vertices: Vec<Vec<usize>> = (0..PART_COUNT)
        .map(|k| match provisional.parent(k) {
            None => part_vertices[k].clone(),
            Some(p) => part_sets[k].intersection(&part_sets[p]).copied().collect(),
        })
        .collect();
    let joints = joints_from_sets(&joint_vertices, &mesh.vertices);
    let tree = provisional.with_joints(joints);

    let weights = skinning_weights(&mesh.vertices, &part_vertices, spec.skinning_falloff)?;
    let scale = mesh.bbox_diagonal();
    let pairing = sagittal_pairing(&mesh.vertices, 1e-9 * scale)?;

    let named: BTreeMap<String, usize> = marks
        .named
        .iter()
        .map(|(k, &v)| (k.clone(), remap[v]))
        .collect();
    let sets: BTreeMap<String, Vec<usize>> = marks
        .sets
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|&i| remap[i]).collect()))
        .collect();
    let scan_keypoints = scan_keypoint_list(&named, &pairing);
    let image_keypoints = image_keypoint_map(&named, &sets, &pairing);

    Ok(Template {
        spec: *spec,
        mesh,
        labels,
        weights,
        tree,
        face_parts: b.face_part,
        part_vertices,
        joint_vertices,
        pairing,
        scan_keypoints,
        image_keypoints,
        symmetry_groups: symmetry_groups(),
    })
}

/// Parts that share shape coefficients in the stitched model.
pub fn symmetry_groups() -> Vec<Vec<usize>> {
    vec![
        vec![LEFT_EAR, RIGHT_EAR],
        vec![LEFT_EYE, RIGHT_EYE],
        vec![14, 17],
        vec![15, 18],
        vec![20, 23],
        vec![21, 24],
        vec![16, 19, 22, 25],
        vec![2, 3, 4],
    ]
}

/// The 36 scan keypoint names in file order.
pub const SCAN_KEYPOINT_NAMES: [&str; 36] = [
    "left_eye",
    "right_eye",
    "nose",
    "chin",
    "throat",
    "left_ear_tip",
    "right_ear_tip",
    "left_ear_base",
    "right_ear_base",
    "head_top",
    "withers",
    "mid_back",
    "tail_base",
    "left_shoulder",
    "right_shoulder",
    "left_hip",
    "right_hip",
    "left_front_upper",
    "left_front_knee",
    "left_front_ankle",
    "left_front_paw",
    "right_front_upper",
    "right_front_knee",
    "right_front_ankle",
    "right_front_paw",
    "left_back_upper",
    "left_back_knee",
    "left_back_ankle",
    "left_back_paw",
    "right_back_upper",
    "right_back_knee",
    "right_back_ankle",
    "right_back_paw",
    "tail_mid",
    "tail_tip",
    "chest",
];

/// The 20 image keypoint names in file order.
pub const IMAGE_KEYPOINT_NAMES: [&str; 20] = [
    "left_eye",
    "right_eye",
    "nose",
    "chin",
    "throat",
    "withers",
    "tail_base",
    "left_shoulder",
    "right_shoulder",
    "left_hip",
    "right_hip",
    "left_front_knee",
    "right_front_knee",
    "left_back_knee",
    "right_back_knee",
    "left_front_paw",
    "right_front_paw",
    "left_back_paw",
    "right_back_paw",
    "tail_tip",
];

pub const TORSO_KEYPOINTS: [&str; 6] = [
    "withers",
    "tail_base",
    "left_shoulder",
    "right_shoulder",
    "left_hip",
    "right_hip",
];

fn mirrored_name(name: &str) -> Option<String> {
    name.strip_prefix("right_")
        .map(|rest| format!("left_{rest}"))
}

fn scan_keypoint_list(named: &BTreeMap<String, usize>, pairing: &[usize]) -> Vec<(String, usize)> {
    SCAN_KEYPOINT_NAMES
        .iter()
        .map(|&name| {
            let v = match mirrored_name(name) {
                Some(left) => pairing[named[&left]],
                None => named[name],
            };
            (name.to_string(), v)
        })
        .collect()
}

fn image_keypoint_map(
    named: &BTreeMap<String, usize>,
    sets: &BTreeMap<String, Vec<usize>>,
    pairing: &[usize],
) -> KeypointVertexMap {
    let entries = IMAGE_KEYPOINT_NAMES
        .iter()
        .map(|&name| {
            let (source, mirror) = match mirrored_name(name) {
                Some(left) => (left, true),
                None => (name.to_string(), false),
            };
            let mut verts = sets
                .get(&source)
                .cloned()
                .unwrap_or_else(|| vec![named[&source]]);
            if mirror {
                verts = verts.iter().map(|&v| pairing[v]).collect();
            }
            (name.to_string(), verts)
        })
        .collect();
    KeypointVertexMap::new(entries).expect("template keypoint sets are valid")
}

/// Gaussian falloff on the distance to each part, four strongest kept.
fn skinning_weights(
    vertices: &[Vec3],
    parts: &[Vec<usize>],
    falloff: f64,
) -> Result<SkinningWeights> {
    let rows = vertices
        .iter()
        .map(|v| {
            let mut w: Vec<(usize, f64)> = parts
                .iter()
                .enumerate()
                .map(|(p, set)| {
                    let d2 = set
                        .iter()
                        .map(|&i| (vertices[i] - v).norm_squared())
                        .fold(f64::INFINITY, f64::min);
                    (p, (-d2 / (falloff * falloff)).exp())
                })
                .filter(|&(_, w)| w > 1e-8)
                .collect();
            w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            if w.len() > 4 {
                // A tie across the cut would pick a side; drop the whole tied group.
                let cut = w[4].1;
                w.truncate(4);
                if w[3].1 == cut {
                    w.retain(|&(_, x)| x != cut);
                }
            }
            let total: f64 = w.iter().map(|x| x.1).sum();
            w.iter_mut().for_each(|x| x.1 /= total);
            w.sort_by_key(|x| x.0);
            w
        })
        .collect();
    SkinningWeights::new(rows, parts.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{mirror_sagittal, vertex_normals};

    #[test]
    fn default_template_structure() {
        let t = make_template(&TemplateSpec::default()).unwrap();
        assert_eq!(t.part_count(), 33);
        assert_eq!(t.tree.joint_count(), 33);
        assert_eq!(t.tree.root(), PELVIS);
        assert_eq!(t.scan_keypoints.len(), 36);
        assert_eq!(t.image_keypoints.len(), 20);
        let distinct: BTreeSet<usize> = t.scan_keypoints.iter().map(|x| x.1).collect();
        assert_eq!(distinct.len(), 36);
        for p in 0..33 {
            assert!(t.labels.vertices_of(p).len() >= 4, "part {p}");
        }
        assert!(t.mesh.signed_volume() > 0.0);
        vertex_normals(&t.mesh).unwrap();
        assert!(
            t.mesh.boundary_vertices().iter().all(|b| !b),
            "template is closed"
        );
    }

    #[test]
    fn tree_matches_anatomy() {
        let t = make_template(&TemplateSpec::default()).unwrap();
        let parent = |p| t.tree.parent(p);
        assert_eq!(parent(RUMP), Some(PELVIS));
        assert_eq!(parent(2), Some(PELVIS));
        assert_eq!(parent(SHOULDERS), Some(4));
        assert_eq!(parent(NECK), Some(CHEST));
        assert_eq!(parent(HEAD), Some(NECK));
        assert_eq!(parent(JAW), Some(HEAD));
        assert_eq!(parent(LEFT_EAR), Some(HEAD));
        assert_eq!(parent(RIGHT_EYE), Some(HEAD));
        assert_eq!(parent(LEFT_FRONT_LEG), Some(SHOULDERS));
        assert_eq!(parent(16), Some(15));
        assert_eq!(parent(LEFT_BACK_LEG), Some(PELVIS));
        assert_eq!(parent(TAIL_BASE), Some(RUMP));
        assert_eq!(parent(TAIL_BASE + 6), Some(TAIL_BASE + 5));
    }

    #[test]
    fn template_is_mirror_symmetric() {
        for q in 1..=3 {
            let t = make_template(&TemplateSpec::with_resolution(q)).unwrap();
            let m = mirror_sagittal(&t.mesh, &t.pairing).unwrap();
            for (a, b) in m.vertices.iter().zip(&t.mesh.vertices) {
                assert!((a - b).norm() < 1e-9);
            }
            for v in 0..t.vertex_count() {
                let p = t.labels.part_of_vertex[v];
                assert_eq!(t.labels.part_of_vertex[t.pairing[v]], mirror_part(p));
            }
        }
    }

    #[test]
    fn weights_are_normalized_and_sparse() {
        let t = make_template(&TemplateSpec::default()).unwrap();
        for row in t.weights.rows() {
            assert!(row.len() <= 4 && !row.is_empty());
            let s: f64 = row.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joints_sit_on_interfaces() {
        let t = make_template(&TemplateSpec::default()).unwrap();
        for (k, set) in t.joint_vertices.iter().enumerate() {
            assert!(!set.is_empty());
            if let Some(p) = t.tree.parent(k) {
                for v in set {
                    assert!(t.part_vertices[p].contains(v) && t.part_vertices[k].contains(v));
                }
            }
        }
    }

    #[test]
    fn topology_is_independent_of_recipe() {
        let a = make_template(&TemplateSpec::default()).unwrap();
        let mut spec = TemplateSpec::default();
        spec.recipe.leg_length *= 1.3;
        spec.recipe.head_scale = 1.2;
        spec.recipe.torso_girth = 1.4;
        let b = make_template(&spec).unwrap();
        assert_eq!(a.mesh.faces, b.mesh.faces);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.scan_keypoints, b.scan_keypoints);
    }

    #[test]
    fn resolution_sets_size() {
        let v2 = make_template(&TemplateSpec::with_resolution(2))
            .unwrap()
            .vertex_count();
        let v3 = make_template(&TemplateSpec::with_resolution(3))
            .unwrap()
            .vertex_count();
        assert!((1000..2000).contains(&v2), "{v2}");
        assert!((2000..4000).contains(&v3), "{v3}");
    }
}
