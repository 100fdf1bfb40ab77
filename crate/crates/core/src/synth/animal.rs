//! Random posed, noisy and remeshed animals with known ground truth.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::family::Family;
use super::pose::{sample_pose, PoseRanges};
use super::template::{make_template, Recipe, Template, TemplateSpec};
use crate::mesh::{lbs_pose, self_intersections, vertex_normals, Mesh, Vec3};
use crate::{Error, Result};

/// Largest allowed noise level, as a fraction of the bounding-box diagonal.
pub const MAX_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Family to draw from; `None` picks one uniformly.
    pub family: Option<Family>,
    /// Fixed proportions, overriding the family.
    pub recipe: Option<Recipe>,
    /// Relative spread of recipe dimensions around the family mean.
    pub recipe_spread: f64,
    pub pose: PoseRanges,
    /// Fixed pose, overriding the sampler.
    pub theta: Option<Vec<f64>>,
    /// Per-vertex noise RMS as a fraction of the bounding-box diagonal.
    pub noise: f64,
    /// Re-triangulate the scan so it shares no topology with the template.
    pub remesh: bool,
    /// Attempts before giving up on a self-intersection-free sample.
    pub max_attempts: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            family: None,
            recipe: None,
            recipe_spread: 0.08,
            pose: PoseRanges::default(),
            theta: None,
            noise: 0.01,
            remesh: false,
            max_attempts: 10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_NOISE).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!(
                "noise level {} outside [0, {MAX_NOISE}]",
                self.noise
            )));
        }
        if !(0.0..1.0).contains(&self.recipe_spread) {
            return Err(Error::InvalidArgument(format!(
                "recipe spread {} outside [0, 1)",
                self.recipe_spread
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument(
                "max_attempts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated animal and its ground truth.
#[derive(Debug, Clone)]
pub struct SynthAnimal {
    pub family: Option<Family>,
    pub recipe: Recipe,
    pub theta: Vec<f64>,
    /// Unposed shape with the template topology.
    pub neutral: Mesh,
    /// Posed shape with the template topology, before noise.
    pub posed: Mesh,
    /// Noisy, possibly remeshed surface.
    pub scan: Mesh,
    /// Scan keypoints on the noise-free posed surface.
    pub keypoints: Vec<(String, Vec3)>,
    pub attempts: usize,
}

/// Serializable ground truth of a [`SynthAnimal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimalTruth {
    pub family: Option<Family>,
    pub recipe: Recipe,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub noise: f64,
    pub remeshed: bool,
    pub template_resolution: usize,
}

/// Sample an animal with the topology and skinning falloff of `template`.
pub fn sample_animal(template: &Template, spec: &SynthSpec, seed: u64) -> Result<SynthAnimal> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=spec.max_attempts {
        let family = match (spec.recipe, spec.family) {
            (Some(_), f) => f,
            (None, Some(f)) => Some(f),
            (None, None) => Some(Family::ALL[rng.random_range(0..Family::ALL.len())]),
        };
        let recipe = match (spec.recipe, family) {
            (Some(r), _) => r,
            (None, Some(f)) => f.sample_recipe(&mut rng, spec.recipe_spread),
            (None, None) => unreachable!("a family is always chosen without a fixed recipe"),
        };
        let theta = match &spec.theta {
            Some(t) => t.clone(),
            None => sample_pose(&mut rng, &spec.pose),
        };
        let shaped = make_template(&TemplateSpec {
            recipe,
            ..template.spec
        })?;
        let posed = lbs_pose(
            &shaped.mesh,
            &shaped.tree,
            &shaped.weights,
            &theta,
            &Vec3::zeros(),
        )?;
        if !self_intersections(&posed).is_empty() {
            log::debug!("synthetic animal attempt {attempt} self-intersects, resampling");
            continue;
        }
        let keypoints = shaped
            .scan_keypoints
            .iter()
            .map(|(n, v)| (n.clone(), posed.vertices[*v]))
            .collect();
        let mut scan = if spec.remesh {
            remesh(&posed, &mut rng, posed.vertex_count() * 3 / 2)?
        } else {
            posed.clone()
        };
        if spec.noise > 0.0 {
            let sd = spec.noise * posed.bbox_diagonal() / 3f64.sqrt();
            let normal = Normal::new(0.0, sd).expect("positive deviation");
            for v in &mut scan.vertices {
                *v += Vec3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
            }
        }
        return Ok(SynthAnimal {
            family,
            recipe,
            theta,
            neutral: shaped.mesh,
            posed,
            scan,
            keypoints,
            attempts: attempt,
        });
    }
    Err(Error::Solver(format!(
        "no self-intersection-free animal after {} attempts (seed {seed})",
        spec.max_attempts
    )))
}

/// Midpoint subdivision, tangential jitter, then shortest-edge collapse
/// down to `target` vertices.
pub fn remesh(mesh: &Mesh, rng: &mut impl Rng, target: usize) -> Result<Mesh> {
    let fine = subdivide(mesh)?;
    let normals = vertex_normals(&fine)?;
    let neighbors = fine.neighbors();
    let mut vertices = fine.vertices.clone();
    for (i, v) in vertices.iter_mut().enumerate() {
        let nb = &neighbors[i];
        let len = nb
            .iter()
            .map(|&j| (fine.vertices[j] - fine.vertices[i]).norm())
            .sum::<f64>()
            / nb.len().max(1) as f64;
        let d = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = normals[i];
        *v += (d - n * n.dot(&d)) * (0.2 * len);
    }
    decimate(&Mesh::new(vertices, fine.faces)?, target)
}

fn subdivide(mesh: &Mesh) -> Result<Mesh> {
    let mut vertices = mesh.vertices.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            vertices.push((vertices[a] + vertices[b]) * 0.5);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(4 * mesh.faces.len());
    for &[a, b, c] in &mesh.faces {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    Mesh::new(vertices, faces)
}

fn face_normal(v: &[Vec3], f: &[usize; 3]) -> Vec3 {
    (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]))
}

/// Collapse interior edges, shortest first, into their midpoints while the
/// link condition holds and no triangle flips.
fn decimate(mesh: &Mesh, target: usize) -> Result<Mesh> {
    let mut v = mesh.vertices.clone();
    let mut faces: Vec<Option<[usize; 3]>> = mesh.faces.iter().copied().map(Some).collect();
    let mut incident: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); v.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &x in f {
            incident[x].insert(fi);
        }
    }
    let mut alive = v.len();
    let key = |d: f64| d.to_bits();
    let mut heap = BinaryHeap::new();
    for (a, b) in mesh.edges() {
        heap.push(Reverse((key((v[a] - v[b]).norm()), a, b)));
    }
    let ring =
        |x: usize, incident: &[BTreeSet<usize>], faces: &[Option<[usize; 3]>]| -> BTreeSet<usize> {
            incident[x]
                .iter()
                .flat_map(|&f| faces[f].expect("incident faces are alive"))
                .filter(|&y| y != x)
                .collect()
        };
    while alive > target {
        let Some(Reverse((len, a, b))) = heap.pop() else {
            break;
        };
        if incident[a].is_empty() || incident[b].is_empty() || len != key((v[a] - v[b]).norm()) {
            continue;
        }
        let shared: Vec<usize> = incident[a].intersection(&incident[b]).copied().collect();
        if shared.len() != 2 {
            continue;
        }
        let ra = ring(a, &incident, &faces);
        let rb = ring(b, &incident, &faces);
        if !ra.contains(&b) || ra.intersection(&rb).count() != 2 {
            continue;
        }
        let p = (v[a] + v[b]) * 0.5;
        let flips = incident[a].union(&incident[b]).any(|&fi| {
            if shared.contains(&fi) {
                return false;
            }
            let f = faces[fi].expect("incident faces are alive");
            let before = face_normal(&v, &f);
            let mut moved = v.clone();
            moved[a] = p;
            moved[b] = p;
            let after = face_normal(&moved, &f);
            before.dot(&after) <= 0.2 * before.norm() * after.norm()
        });
        if flips {
            continue;
        }
        v[a] = p;
        for &fi in &shared {
            for &x in &faces[fi].expect("shared faces are alive") {
                incident[x].remove(&fi);
            }
            faces[fi] = None;
        }
        let moved: Vec<usize> = incident[b].iter().copied().collect();
        for fi in moved {
            let f = faces[fi].as_mut().expect("incident faces are alive");
            for x in f.iter_mut() {
                if *x == b {
                    *x = a;
                }
            }
            incident[a].insert(fi);
        }
        incident[b].clear();
        alive -= 1;
        for y in ring(a, &incident, &faces) {
            heap.push(Reverse((key((v[a] - v[y]).norm()), a.min(y), a.max(y))));
        }
    }
    let mut remap = vec![usize::MAX; v.len()];
    let mut vertices = Vec::with_capacity(alive);
    for (i, p) in v.iter().enumerate() {
        if !incident[i].is_empty() {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    let faces = faces
        .into_iter()
        .flatten()
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    Mesh::new(vertices, faces)
}
