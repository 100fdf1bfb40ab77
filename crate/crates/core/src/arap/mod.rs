//! As-rigid-as-possible refinement of a registration towards a scan.
//!
//! The refinement alternates closed-form per-vertex rotations with a vertex
//! solve. Robust data terms and the L1 coupling term are replaced by quadratic
//! majorizers at the current iterate, so each vertex solve is three sparse
//! symmetric positive-definite systems (one per coordinate).

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::linalg::{conjugate_gradient, nearest_rotation};
use crate::mesh::spatial::{mean_distance_to_surface, PointIndex};
use crate::mesh::{bounding_box, write_obj, Mesh, Vec3};
use crate::optim::GemanMcClure;
use crate::{Error, Result};

/// Reference shape for the ARAP term: 1-rings and rest positions.
#[derive(Debug, Clone)]
pub struct ArapReference {
    pub vertices: Vec<Vec3>,
    pub neighbors: Vec<Vec<usize>>,
}

impl ArapReference {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let neighbors = mesh.neighbors();
        if let Some(i) = neighbors.iter().position(|n| n.is_empty()) {
            return Err(Error::IsolatedVertex(i));
        }
        Ok(Self {
            vertices: mesh.vertices.clone(),
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// `Σ_i Σ_{j ∈ N(i)} |(v_i - v_j) - R_i (r_i - r_j)|²` and its gradient in `v`.
pub fn arap_energy(
    v: &[Vec3],
    rotations: &[Matrix3<f64>],
    reference: &ArapReference,
) -> Result<(f64, Vec<Vec3>)> {
    if v.len() != reference.len() || rotations.len() != reference.len() {
        return Err(Error::Dimension {
            what: "ARAP vertices or rotations",
            expected: reference.len(),
            got: if v.len() != reference.len() {
                v.len()
            } else {
                rotations.len()
            },
        });
    }
    let mut value = 0.0;
    let mut grad = vec![Vec3::zeros(); v.len()];
    for (i, ring) in reference.neighbors.iter().enumerate() {
        for &j in ring {
            let r = (v[i] - v[j]) - rotations[i] * (reference.vertices[i] - reference.vertices[j]);
            value += r.norm_squared();
            grad[i] += 2.0 * r;
            grad[j] -= 2.0 * r;
        }
    }
    Ok((value, grad))
}

/// Best rotation of every cell for the current vertices.
pub fn fit_rotations(v: &[Vec3], reference: &ArapReference) -> Vec<Matrix3<f64>> {
    reference
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            let mut m = Matrix3::zeros();
            for &j in ring {
                m += (v[i] - v[j]) * (reference.vertices[i] - reference.vertices[j]).transpose();
            }
            nearest_rotation(&m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArapWeights {
    pub arap: f64,
    pub keypoint: f64,
    pub model_to_scan: f64,
    pub scan_to_model: f64,
    /// Robust scale as a fraction of the scan bounding-box diagonal.
    pub sigma_fraction: f64,
}

impl Default for ArapWeights {
    fn default() -> Self {
        Self {
            arap: 1.0,
            keypoint: 50.0,
            model_to_scan: 1.0,
            scan_to_model: 1.0,
            sigma_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArapConfig {
    pub weights: ArapWeights,
    pub max_iterations: usize,
    /// Stop once the relative energy decrease of one alternation is below this.
    pub tolerance: f64,
    /// Nearest neighbours are recomputed every this many alternations.
    pub refresh_every: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for ArapConfig {
    fn default() -> Self {
        Self {
            weights: ArapWeights::default(),
            max_iterations: 50,
            tolerance: 1e-5,
            refresh_every: 5,
            cg_tolerance: 1e-10,
            cg_max_iterations: 2000,
        }
    }
}

/// L1 attachment of every vertex to a model fit.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub target: Vec<Vec3>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ArapProblem<'a> {
    /// Starting vertices; also the ARAP reference shape.
    pub initial: &'a Mesh,
    pub scan: &'a Mesh,
    /// Template vertex index and target position of each scan keypoint.
    pub keypoints: Vec<(usize, Vec3)>,
    pub coupling: Option<Coupling>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Arap,
    Coupled,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: Mesh,
    pub stage: Stage,
    /// Total energy after each alternation.
    pub energy_trace: Vec<f64>,
    /// True when the result was rejected in favour of the input.
    pub fell_back: bool,
}

/// Smallest coupling residual used in the L1 majorizer.
const L1_EPSILON: f64 = 1e-9;

struct Data<'a> {
    scan: &'a [Vec3],
    robust: GemanMcClure,
    m2s: Vec<usize>,
    s2m: Vec<usize>,
}

impl<'a> Data<'a> {
    fn refresh(&mut self, v: &[Vec3]) {
        let scan_index = PointIndex::new(self.scan);
        self.m2s = v.iter().map(|p| scan_index.nearest(p).0).collect();
        let model_index = PointIndex::new(v);
        self.s2m = self.scan.iter().map(|p| model_index.nearest(p).0).collect();
    }
}

fn total_energy(
    v: &[Vec3],
    rotations: &[Matrix3<f64>],
    reference: &ArapReference,
    problem: &ArapProblem,
    data: &Data,
    w: &ArapWeights,
) -> Result<f64> {
    let mut e = w.arap * arap_energy(v, rotations, reference)?.0;
    for (i, y) in &problem.keypoints {
        e += w.keypoint * (v[*i] - y).norm_squared();
    }
    if w.model_to_scan > 0.0 {
        for (p, &s) in v.iter().zip(&data.m2s) {
            e += w.model_to_scan * data.robust.value((p - data.scan[s]).norm_squared());
        }
    }
    if w.scan_to_model > 0.0 {
        for (y, &i) in data.scan.iter().zip(&data.s2m) {
            e += w.scan_to_model * data.robust.value((v[i] - y).norm_squared());
        }
    }
    if let Some(c) = &problem.coupling {
        for (p, t) in v.iter().zip(&c.target) {
            e += c.weight * (p - t).abs().sum();
        }
    }
    Ok(e)
}

/// Refine the initial vertices towards the scan.
pub fn refine(problem: &ArapProblem, config: &ArapConfig) -> Result<Refinement> {
    let initial = &problem.initial.vertices;
    let n = initial.len();
    if initial
        .iter()
        .chain(&problem.scan.vertices)
        .any(|p| !p.iter().all(|c| c.is_finite()))
    {
        return Err(Error::NonFinite {
            iteration: 0,
            detail: "input vertices".into(),
        });
    }
    if problem.scan.vertices.is_empty() {
        return Err(Error::Empty("scan"));
    }
    if let Some(c) = &problem.coupling {
        if c.target.len() != n {
            return Err(Error::Dimension {
                what: "coupling target",
                expected: n,
                got: c.target.len(),
            });
        }
    }
    if let Some((i, _)) = problem.keypoints.iter().find(|(i, _)| *i >= n) {
        return Err(Error::InvalidArgument(format!(
            "keypoint vertex {i} out of range"
        )));
    }
    let w = config.weights;
    let reference = ArapReference::new(problem.initial)?;
    let (lo, hi) = bounding_box(&problem.scan.vertices);
    let mut data = Data {
        scan: &problem.scan.vertices,
        robust: GemanMcClure::new(w.sigma_fraction * (hi - lo).norm())?,
        m2s: Vec::new(),
        s2m: Vec::new(),
    };

    let mut v = initial.clone();
    let mut rotations = fit_rotations(&v, &reference);
    data.refresh(&v);
    let mut energy = total_energy(&v, &rotations, &reference, problem, &data, &w)?;
    let mut trace = vec![energy];
    let mut diag = vec![0.0; n];
    let mut target = vec![Vec3::zeros(); n];
    let mut coord = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for it in 0..config.max_iterations {
        if it > 0 && it % config.refresh_every.max(1) == 0 {
            data.refresh(&v);
            energy = total_energy(&v, &rotations, &reference, problem, &data, &w)?;
        }
        // Quadratic weights and weighted targets of the majorizer.
        diag.iter_mut().for_each(|d| *d = 0.0);
        target.iter_mut().for_each(|t| *t = Vec3::zeros());
        let mut coupling_diag: Vec<Vec3> = Vec::new();
        for (i, y) in &problem.keypoints {
            diag[*i] += w.keypoint;
            target[*i] += y * w.keypoint;
        }
        if w.model_to_scan > 0.0 {
            for (i, &s) in data.m2s.iter().enumerate() {
                let y = data.scan[s];
                let (_, d) = data.robust.eval((v[i] - y).norm_squared());
                diag[i] += w.model_to_scan * d;
                target[i] += y * (w.model_to_scan * d);
            }
        }
        if w.scan_to_model > 0.0 {
            for (y, &i) in data.scan.iter().zip(&data.s2m) {
                let (_, d) = data.robust.eval((v[i] - y).norm_squared());
                diag[i] += w.scan_to_model * d;
                target[i] += y * (w.scan_to_model * d);
            }
        }
        if let Some(c) = &problem.coupling {
            coupling_diag = v
                .iter()
                .zip(&c.target)
                .map(|(p, t)| (p - t).map(|r| c.weight / (2.0 * r.abs().max(L1_EPSILON))))
                .collect();
        }
        // ARAP right-hand side: Σ_j (R_i + R_j)(r_i - r_j) / 2, scaled by the weight.
        let mut arap_rhs = vec![Vec3::zeros(); n];
        for (i, ring) in reference.neighbors.iter().enumerate() {
            for &j in ring {
                let e =
                    (rotations[i] + rotations[j]) * (reference.vertices[i] - reference.vertices[j]);
                arap_rhs[i] += e * w.arap;
            }
        }
        let degree: Vec<f64> = reference.neighbors.iter().map(|r| r.len() as f64).collect();
        let mut next = v.clone();
        for c in 0..3 {
            let d_c: Vec<f64> = (0..n)
                .map(|i| {
                    let cd = coupling_diag.get(i).map_or(0.0, |d| d[c]);
                    4.0 * w.arap * degree[i] + 2.0 * (diag[i] + cd) + 1e-12
                })
                .collect();
            for i in 0..n {
                let cd = coupling_diag.get(i).map_or(0.0, |d| d[c]);
                let ct = problem.coupling.as_ref().map_or(0.0, |cp| cp.target[i][c]);
                rhs[i] = 2.0 * arap_rhs[i][c] + 2.0 * target[i][c] + 2.0 * cd * ct;
                coord[i] = v[i][c];
            }
            let apply = |x: &[f64], out: &mut [f64]| {
                for i in 0..n {
                    let mut s = 0.0;
                    for &j in &reference.neighbors[i] {
                        s += x[j];
                    }
                    out[i] = 4.0 * w.arap * (degree[i] * x[i] - s)
                        + (d_c[i] - 4.0 * w.arap * degree[i]) * x[i];
                }
            };
            conjugate_gradient(
                apply,
                &d_c,
                &rhs,
                &mut coord,
                config.cg_tolerance,
                config.cg_max_iterations,
            );
            for i in 0..n {
                next[i][c] = coord[i];
            }
        }
        let next_rot = fit_rotations(&next, &reference);
        let next_energy = total_energy(&next, &next_rot, &reference, problem, &data, &w)?;
        if !next_energy.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                detail: "refinement energy".into(),
            });
        }
        if next_energy > energy {
            // Numerical noise from an inexact solve; keep the better iterate.
            break;
        }
        let decrease = (energy - next_energy) / energy.max(f64::MIN_POSITIVE);
        v = next;
        rotations = next_rot;
        energy = next_energy;
        trace.push(energy);
        if decrease < config.tolerance {
            break;
        }
    }

    let stage = if problem.coupling.is_some() {
        Stage::Coupled
    } else {
        Stage::Arap
    };
    let mut mesh = problem.initial.with_vertices(v);
    let mut fell_back = false;
    if stage == Stage::Arap {
        let before = mean_distance_to_surface(&problem.scan.vertices, problem.initial);
        let after = mean_distance_to_surface(&problem.scan.vertices, &mesh);
        if after > before {
            log::warn!("refinement increased scan-to-mesh distance ({before:.4e} -> {after:.4e}); keeping input");
            mesh = problem.initial.clone();
            fell_back = true;
        }
    }
    Ok(Refinement {
        mesh,
        stage,
        energy_trace: trace,
        fell_back,
    })
}

/// JSON sidecar written next to every refined registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub source_scan: String,
    pub energy_trace: Vec<f64>,
}

/// Write `mesh` as OBJ and its provenance as `<stem>.json` beside it.
pub fn write_registration(obj_path: &Path, mesh: &Mesh, provenance: &Provenance) -> Result<()> {
    write_obj(obj_path, mesh)?;
    let sidecar = obj_path.with_extension("json");
    let text = serde_json::to_string_pretty(provenance)?;
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}
