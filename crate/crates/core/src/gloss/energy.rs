//! Registration energy of the stitched part model and its gradient.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::basis::{shape_displacement, shape_displacement_adjoint, SHAPE_DIM, SHAPE_VARIANCE};
use super::params::{ParamLayout, LOCATION, POSE, ROTATION, SHAPE};
use super::template::PartVertex;
use super::GlossModel;
use crate::mesh::rotation::{
    contract, matrix_to_rodrigues, matrix_to_rodrigues_backward, rodrigues_with_jacobian,
};
use crate::mesh::spatial::PointIndex;
use crate::mesh::{accumulate_face_normals, Vec3};
use crate::optim::{GemanMcClure, Objective};
use crate::{Error, Result};

/// Term weights; `sigma_fraction` sets the robust scale relative to the scan
/// bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlossWeights {
    pub smooth: f64,
    pub shape: f64,
    pub deform: f64,
    pub stitch: f64,
    pub keypoint: f64,
    pub model_to_scan: f64,
    pub scan_to_model: f64,
    pub curvature: f64,
    pub tail: f64,
    pub sigma_fraction: f64,
}

impl Default for GlossWeights {
    fn default() -> Self {
        Self {
            smooth: 10.0,
            shape: 1.0,
            deform: 1.0,
            stitch: 100.0,
            keypoint: 50.0,
            model_to_scan: 1.0,
            scan_to_model: 1.0,
            curvature: 5.0,
            tail: 1.0,
            sigma_fraction: 0.1,
        }
    }
}

/// Weighted value of each term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub smooth: f64,
    pub shape: f64,
    pub deform: f64,
    pub stitch: f64,
    pub keypoint: f64,
    pub model_to_scan: f64,
    pub scan_to_model: f64,
    pub curvature: f64,
    pub tail: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.smooth
            + self.shape
            + self.deform
            + self.stitch
            + self.keypoint
            + self.model_to_scan
            + self.scan_to_model
            + self.curvature
            + self.tail
    }
}

/// Frozen nearest-neighbour pairs in both directions.
#[derive(Debug, Clone, Default)]
pub struct Correspondences {
    /// Nearest scan vertex of every part vertex.
    pub model_to_scan: Vec<Vec<usize>>,
    /// Nearest part vertex of every scan vertex.
    pub scan_to_model: Vec<PartVertex>,
}

struct PartState {
    rot: Matrix3<f64>,
    jac: [Matrix3<f64>; 3],
    local: Vec<Vec3>,
    global: Vec<Vec3>,
    /// Unnormalized and unit local normals, empty when unused.
    raw_normals: Vec<Vec3>,
    normals: Vec<Vec3>,
}

/// Per-variable scales that bring every parameter to units of length: a unit
/// change moves part vertices by roughly one unit.
pub fn variable_scales(model: &GlossModel) -> Vec<f64> {
    let layout = &model.layout;
    let mut scale = vec![1.0; layout.len()];
    for (i, part) in model.template.parts.iter().enumerate() {
        let radius = (part.rest.iter().map(|t| t.norm_squared()).sum::<f64>()
            / part.rest.len() as f64)
            .sqrt()
            .max(1e-6);
        let o = layout.offset(i);
        for c in 0..3 {
            scale[o + ROTATION + c] = 1.0 / radius;
        }
        for c in 0..4 {
            scale[o + SHAPE + c] = 1.0 / radius;
        }
        for c in 4..SHAPE_DIM {
            scale[o + SHAPE + c] = 1.0 / (radius * radius);
        }
    }
    scale
}

/// The energy for one scan with frozen correspondences.
pub struct GlossProblem<'a> {
    model: &'a GlossModel,
    scan: &'a [Vec3],
    keypoints: Vec<(PartVertex, Vec3)>,
    weights: GlossWeights,
    robust: GemanMcClure,
    corr: Correspondences,
}

impl<'a> GlossProblem<'a> {
    pub fn new(
        model: &'a GlossModel,
        scan: &'a [Vec3],
        keypoints: &[(String, Vec3)],
        weights: GlossWeights,
    ) -> Result<Self> {
        if scan.is_empty() {
            return Err(Error::Empty("scan"));
        }
        let resolved = keypoints
            .iter()
            .map(|(name, p)| {
                model
                    .template
                    .keypoint(name)
                    .map(|pv| (pv, *p))
                    .ok_or_else(|| Error::MissingKeypoint(name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = crate::mesh::bounding_box(scan);
        let sigma = weights.sigma_fraction * (hi - lo).norm();
        Ok(Self {
            model,
            scan,
            keypoints: resolved,
            weights,
            robust: GemanMcClure::new(sigma)?,
            corr: Correspondences::default(),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.model.layout
    }

    pub fn correspondences(&self) -> &Correspondences {
        &self.corr
    }

    /// Recompute nearest neighbours for the model posed by `x`.
    pub fn refresh(&mut self, x: &[f64]) {
        let states = self.states(x, false);
        let scan_index = PointIndex::new(self.scan);
        self.corr.model_to_scan = states
            .iter()
            .map(|s| s.global.iter().map(|p| scan_index.nearest(p).0).collect())
            .collect();
        let mut flat = Vec::new();
        let mut ids = Vec::new();
        for (part, s) in states.iter().enumerate() {
            for (local, p) in s.global.iter().enumerate() {
                flat.push(*p);
                ids.push(PartVertex { part, local });
            }
        }
        let model_index = PointIndex::new(&flat);
        self.corr.scan_to_model = self
            .scan
            .iter()
            .map(|p| ids[model_index.nearest(p).0])
            .collect();
    }

    fn states(&self, x: &[f64], with_normals: bool) -> Vec<PartState> {
        let layout = &self.model.layout;
        self.model
            .template
            .parts
            .iter()
            .enumerate()
            .map(|(i, part)| {
                let o = layout.offset(i);
                let l = Vec3::from_column_slice(&x[o + LOCATION..o + ROTATION]);
                let r = Vec3::from_column_slice(&x[o + ROTATION..o + SHAPE]);
                let s = &x[o + SHAPE..o + POSE];
                let d = &x[o + POSE..o + POSE + layout.pose_dim(i)];
                let (rot, jac) = rodrigues_with_jacobian(&r);
                let basis = &self.model.pose_bases[i];
                let deform = if d.is_empty() {
                    None
                } else {
                    Some(&basis.basis * nalgebra::DVector::from_column_slice(d))
                };
                let local: Vec<Vec3> = part
                    .rest
                    .iter()
                    .enumerate()
                    .map(|(a, t)| {
                        let mut p = t + shape_displacement(t, s);
                        for c in 0..3 {
                            p[c] += basis.mean[3 * a + c];
                            if let Some(dv) = &deform {
                                p[c] += dv[3 * a + c];
                            }
                        }
                        p
                    })
                    .collect();
                let global = local.iter().map(|p| rot * p + l).collect();
                let (raw_normals, normals) = if with_normals {
                    let raw = accumulate_face_normals(&local, &part.faces);
                    let unit = raw.iter().map(|n| n / n.norm()).collect();
                    (raw, unit)
                } else {
                    (Vec::new(), Vec::new())
                };
                PartState {
                    rot,
                    jac,
                    local,
                    global,
                    raw_normals,
                    normals,
                }
            })
            .collect()
    }

    /// Value, optional gradient and per-term breakdown.
    pub fn evaluate_terms(&self, x: &[f64], grad: Option<&mut [f64]>) -> EnergyTerms {
        let w = &self.weights;
        let model = self.model;
        let layout = &model.layout;
        let n_parts = model.template.part_count();
        let use_curv = w.curvature > 0.0 && !model.template.stitches.is_empty();
        let states = self.states(x, use_curv);
        let mut t = EnergyTerms::default();

        let mut g_pos: Vec<Vec<Vec3>> = states
            .iter()
            .map(|s| vec![Vec3::zeros(); s.local.len()])
            .collect();
        let mut g_nrm: Vec<Vec<Vec3>> = if use_curv {
            states
                .iter()
                .map(|s| vec![Vec3::zeros(); s.local.len()])
                .collect()
        } else {
            Vec::new()
        };
        let mut g_rot = vec![Matrix3::<f64>::zeros(); n_parts];
        let mut g_x = vec![0.0; layout.len()];
        let shape_of = |i: usize| &x[layout.offset(i) + SHAPE..layout.offset(i) + POSE];

        // Shape smoothness within symmetry groups.
        for group in &model.template.symmetry_groups {
            for (gi, &p) in group.iter().enumerate() {
                for &q in &group[gi + 1..] {
                    let (sp, sq) = (shape_of(p), shape_of(q));
                    for c in 0..SHAPE_DIM {
                        let diff = sp[c] - sq[c];
                        t.smooth += w.smooth * diff * diff;
                        g_x[layout.offset(p) + SHAPE + c] += 2.0 * w.smooth * diff;
                        g_x[layout.offset(q) + SHAPE + c] -= 2.0 * w.smooth * diff;
                    }
                }
            }
        }
        for i in 0..n_parts {
            let o = layout.offset(i);
            for c in 0..SHAPE_DIM {
                let s = x[o + SHAPE + c];
                t.shape += w.shape * s * s / SHAPE_VARIANCE[c];
                g_x[o + SHAPE + c] += 2.0 * w.shape * s / SHAPE_VARIANCE[c];
            }
            for k in 0..layout.pose_dim(i) {
                let d = x[o + POSE + k];
                t.deform += w.deform * d * d;
                g_x[o + POSE + k] += 2.0 * w.deform * d;
            }
        }

        for st in &model.template.stitches {
            let diff = states[st.a.part].global[st.a.local] - states[st.b.part].global[st.b.local];
            t.stitch += w.stitch * diff.norm_squared();
            g_pos[st.a.part][st.a.local] += diff * (2.0 * w.stitch);
            g_pos[st.b.part][st.b.local] -= diff * (2.0 * w.stitch);
            if use_curv {
                let na = states[st.a.part].rot * states[st.a.part].normals[st.a.local];
                let nb = states[st.b.part].rot * states[st.b.part].normals[st.b.local];
                let dn = na - nb;
                let excess = dn.norm_squared() - st.rest_normal_gap;
                t.curvature += w.curvature * excess.abs();
                let sign = if excess > 0.0 {
                    1.0
                } else if excess < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g_nrm[st.a.part][st.a.local] += dn * (2.0 * w.curvature * sign);
                g_nrm[st.b.part][st.b.local] -= dn * (2.0 * w.curvature * sign);
            }
        }

        for (pv, target) in &self.keypoints {
            let diff = states[pv.part].global[pv.local] - target;
            t.keypoint += w.keypoint * diff.norm_squared();
            g_pos[pv.part][pv.local] += diff * (2.0 * w.keypoint);
        }

        if w.model_to_scan > 0.0 && !self.corr.model_to_scan.is_empty() {
            for (i, s) in states.iter().enumerate() {
                for (a, p) in s.global.iter().enumerate() {
                    let diff = p - self.scan[self.corr.model_to_scan[i][a]];
                    let (rho, drho) = self.robust.eval(diff.norm_squared());
                    t.model_to_scan += w.model_to_scan * rho;
                    g_pos[i][a] += diff * (2.0 * w.model_to_scan * drho);
                }
            }
        }
        if w.scan_to_model > 0.0 && !self.corr.scan_to_model.is_empty() {
            for (y, pv) in self.scan.iter().zip(&self.corr.scan_to_model) {
                let diff = states[pv.part].global[pv.local] - y;
                let (rho, drho) = self.robust.eval(diff.norm_squared());
                t.scan_to_model += w.scan_to_model * rho;
                g_pos[pv.part][pv.local] += diff * (2.0 * w.scan_to_model * drho);
            }
        }

        if w.tail > 0.0 {
            for &k in &model.template.tail_parts {
                let Some(p) = model.template.parents[k] else {
                    continue;
                };
                let rel = states[p].rot.transpose() * states[k].rot;
                let rho = matrix_to_rodrigues(&rel);
                let var = model.tail_variance[k];
                let mut g_rho = Vec3::zeros();
                for c in 0..3 {
                    t.tail += w.tail * rho[c] * rho[c] / var[c];
                    g_rho[c] = 2.0 * w.tail * rho[c] / var[c];
                }
                let g_rel = matrix_to_rodrigues_backward(&rel, &g_rho);
                g_rot[k] += states[p].rot * g_rel;
                g_rot[p] += states[k].rot * g_rel.transpose();
            }
        }

        if let Some(grad) = grad {
            for i in 0..n_parts {
                let s = &states[i];
                let o = layout.offset(i);
                let part = &model.template.parts[i];
                let mut g_local: Vec<Vec3> = Vec::with_capacity(s.local.len());
                let mut dl = Vec3::zeros();
                let mut dr = g_rot[i];
                for (a, g) in g_pos[i].iter().enumerate() {
                    dl += g;
                    dr += g * s.local[a].transpose();
                    g_local.push(s.rot.transpose() * g);
                }
                if use_curv {
                    let mut g_raw = vec![Vec3::zeros(); s.local.len()];
                    let mut any = false;
                    for (a, gn) in g_nrm[i].iter().enumerate() {
                        if gn.norm_squared() == 0.0 {
                            continue;
                        }
                        any = true;
                        let n = s.normals[a];
                        dr += gn * n.transpose();
                        let gl = s.rot.transpose() * gn;
                        g_raw[a] = (gl - n * n.dot(&gl)) / s.raw_normals[a].norm();
                    }
                    if any {
                        for f in &part.faces {
                            let wsum = g_raw[f[0]] + g_raw[f[1]] + g_raw[f[2]];
                            if wsum.norm_squared() == 0.0 {
                                continue;
                            }
                            let (pa, pb, pc) = (s.local[f[0]], s.local[f[1]], s.local[f[2]]);
                            g_local[f[0]] += (pb - pc).cross(&wsum);
                            g_local[f[1]] += (pc - pa).cross(&wsum);
                            g_local[f[2]] += (pa - pb).cross(&wsum);
                        }
                    }
                }
                for c in 0..3 {
                    g_x[o + LOCATION + c] += dl[c];
                }
                let drv = contract(&s.jac, &dr);
                for c in 0..3 {
                    g_x[o + ROTATION + c] += drv[c];
                }
                let mut ds = [0.0; SHAPE_DIM];
                for (tv, g) in part.rest.iter().zip(&g_local) {
                    shape_displacement_adjoint(tv, g, &mut ds);
                }
                for c in 0..SHAPE_DIM {
                    g_x[o + SHAPE + c] += ds[c];
                }
                let basis = &model.pose_bases[i].basis;
                for k in 0..layout.pose_dim(i) {
                    let col = basis.column(k);
                    let mut acc = 0.0;
                    for (a, g) in g_local.iter().enumerate() {
                        acc += col[3 * a] * g.x + col[3 * a + 1] * g.y + col[3 * a + 2] * g.z;
                    }
                    g_x[o + POSE + k] += acc;
                }
            }
            grad.copy_from_slice(&g_x);
        }
        t
    }
}

impl Objective for GlossProblem<'_> {
    fn dimension(&self) -> usize {
        self.model.layout.len()
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate_terms(x, Some(grad)).total()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate_terms(x, None).total()
    }
}
