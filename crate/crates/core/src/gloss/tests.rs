use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::rodrigues_to_matrix;
use crate::mesh::skinning::forward_kinematics;
use crate::optim::check_gradient;
use crate::synth::{make_template, TemplateSpec};

fn small() -> (Template, GlossModel) {
    let t = make_template(&TemplateSpec::with_resolution(1)).unwrap();
    let m = GlossModel::build(&t, &PoseBasisConfig::default()).unwrap();
    (t, m)
}

fn template_keypoints(t: &Template, vertices: &[Vec3]) -> Vec<(String, Vec3)> {
    t.scan_keypoints
        .iter()
        .map(|(n, v)| (n.clone(), vertices[*v]))
        .collect()
}

#[test]
fn neutral_params_reproduce_template() {
    let (t, m) = small();
    let merged = m.merged_vertices(&m.neutral_params());
    for (a, b) in merged.iter().zip(&t.mesh.vertices) {
        assert!((a - b).norm() < 1e-12);
    }
    assert!(m.pose_bases.iter().all(|b| b.dim() <= 5));
    assert!(m.pose_bases.iter().any(|b| b.dim() > 0));
}

#[test]
fn gradient_matches_finite_differences() {
    let (t, m) = small();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scan: Vec<Vec3> = t
        .mesh
        .vertices
        .iter()
        .map(|v| {
            v + Vec3::new(
                rng.random_range(-0.02..0.02),
                0.01,
                rng.random_range(-0.02..0.02),
            )
        })
        .collect();
    let kps = template_keypoints(&t, &scan);
    let base = m.layout.flatten(&m.neutral_params()).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = base
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let mut problem = GlossProblem::new(&m, &scan, &kps, GlossWeights::default()).unwrap();
        problem.refresh(&x);
        let report = check_gradient(&problem, &x, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}

#[test]
fn self_fit_needs_no_deformation() {
    let (t, m) = small();
    let kps = template_keypoints(&t, &t.mesh.vertices);
    let fit = fit_gloss(&m, &t.mesh, &kps, &GlossFitConfig::default()).unwrap();
    for p in &fit.params.parts {
        assert!(p.rodrigues.norm() < 1e-3);
        let s: f64 = p.shape.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d: f64 = p.pose_deform.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(s < 1e-3 && d < 1e-3, "shape {s} deform {d}");
    }
}

#[test]
fn recovers_rotated_template() {
    let (t, m) = small();
    let rot = rodrigues_to_matrix(&Vec3::new(0.0, 0.0, 30f64.to_radians()));
    let scan = t
        .mesh
        .with_vertices(t.mesh.vertices.iter().map(|v| rot * v).collect());
    let kps = template_keypoints(&t, &scan.vertices);
    let fit = fit_gloss(&m, &scan, &kps, &GlossFitConfig::default()).unwrap();
    let n = scan.vertex_count() as f64;
    let rmse = (fit
        .mesh
        .vertices
        .iter()
        .zip(&scan.vertices)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    assert!(rmse < 0.01 * scan.bbox_diagonal(), "rmse {rmse}");
}

#[test]
fn merge_averages_interface_copies() {
    let (_, m) = small();
    let mut params = m.neutral_params();
    params.parts[0].location += Vec3::new(0.1, 0.0, 0.0);
    let parts = m.part_vertices(&params);
    let mesh = merge_parts(&m, &params).unwrap();
    let shared = m
        .template
        .copies
        .iter()
        .position(|c| c.len() == 2 && c.iter().any(|pv| pv.part == 0))
        .unwrap();
    let c = &m.template.copies[shared];
    let mid = (parts[c[0].part][c[0].local] + parts[c[1].part][c[1].local]) / 2.0;
    assert!((mesh.vertices[shared] - mid).norm() < 1e-12);
}

#[test]
fn rigid_parts_convert_to_articulated_pose() {
    let (t, m) = small();
    let joints = t.joints_for(&t.mesh.vertices);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta: Vec<f64> = (0..3 * t.part_count())
        .map(|_| rng.random_range(-0.4..0.4))
        .collect();
    let fk = forward_kinematics(&t.tree, &joints, &theta);
    let mut params = m.neutral_params();
    for (k, p) in params.parts.iter_mut().enumerate() {
        let c = m.template.parts[k].centroid;
        p.rodrigues = crate::mesh::rotation::matrix_to_rodrigues(&fk.rot[k]);
        p.location = fk.rot[k] * (c - joints[k]) + fk.trans[k];
    }
    let (theta2, gamma) = params_to_pose(&m, &params, &joints);
    for (a, b) in theta.iter().zip(&theta2) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(gamma.norm() < 1e-12);
}

#[test]
fn energy_requires_known_keypoints() {
    let (t, m) = small();
    let kps = vec![("no_such_point".to_string(), Vec3::zeros())];
    assert!(gloss_energy(
        &m,
        &m.neutral_params(),
        &t.mesh.vertices,
        &kps,
        &GlossWeights::default()
    )
    .is_err());
}

#[test]
fn stitches_follow_the_kinematic_tree() {
    let (_, m) = small();
    for st in &m.template.stitches {
        let (a, b) = (st.a.part, st.b.part);
        assert!(
            m.template.parents[a] == Some(b) || m.template.parents[b] == Some(a),
            "{a} {b}"
        );
    }
}

#[test]
fn detached_part_stitch_energy_closed_form() {
    let (t, m) = small();
    let w = GlossWeights {
        curvature: 0.0,
        ..Default::default()
    };
    let kps = template_keypoints(&t, &t.mesh.vertices);
    let mut params = m.neutral_params();
    let x0 = m.layout.flatten(&params).unwrap();
    let mut problem = GlossProblem::new(&m, &t.mesh.vertices, &kps, w).unwrap();
    problem.refresh(&x0);
    let base = problem.evaluate_terms(&x0, None);
    assert!(
        base.stitch < 1e-20
            && base.model_to_scan < 1e-20
            && base.scan_to_model < 1e-20
            && base.keypoint < 1e-20
    );
    let part = 15;
    let delta = 0.01;
    params.parts[part].location.x += delta;
    let x = m.layout.flatten(&params).unwrap();
    let count = m
        .template
        .stitches
        .iter()
        .filter(|s| s.a.part == part || s.b.part == part)
        .count();
    let e = problem.evaluate_terms(&x, None).stitch;
    assert!((e - w.stitch * count as f64 * delta * delta).abs() < 1e-12);
}

#[test]
fn fit_is_rigidly_equivariant() {
    let (t, m) = small();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scan = t.mesh.with_vertices(
        t.mesh
            .vertices
            .iter()
            .map(|v| v * 1.05 + Vec3::new(0.0, rng.random_range(-0.01..0.01), 0.0))
            .collect(),
    );
    let kps = template_keypoints(&t, &scan.vertices);
    let rot = rodrigues_to_matrix(&Vec3::new(0.4, -0.9, 0.2));
    let shift = Vec3::new(3.0, -1.0, 2.0);
    let moved = scan.with_vertices(scan.vertices.iter().map(|v| rot * v + shift).collect());
    let moved_kps: Vec<(String, Vec3)> = kps
        .iter()
        .map(|(n, p)| (n.clone(), rot * p + shift))
        .collect();
    let cfg = GlossFitConfig::default();
    let a = fit_gloss(&m, &scan, &kps, &cfg).unwrap().terms.total();
    let b = fit_gloss(&m, &moved, &moved_kps, &cfg)
        .unwrap()
        .terms
        .total();
    assert!((a - b).abs() <= 1e-2 * a.max(1e-6), "{a} vs {b}");
}
