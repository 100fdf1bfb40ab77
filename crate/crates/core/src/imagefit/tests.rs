use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::{Mesh, Vec3};
use crate::optim::{check_gradient, FnObjective, GemanMcClure};
use crate::smal::{smal_instance, SmalModel};
use crate::synth::{
    ground_truth_model, make_template, random_scene, render_params, scene_params, Scene, SceneSpec,
    TemplateSpec,
};

fn model(q: usize) -> SmalModel {
    let t = make_template(&TemplateSpec::with_resolution(q)).unwrap();
    ground_truth_model(&t, 4, 10, 3).unwrap()
}

fn scene(model: &SmalModel, seed: u64) -> Scene {
    random_scene(
        model,
        &SceneSpec::default(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn square(z: f64, half: f64) -> Mesh {
    let v = vec![
        Vec3::new(-half, -half, z),
        Vec3::new(half, -half, z),
        Vec3::new(half, half, z),
        Vec3::new(-half, half, z),
    ];
    Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
}

/// Flat disc facing the camera, as a fan around its center.
fn disc(center: Vec3, radius: f64, segments: usize) -> Mesh {
    let mut v = vec![center];
    for k in 0..segments {
        let a = std::f64::consts::TAU * k as f64 / segments as f64;
        v.push(center + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0));
    }
    let faces = (0..segments)
        .map(|k| [0, 1 + k, 1 + (k + 1) % segments])
        .collect();
    Mesh::new(v, faces).unwrap()
}

fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> Mesh {
    let mut v = vec![center + Vec3::new(0.0, radius, 0.0)];
    for i in 1..rings {
        let phi = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let t = std::f64::consts::TAU * j as f64 / segments as f64;
            v.push(
                center + radius * Vec3::new(phi.sin() * t.cos(), phi.cos(), phi.sin() * t.sin()),
            );
        }
    }
    v.push(center - Vec3::new(0.0, radius, 0.0));
    let last = v.len() - 1;
    let idx = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut f = Vec::new();
    for j in 0..segments {
        f.push([0, idx(1, j + 1), idx(1, j)]);
        f.push([last, idx(rings - 1, j), idx(rings - 1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            f.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            f.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
        }
    }
    Mesh::new(v, f).unwrap()
}

fn brute_force_sq(mask: &Mask) -> Vec<i64> {
    let inside: Vec<(i64, i64)> = mask.pixels().map(|(x, y)| (x as i64, y as i64)).collect();
    let mut out = Vec::with_capacity(mask.width * mask.height);
    for y in 0..mask.height as i64 {
        for x in 0..mask.width as i64 {
            out.push(
                inside
                    .iter()
                    .map(|(a, b)| (a - x).pow(2) + (b - y).pow(2))
                    .min()
                    .unwrap(),
            );
        }
    }
    out
}

#[test]
fn projection_closed_forms() {
    let c = Vec2::new(250.0, 250.0);
    let p = project(
        &[Vec3::new(0.0, 0.0, 3.0), Vec3::new(1.0, 0.0, 2.0)],
        500.0,
        c,
    )
    .unwrap();
    assert_eq!(p[0], c);
    assert_relative_eq!(p[1], Vec2::new(500.0, 250.0));
    let q = Vec3::new(0.3, -0.7, 4.0);
    let a = project(&[q], 300.0, c).unwrap()[0] - c;
    let b = project(&[q], 600.0, c).unwrap()[0] - c;
    assert_relative_eq!(b, a * 2.0, epsilon = 1e-12);
}

#[test]
fn projection_rejects_points_behind_the_camera() {
    let err = project(
        &[Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 1.0, -0.5)],
        100.0,
        Vec2::zeros(),
    )
    .unwrap_err();
    assert!(
        matches!(err, crate::Error::NonPositiveDepth { index: 1, .. }),
        "{err}"
    );
}

#[test]
fn square_rasterizes_to_its_projected_rectangle() {
    let cam = Camera::centered(200.0, 128, 96);
    let mask = render_silhouette(&square(4.0, 0.5), &cam).unwrap();
    // Corners project to 64 +- 25 and 48 +- 25.
    let xs: Vec<usize> = mask.pixels().map(|p| p.0).collect();
    let ys: Vec<usize> = mask.pixels().map(|p| p.1).collect();
    let (x0, x1) = (
        *xs.iter().min().unwrap() as f64,
        *xs.iter().max().unwrap() as f64 + 1.0,
    );
    let (y0, y1) = (
        *ys.iter().min().unwrap() as f64,
        *ys.iter().max().unwrap() as f64 + 1.0,
    );
    for (got, want) in [(x0, 39.0), (x1, 89.0), (y0, 23.0), (y1, 73.0)] {
        assert!((got - want).abs() <= 1.0, "extent {got} vs {want}");
    }
    assert_eq!(
        mask.count(),
        ((x1 - x0) * (y1 - y0)) as usize,
        "rectangle is filled"
    );
}

#[test]
fn off_screen_mesh_has_no_silhouette() {
    let cam = Camera::centered(200.0, 64, 64);
    let far = square(4.0, 0.5).translated(&Vec3::new(100.0, 0.0, 0.0));
    assert!(matches!(
        render_silhouette(&far, &cam),
        Err(crate::Error::Empty(_))
    ));
}

#[test]
fn sphere_area_matches_the_analytic_disc() {
    let (r, d, f) = (1.0, 6.0, 400.0);
    let cam = Camera::centered(f, 256, 256);
    let mask = render_silhouette(&uv_sphere(Vec3::new(0.0, 0.0, d), r, 96, 192), &cam).unwrap();
    let radius = f * r / (d * d - r * r).sqrt();
    let analytic = std::f64::consts::PI * radius * radius;
    let rel = (mask.count() as f64 - analytic).abs() / analytic;
    assert!(rel < 0.02, "area {} vs {analytic}", mask.count());
}

#[test]
fn rasterizer_is_deterministic() {
    let m = model(1);
    let s = scene(&m, 4);
    let again = render_params(&m, &s.params, [512, 512]).unwrap();
    assert_eq!(s.observation, again.observation);
}

#[test]
fn distance_transform_simple_cases() {
    let full = Mask::from_fn(7, 5, |_, _| true);
    assert!(distance_transform(&full)
        .unwrap()
        .data
        .iter()
        .all(|&d| d == 0.0));
    let mut one = Mask::new(20, 12);
    one.set(3, 6, true);
    let d = distance_transform(&one).unwrap();
    assert_eq!(d.at(8, 6), 5.0);
    assert_eq!(d.at(3, 6), 0.0);
    assert!(matches!(
        distance_transform(&Mask::new(4, 4)),
        Err(crate::Error::Empty(_))
    ));
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let density = [0.002, 0.02, 0.2, 0.6, 0.95][i % 5];
        let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random_bool(density)).collect();
        let mut mask = Mask::from_fn(64, 64, |x, y| bits[y * 64 + x]);
        if mask.is_empty() {
            mask.set(rng.random_range(0..64), rng.random_range(0..64), true);
        }
        assert_eq!(
            squared_distance_transform(&mask).unwrap(),
            brute_force_sq(&mask),
            "mask {i}"
        );
    }
}

#[test]
fn field_sampling_interpolates_between_centers() {
    let mut one = Mask::new(10, 10);
    one.set(2, 2, true);
    let d = distance_transform(&one).unwrap();
    let (v, g) = d.sample(&Vec2::new(3.0, 2.5));
    assert_relative_eq!(v, 0.5, epsilon = 1e-12);
    assert_relative_eq!(g.x, 1.0, epsilon = 1e-12);
    let (far, _) = d.sample(&Vec2::new(-3.5, 2.5));
    assert_relative_eq!(far, 2.0 + 4.0, epsilon = 1e-12);
}

#[test]
fn downsample_and_iou() {
    let m = Mask::from_fn(8, 8, |x, y| x < 4 && y < 6);
    let d = m.downsample(2);
    assert_eq!((d.width, d.height), (4, 4));
    assert_eq!(d.count(), 6);
    assert_eq!(m.iou(&m).unwrap(), 1.0);
    let shifted = Mask::from_fn(8, 8, |x, y| x < 4 && y < 3);
    assert_relative_eq!(m.iou(&shifted).unwrap(), 0.5);
    assert!(m.iou(&Mask::new(4, 4)).is_err());
}

fn only_visible(obs: &ImageObservation, name: &str, offset: Vec2) -> ImageObservation {
    let mut o = obs.clone();
    for k in &mut o.keypoints {
        k.position = if k.name == name {
            k.position.map(|[u, v]| [u + offset.x, v + offset.y])
        } else {
            None
        };
    }
    o
}

#[test]
fn keypoint_energy_closed_forms() {
    let m = model(1);
    let s = scene(&m, 1);
    let (zero, _) = e_kp(&m, &s.params, &s.observation, 10.0).unwrap();
    assert!(zero < 1e-16, "{zero}");
    let name = "withers";
    assert!(s
        .observation
        .keypoints
        .iter()
        .any(|k| k.name == name && k.position.is_some()));
    let one = only_visible(&s.observation, name, Vec2::new(3.0, 4.0));
    let (v, _) = e_kp(&m, &s.params, &one, 10.0).unwrap();
    assert_relative_eq!(v, 20.0, epsilon = 1e-9);
    let none = only_visible(&s.observation, "no such keypoint", Vec2::zeros());
    assert!(matches!(
        e_kp(&m, &s.params, &none, 10.0),
        Err(crate::Error::Empty(_))
    ));
}

#[test]
fn keypoint_energy_ignores_vertex_order() {
    let m = model(1);
    let s = scene(&m, 2);
    let mut obs = s.observation.clone();
    for k in &mut obs.keypoints {
        k.position = k.position.map(|[u, v]| [u + 2.0, v - 1.0]);
    }
    let (a, _) = e_kp(&m, &s.params, &obs, 10.0).unwrap();
    let mut reversed = m.clone();
    let entries = m
        .rig
        .image_keypoints
        .entries()
        .iter()
        .map(|(n, v)| (n.clone(), v.iter().rev().copied().collect()))
        .collect();
    reversed.rig.image_keypoints = KeypointVertexMap::new(entries).unwrap();
    let (b, _) = e_kp(&reversed, &s.params, &obs, 10.0).unwrap();
    assert_relative_eq!(a, b, max_relative = 1e-12);
}

fn flat_gradient_check(
    f: impl Fn(&FitParams) -> crate::Result<(f64, Vec<f64>)>,
    p: &FitParams,
    eps: f64,
) -> f64 {
    let nb = p.beta.len();
    let obj = FnObjective::new(p.flatten().len(), |x: &[f64], g: &mut [f64]| {
        let (v, grad) = f(&FitParams::unflatten(x, nb)).unwrap();
        g.copy_from_slice(&grad);
        v
    });
    check_gradient(&obj, &p.flatten(), eps)
        .unwrap()
        .max_relative_error
}

fn perturbed(p: &FitParams, rng: &mut impl Rng, s: f64) -> FitParams {
    let mut q = p.clone();
    q.beta
        .iter_mut()
        .for_each(|b| *b += 0.01 * s * rng.random_range(-1.0..1.0));
    q.theta
        .iter_mut()
        .for_each(|t| *t += 0.05 * s * rng.random_range(-1.0..1.0));
    q.gamma += Vec3::new(0.05, -0.03, 0.1) * s;
    q.focal *= 1.0 + 0.03 * s;
    q
}

#[test]
fn keypoint_energy_gradient() {
    let m = model(1);
    let s = scene(&m, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..5 {
        let p = perturbed(&s.params, &mut rng, 1.0 + k as f64);
        let err = flat_gradient_check(|q| e_kp(&m, q, &s.observation, 50.0), &p, 1e-6);
        assert!(err < 1e-4, "point {k}: {err}");
    }
}

#[test]
fn silhouette_energy_gradient() {
    let m = model(1);
    let s = scene(&m, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..5 {
        let p = perturbed(&s.params, &mut rng, 1.0 + k as f64);
        let err = flat_gradient_check(|q| e_silh(&m, q, &s.observation, 10.0), &p, 1e-7);
        assert!(err < 1e-3, "point {k}: {err}");
    }
}

#[test]
fn silhouette_energy_of_the_exact_silhouette_is_zero() {
    let m = model(1);
    let s = scene(&m, 6);
    let (v, _) = e_silh(&m, &s.params, &s.observation, 10.0).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn silhouette_energy_of_an_inner_silhouette_is_coverage_only() {
    let cam = Camera::centered(300.0, 160, 160);
    let big = disc(Vec3::new(0.0, 0.0, 5.0), 1.2, 128);
    let small = disc(Vec3::new(0.05, 0.0, 5.0), 0.8, 128);
    let target = SilhouetteTarget::new(render_silhouette(&big, &cam).unwrap(), 1.0, 10.0).unwrap();
    let projected = cam.project(&small.vertices).unwrap();
    let mut grad = vec![Vec2::zeros(); projected.len()];
    let edges = EdgeFaces::new(&small.faces);
    let parts = silhouette_energy(
        &small.vertices,
        &projected,
        &small.faces,
        &edges,
        &cam,
        &target,
        &mut grad,
    )
    .unwrap();
    assert_eq!(parts.consistency, 0.0);
    assert!(parts.coverage > 0.0);
}

#[test]
fn silhouette_energy_matches_dense_pixel_oracle() {
    let cam = Camera::centered(400.0, 400, 400);
    let z = 4.0;
    let big = disc(Vec3::new(0.0, 0.0, z), 1.5, 256);
    // 3 pixels to the right, fully inside the large disc.
    let small = disc(Vec3::new(3.0 * z / cam.focal, 0.0, z), 1.0, 256);
    let s = render_silhouette(&big, &cam).unwrap();
    let s_hat = render_silhouette(&small, &cam).unwrap();
    let kernel = GemanMcClure::new(10.0).unwrap();
    let d_s = distance_transform(&s).unwrap();
    let first: f64 = s_hat.pixels().map(|(x, y)| d_s.at(x, y)).sum();
    assert_eq!(first, 0.0);
    let d_hat = squared_distance_transform(&s_hat).unwrap();
    let second: f64 = s
        .pixels()
        .map(|(x, y)| kernel.value(d_hat[y * s.width + x] as f64))
        .sum::<f64>()
        / s.count() as f64;

    let target = SilhouetteTarget::new(s, 1.0, 10.0).unwrap();
    let projected = cam.project(&small.vertices).unwrap();
    let mut grad = vec![Vec2::zeros(); projected.len()];
    let edges = EdgeFaces::new(&small.faces);
    let parts = silhouette_energy(
        &small.vertices,
        &projected,
        &small.faces,
        &edges,
        &cam,
        &target,
        &mut grad,
    )
    .unwrap();
    let value = parts.consistency + parts.coverage;
    let oracle = first + second;
    assert!(
        (value - oracle).abs() < 0.05 * oracle,
        "{value} vs {oracle}"
    );
}

#[test]
fn limit_energy_is_a_hinge() {
    let limits = crate::smal::PoseLimits {
        min: vec![-1.0, f64::NEG_INFINITY, -0.5],
        max: vec![1.0, f64::INFINITY, 0.5],
    };
    assert_eq!(e_lim(&[0.3, 100.0, -0.5], &limits).0, 0.0);
    let (v, g) = e_lim(&[1.2, 0.0, -0.9], &limits);
    assert_relative_eq!(v, 0.2 + 0.4, epsilon = 1e-12);
    assert_eq!(g, vec![1.0, 0.0, -1.0]);
    let x = [1.3, 2.0, 0.1];
    let obj = FnObjective::new(3, |x: &[f64], g: &mut [f64]| {
        let (v, grad) = e_lim(x, &limits);
        g.copy_from_slice(&grad);
        v
    });
    assert!(check_gradient(&obj, &x, 1e-6).unwrap().max_relative_error < 1e-6);
}

#[test]
fn full_energy_gradient_in_both_stage_kinds() {
    let m = model(1);
    let s = scene(&m, 7);
    let config = ImageFitConfig::default();
    let n = fitted_shape_dim(&m, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = perturbed(&s.params, &mut rng, 1.0);
    p.beta.truncate(n);
    for anchor in [None, Some(&s.params)] {
        let err = flat_gradient_check(
            |q| image_energy(&m, &s.observation, &config, q, anchor).map(|(t, g)| (t.total, g)),
            &p,
            1e-7,
        );
        assert!(err < 1e-3, "anchor {}: {err}", anchor.is_some());
    }
}

#[test]
fn energies_are_resolution_independent() {
    let m = model(1);
    let s = scene(&m, 8);
    let mut big = s.params.clone();
    big.focal *= 2.0;
    let s2 = render_params(&m, &big, [1024, 1024]).unwrap();
    let config = ImageFitConfig::default();
    let n = fitted_shape_dim(&m, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = perturbed(&s.params, &mut rng, 1.0);
    p.beta.truncate(n);
    let mut p2 = p.clone();
    p2.focal *= 2.0;
    let (a, _) = image_energy(&m, &s.observation, &config, &p, None).unwrap();
    let (b, _) = image_energy(&m, &s2.observation, &config, &p2, None).unwrap();
    assert_relative_eq!(a.keypoint, b.keypoint, max_relative = 1e-9);
    assert_relative_eq!(a.total, b.total, max_relative = 1e-9);
    let (a, _) = e_silh(&m, &p, &s.observation, 10.0).unwrap();
    let (b, _) = e_silh(&m, &p2, &s2.observation, 10.0).unwrap();
    assert!((a - b).abs() < 0.1 * a.max(b), "{a} vs {b}");
}

#[test]
fn fit_requires_enough_keypoints() {
    let m = model(1);
    let s = scene(&m, 9);
    let mut obs = s.observation.clone();
    let mut kept = 0;
    for k in &mut obs.keypoints {
        if k.position.is_some() {
            kept += 1;
            if kept > 5 {
                k.position = None;
            }
        }
    }
    let err = fit_image(&m, &obs, &ImageFitConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::InvalidArgument(_)), "{err}");
}

#[test]
fn fit_from_the_truth_barely_moves() {
    let m = model(1);
    let t = make_template(&TemplateSpec::with_resolution(1)).unwrap();
    let camera = Camera::centered(default_focal([512, 512]), 512, 512);
    let theta = vec![0.0; 3 * m.joint_count()];
    let params = scene_params(
        &m,
        vec![0.0; m.shape_dim()],
        theta,
        std::f64::consts::FRAC_PI_2,
        &camera,
        0.8,
    )
    .unwrap();
    let s = render_params(&m, &params, [512, 512]).unwrap();
    assert_eq!(t.vertex_count(), m.vertex_count());
    let fit = fit_image_from(&m, &s.observation, &ImageFitConfig::default(), &params).unwrap();
    let first = &fit.stages[0];
    assert!(first.final_energy <= first.initial_energy);
    assert!(first.motion < 0.05, "first stage moved {}", first.motion);
    assert!(fit.keypoint_error < 0.5, "{}", fit.keypoint_error);
    assert!(fit.iou > 0.97, "{}", fit.iou);
}

#[test]
fn fit_recovers_a_render() {
    let m = model(1);
    let s = scene(&m, 10);
    let fit = fit_image(&m, &s.observation, &ImageFitConfig::default()).unwrap();
    assert!(fit.keypoint_error < 3.0, "{}", fit.keypoint_error);
    assert!(fit.iou > 0.9, "{}", fit.iou);
    for st in &fit.stages {
        assert!(st.final_energy <= st.initial_energy, "{st:?}");
    }
    let mesh = smal_instance(&m, &fit.params.beta, &fit.params.theta, &fit.params.gamma).unwrap();
    assert_eq!(mesh.vertex_count(), m.vertex_count());
}

#[test]
fn fit_rejects_an_unknown_family() {
    let m = model(1);
    let s = scene(&m, 11);
    let config = ImageFitConfig {
        family: Some("dragon".into()),
        ..ImageFitConfig::default()
    };
    assert!(fit_image(&m, &s.observation, &config).is_err());
}

#[test]
fn annotation_round_trip() {
    let m = model(1);
    let s = scene(&m, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    save_annotation(&path, &s.observation, "a.pgm", Some("photo.jpg")).unwrap();
    let (ann, obs) = load_annotation(&path).unwrap();
    assert_eq!(ann.image.as_deref(), Some("photo.jpg"));
    assert_eq!(obs.silhouette, s.observation.silhouette);
    for k in &s.observation.keypoints {
        let got = obs.keypoints.iter().find(|g| g.name == k.name).unwrap();
        assert_eq!(got.position, k.position);
    }
    write_mask(&dir.path().join("b.png"), &s.observation.silhouette).unwrap();
    assert_eq!(
        read_mask(&dir.path().join("b.png")).unwrap(),
        s.observation.silhouette
    );
}

#[test]
fn corrupt_or_mismatched_masks_are_rejected() {
    let m = model(1);
    let s = scene(&m, 13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    save_annotation(&path, &s.observation, "a.pgm", None).unwrap();
    std::fs::write(dir.path().join("a.pgm"), b"P5 garbage").unwrap();
    assert!(matches!(
        load_annotation(&path).unwrap_err().root(),
        crate::Error::Parse { .. }
    ));
    write_mask(&dir.path().join("a.pgm"), &Mask::from_fn(8, 8, |_, _| true)).unwrap();
    assert!(matches!(
        load_annotation(&path).unwrap_err().root(),
        crate::Error::InvalidArgument(_)
    ));
}
