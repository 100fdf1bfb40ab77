use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::imagefit::{render_silhouette, Camera};
use crate::mesh::{format_obj, self_intersections, Vec3};

fn template() -> Template {
    make_template(&TemplateSpec::with_resolution(1)).unwrap()
}

fn exact(t: &Template) -> SynthSpec {
    SynthSpec {
        recipe: Some(t.spec.recipe),
        theta: Some(vec![0.0; 3 * PART_COUNT]),
        noise: 0.0,
        ..SynthSpec::default()
    }
}

#[test]
fn default_recipe_at_rest_reproduces_the_template() {
    let t = template();
    let a = sample_animal(&t, &exact(&t), 1).unwrap();
    for (p, q) in a.scan.vertices.iter().zip(&t.mesh.vertices) {
        assert!((p - q).norm() < 1e-12);
    }
    assert_eq!(a.scan.faces, t.mesh.faces);
    assert_eq!(a.attempts, 1);
}

#[test]
fn sampling_is_deterministic() {
    let t = template();
    let spec = SynthSpec {
        remesh: true,
        ..SynthSpec::default()
    };
    let a = sample_animal(&t, &spec, 9).unwrap();
    let b = sample_animal(&t, &spec, 9).unwrap();
    assert_eq!(format_obj(&a.scan), format_obj(&b.scan));
    assert_eq!(a.theta, b.theta);
    let c = sample_animal(&t, &spec, 10).unwrap();
    assert_ne!(format_obj(&a.scan), format_obj(&c.scan));
}

#[test]
fn longer_legs_scale_lower_leg_heights() {
    let t = template();
    let base = sample_animal(&t, &exact(&t), 0).unwrap();
    let mut recipe = t.spec.recipe;
    recipe.leg_length *= 1.2;
    let long = sample_animal(
        &t,
        &SynthSpec {
            recipe: Some(recipe),
            ..exact(&t)
        },
        0,
    )
    .unwrap();
    let get = |a: &SynthAnimal, n: &str| a.keypoints.iter().find(|(k, _)| k == n).unwrap().1;
    for side in ["left_front", "right_front", "left_back", "right_back"] {
        let names = ["knee", "ankle", "paw"].map(|p| format!("{side}_{p}"));
        for i in 0..3 {
            for j in i + 1..3 {
                let d0 = get(&base, &names[i]).y - get(&base, &names[j]).y;
                let d1 = get(&long, &names[i]).y - get(&long, &names[j]).y;
                assert!(
                    (d1 / d0 - 1.2).abs() < 1e-9,
                    "{} {}: {}",
                    names[i],
                    names[j],
                    d1 / d0
                );
            }
        }
    }
}

#[test]
fn noise_has_the_requested_size() {
    let t = template();
    let spec = SynthSpec {
        noise: 0.02,
        ..exact(&t)
    };
    let a = sample_animal(&t, &spec, 3).unwrap();
    let rms = (a
        .scan
        .vertices
        .iter()
        .zip(&a.posed.vertices)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        / a.scan.vertex_count() as f64)
        .sqrt();
    let want = 0.02 * a.posed.bbox_diagonal();
    assert!((rms / want - 1.0).abs() < 0.1, "{rms} vs {want}");
    assert!(sample_animal(
        &t,
        &SynthSpec {
            noise: 0.06,
            ..exact(&t)
        },
        3
    )
    .is_err());
}

#[test]
fn remeshing_breaks_correspondence_but_keeps_the_surface() {
    let t = template();
    let spec = SynthSpec {
        remesh: true,
        noise: 0.0,
        ..SynthSpec::default()
    };
    let a = sample_animal(&t, &spec, 4).unwrap();
    let target = a.posed.vertex_count() * 3 / 2;
    assert!(
        a.scan.vertex_count().abs_diff(target) <= target / 50,
        "{} vs {target}",
        a.scan.vertex_count()
    );
    let d = crate::mesh::spatial::mean_distance_to_surface(&a.scan.vertices, &a.posed);
    assert!(d < 0.005 * a.posed.bbox_diagonal(), "{d}");
    assert!(self_intersections(&a.posed).is_empty());
}

#[test]
fn families_have_distinct_valid_recipes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for f in Family::ALL {
        assert_eq!(Family::from_name(f.name()).unwrap(), f);
        for _ in 0..20 {
            f.sample_recipe(&mut rng, 0.08).validate().unwrap();
        }
    }
    for (i, a) in Family::ALL.iter().enumerate() {
        for b in &Family::ALL[i + 1..] {
            assert_ne!(a.mean_recipe(), b.mean_recipe());
        }
    }
    assert!(Family::from_name("dragon").is_err());
}

#[test]
fn frontal_render_is_mirror_symmetric() {
    let t = template();
    let camera = Camera::centered(600.0, 400, 400);
    let (mesh, _, _) = place_in_view(&t.mesh, std::f64::consts::PI, &camera, 0.7);
    let obs = render_annotation(&mesh, &t.image_keypoints, &camera).unwrap();
    let pos = |n: &str| obs.keypoints.iter().find(|k| k.name == n).unwrap().position;
    let mut pairs = 0;
    for k in &obs.keypoints {
        let Some(rest) = k.name.strip_prefix("left_") else {
            continue;
        };
        if let (Some(l), Some(r)) = (k.position, pos(&format!("right_{rest}"))) {
            assert!(
                (l[0] - camera.principal[0] + r[0] - camera.principal[0]).abs() < 1.0,
                "{}",
                k.name
            );
            assert!((l[1] - r[1]).abs() < 1.0, "{}", k.name);
            pairs += 1;
        }
    }
    assert!(pairs >= 2, "{pairs}");
}

#[test]
fn side_render_hides_the_far_side() {
    let t = template();
    let camera = Camera::centered(600.0, 400, 400);
    let (mesh, _, _) = place_in_view(&t.mesh, std::f64::consts::FRAC_PI_2, &camera, 0.7);
    let obs = render_annotation(&mesh, &t.image_keypoints, &camera).unwrap();
    let visible = |n: &str| {
        obs.keypoints
            .iter()
            .find(|k| k.name == n)
            .unwrap()
            .position
            .is_some()
    };
    assert!(visible("left_eye") && visible("left_shoulder") && visible("withers"));
    assert!(!visible("right_eye") && !visible("right_shoulder"));
    assert_eq!(obs.silhouette, render_silhouette(&mesh, &camera).unwrap());
}

#[test]
fn view_rotation_shows_the_left_side_upright() {
    let r = view_rotation(std::f64::consts::FRAC_PI_2);
    // The animal's left (+x) faces the camera (-z), and up (+y) maps to -y,
    // which is up in image rows.
    assert!((r * Vec3::x() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    assert!((r * Vec3::y() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
}

#[test]
fn dataset_is_reproducible() {
    let t = template();
    let spec = DatasetSpec::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ids = write_dataset(a.path(), &t, &spec, 2, 7).unwrap();
    write_dataset(b.path(), &t, &spec, 2, 7).unwrap();
    assert_eq!(ids, vec!["animal_000", "animal_001"]);
    for id in &ids {
        for f in [
            "scan.obj",
            "truth.obj",
            "keypoints3d.json",
            "truth.json",
            "render_side.json",
            "render_side.pgm",
            "render_three_quarter.json",
            "render_three_quarter.pgm",
        ] {
            let x = std::fs::read(a.path().join(id).join(f)).unwrap();
            let y = std::fs::read(b.path().join(id).join(f)).unwrap();
            assert!(x == y, "{id}/{f} differs");
        }
    }
    let kps = read_keypoints3d(&a.path().join("animal_000/keypoints3d.json")).unwrap();
    assert_eq!(kps.len(), 36);
    let (_, obs) =
        crate::imagefit::load_annotation(&a.path().join("animal_001/render_side.json")).unwrap();
    assert_eq!(obs.resolution, [512, 512]);
    let empty = tempfile::tempdir().unwrap();
    assert!(write_dataset(empty.path(), &t, &spec, 0, 7)
        .unwrap()
        .is_empty());
}
