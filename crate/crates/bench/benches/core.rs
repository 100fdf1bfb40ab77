use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smal_core::imagefit::{
    distance_transform, fit_image, render_silhouette, Camera, ImageFitConfig, Mask,
};
use smal_core::mesh::spatial::mean_distance_to_surface;
use smal_core::pipeline::{Registrar, RegistrationConfig};
use smal_core::smal::{forward, pose_normalize, Rig};
use smal_core::synth::{
    ground_truth_model, make_template, random_scene, sample_animal, SceneSpec, SynthSpec,
    TemplateSpec,
};
use smal_core::verify::pose_within_limits;

fn images(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mask = Mask::new(512, 512);
    for v in mask.data.iter_mut() {
        *v = rng.random_bool(0.001);
    }
    c.bench_function("distance_transform_512", |b| {
        b.iter(|| distance_transform(black_box(&mask)).unwrap())
    });

    let template = make_template(&TemplateSpec::with_resolution(3)).unwrap();
    let camera = Camera::centered(768.0, 512, 512);
    let mesh = template
        .mesh
        .translated(&smal_core::mesh::Vec3::new(0.0, 0.0, 3.0));
    c.bench_function("render_silhouette_512", |b| {
        b.iter(|| render_silhouette(black_box(&mesh), &camera).unwrap())
    });
}

fn skinning(c: &mut Criterion) {
    let template = make_template(&TemplateSpec::with_resolution(3)).unwrap();
    let model = ground_truth_model(&template, 2, 5, 1).unwrap();
    let rig = Rig::from_template(&template);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta = pose_within_limits(&mut rng, &model.pose_limits);
    let gamma = smal_core::mesh::Vec3::zeros();
    let beta = vec![0.5; model.shape_dim()];
    c.bench_function("model_forward", |b| {
        b.iter(|| forward(&model, black_box(&beta), &theta, &gamma).unwrap())
    });
    let posed = rig.pose(&template.mesh.vertices, &theta, &gamma).unwrap();
    c.bench_function("pose_normalize", |b| {
        b.iter(|| pose_normalize(&rig, black_box(&posed), &theta, &gamma).unwrap())
    });
}

fn registration(c: &mut Criterion) {
    let template = make_template(&TemplateSpec::with_resolution(1)).unwrap();
    let animal = sample_animal(&template, &SynthSpec::default(), 3).unwrap();
    let registrar = Registrar::new(&template, &Default::default()).unwrap();
    let config = RegistrationConfig::default();
    let mut group = c.benchmark_group("registration");
    group.sample_size(10);
    group.bench_function("register_400", |b| {
        b.iter(|| {
            registrar
                .register(&animal.scan, &animal.keypoints, &config)
                .unwrap()
        })
    });
    group.bench_function("mean_distance_to_surface", |b| {
        b.iter(|| mean_distance_to_surface(black_box(&animal.scan.vertices), &template.mesh))
    });
    group.finish();
}

fn image_fit(c: &mut Criterion) {
    let template = make_template(&TemplateSpec::with_resolution(1)).unwrap();
    let model = ground_truth_model(&template, 2, 5, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scene = random_scene(&model, &SceneSpec::default(), &mut rng).unwrap();
    let config = ImageFitConfig {
        pyramid_levels: 1,
        ..ImageFitConfig::default()
    };
    let mut group = c.benchmark_group("image_fit");
    group.sample_size(10);
    group.bench_function("fit_image_400", |b| {
        b.iter(|| fit_image(&model, &scene.observation, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, images, skinning, registration, image_fit);
criterion_main!(benches);
