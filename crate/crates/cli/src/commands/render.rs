//! `smal render`: render a model instance.

use serde::Serialize;
use smal_core::imagefit::{default_focal, render_silhouette, write_mask, Camera, FitParams};
use smal_core::mesh::write_obj;
use smal_core::smal::smal_instance;
use smal_core::synth::scene_params;
use smal_core::Result;

use super::fit_image::{load_model, model_path, yawed, FitRecord};
use crate::args::RenderArgs;
use crate::context::{read_json, write_json, Context};

#[derive(Serialize)]
struct RenderRecord<'a> {
    params: &'a FitParams,
    yaw_degrees: f64,
    resolution: [usize; 2],
}

pub fn run(ctx: &mut Context, args: &RenderArgs) -> Result<bool> {
    let model = load_model(&model_path(ctx, &args.model)?)?;
    let (params, default_resolution) = match &args.params {
        Some(path) => {
            let record: FitRecord = read_json(path)?;
            (record.params, record.resolution)
        }
        None => {
            let resolution = ctx.config.synth.dataset.resolution;
            let camera = Camera::centered(default_focal(resolution), resolution[0], resolution[1]);
            let theta = vec![0.0; 3 * model.joint_count()];
            let p = scene_params(
                &model,
                vec![],
                theta,
                std::f64::consts::FRAC_PI_2,
                &camera,
                ctx.config.synth.dataset.fill,
            )?;
            (p, resolution)
        }
    };
    let resolution = match &args.resolution {
        Some(r) => [r[0], r[1]],
        None => default_resolution,
    };
    let camera = Camera::centered(params.focal, resolution[0], resolution[1]);
    camera.validate()?;
    let mesh = yawed(
        &smal_instance(&model, &params.beta, &params.theta, &params.gamma)?,
        args.yaw.to_radians(),
    );
    write_obj(&ctx.path("mesh.obj"), &mesh)?;
    let mask = render_silhouette(&mesh, &camera)?;
    write_mask(&ctx.path("render.pgm"), &mask)?;
    write_json(
        &ctx.path("render.json"),
        &RenderRecord {
            params: &params,
            yaw_degrees: args.yaw,
            resolution,
        },
    )?;
    println!(
        "rendered {} pixels at {}x{}",
        mask.count(),
        resolution[0],
        resolution[1]
    );
    Ok(true)
}
