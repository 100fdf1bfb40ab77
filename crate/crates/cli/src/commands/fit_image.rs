//! `smal fit-image`: fit the model to an annotated image.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smal_core::config::require_path;
use smal_core::imagefit::{
    fit_image, load_annotation, render_silhouette, write_mask, Camera, EnergyTerms, FitParams,
    StageReport,
};
use smal_core::mesh::{centroid, rodrigues_to_matrix, write_obj, Mesh, Vec3};
use smal_core::smal::{smal_instance, SmalModel};
use smal_core::{Error, Result};

use crate::args::FitImageArgs;
use crate::context::{write_json, Context};

/// Contents of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub params: FitParams,
    pub resolution: [usize; 2],
    pub family: Option<String>,
    pub terms: EnergyTerms,
    pub keypoint_error: f64,
    pub iou: f64,
    pub stages: Vec<StageReport>,
}

/// Rotate `mesh` about the vertical axis through its centroid.
pub fn yawed(mesh: &Mesh, yaw: f64) -> Mesh {
    if yaw == 0.0 {
        return mesh.clone();
    }
    let r = rodrigues_to_matrix(&Vec3::new(0.0, yaw, 0.0));
    let c = centroid(&mesh.vertices);
    mesh.with_vertices(mesh.vertices.iter().map(|p| c + r * (p - c)).collect())
}

pub fn model_path(ctx: &Context, arg: &Option<PathBuf>) -> Result<PathBuf> {
    let path = arg
        .clone()
        .or_else(|| ctx.config.paths.model.clone())
        .ok_or_else(|| {
            Error::InvalidArgument("no model given; pass --model or set paths.model".into())
        })?;
    require_path(&path, "model")?;
    Ok(path)
}

pub fn load_model(path: &Path) -> Result<SmalModel> {
    SmalModel::load(path)
}

pub fn run(ctx: &mut Context, args: &FitImageArgs) -> Result<bool> {
    let c = &mut ctx.config;
    if let Some(s) = args.stages {
        c.image.stages = s;
    }
    if let Some(l) = args.pyramid_levels {
        c.image.pyramid_levels = l;
    }
    if let Some(f) = &args.family {
        c.image.family = Some(f.clone());
    }
    c.validate()?;
    let model = load_model(&model_path(ctx, &args.model)?)?;
    require_path(&args.annotation, "annotation")?;
    let (_, obs) = load_annotation(&args.annotation)?;
    let config = ctx.config.effective_image();
    if let Some(f) = &config.family {
        if !model.families.contains_key(f) {
            return Err(Error::InvalidArgument(format!(
                "model has no family `{f}`; available: [{}]",
                model
                    .families
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        log::info!("loaded family prior `{f}`");
    }
    let start = Instant::now();
    let fit = fit_image(&model, &obs, &config)?;
    let seconds = start.elapsed().as_secs_f64();
    let p = &fit.params;
    let mesh = smal_instance(&model, &p.beta, &p.theta, &p.gamma)?;
    let [w, h] = obs.resolution;
    let camera = Camera::centered(p.focal, w, h);
    write_obj(&ctx.path("fit.obj"), &mesh)?;
    write_mask(
        &ctx.path("overlay.pgm"),
        &render_silhouette(&mesh, &camera)?,
    )?;
    for (name, yaw) in [("render_minus45.pgm", -45f64), ("render_plus45.pgm", 45.0)] {
        write_mask(
            &ctx.path(name),
            &render_silhouette(&yawed(&mesh, yaw.to_radians()), &camera)?,
        )?;
    }
    write_json(
        &ctx.path("fit.json"),
        &FitRecord {
            params: fit.params.clone(),
            resolution: obs.resolution,
            family: config.family.clone(),
            terms: fit.terms,
            keypoint_error: fit.keypoint_error,
            iou: fit.iou,
            stages: fit.stages.clone(),
        },
    )?;
    println!(
        "keypoint error {:.3} px, IoU {:.4}, {:.1} s",
        fit.keypoint_error, fit.iou, seconds
    );
    Ok(true)
}
