//! `smal build-model`: shape space, pose prior and co-registration.

use serde::Serialize;
use smal_core::config::require_path;
use smal_core::mesh::{read_obj, write_obj};
use smal_core::pipeline::{build_model, RegisteredScan};
use smal_core::smal::Rig;
use smal_core::synth::make_template;
use smal_core::{Error, Result};

use super::register::{GlossRecord, REGISTRATION_FILES};
use crate::args::BuildModelArgs;
use crate::context::{read_json, write_json, Context};
use crate::dataset::Dataset;

#[derive(Serialize)]
struct RoundMetrics {
    round: usize,
    mean_distance: f64,
    motion: f64,
    distances: Vec<f64>,
}

#[derive(Serialize)]
struct Metrics {
    scans: Vec<String>,
    initial_distance: Option<f64>,
    rounds: Vec<RoundMetrics>,
    shape_dim: usize,
    eigenvalues: Vec<f64>,
    families: Vec<String>,
}

fn registered(
    dataset: &Dataset,
    registrations: &std::path::Path,
    id: &str,
    families: bool,
) -> Result<RegisteredScan> {
    let animal = dataset.load(id)?;
    let dir = registrations.join(id);
    let load = || -> Result<RegisteredScan> {
        let record: GlossRecord = read_json(&dir.join("gloss.json"))?;
        let file = REGISTRATION_FILES
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no registration mesh in {}", dir.display()))
            })?;
        Ok(RegisteredScan {
            id: id.to_string(),
            scan: animal.scan,
            keypoints: animal.keypoints,
            registration: read_obj(&file)?,
            theta: record.theta,
            gamma: record.gamma,
            family: animal
                .family
                .filter(|_| families)
                .map(|f| f.name().to_string()),
        })
    };
    load().map_err(|e| e.context(format!("scan `{id}`")))
}

pub fn run(ctx: &mut Context, args: &BuildModelArgs) -> Result<bool> {
    if let Some(rounds) = args.rounds {
        ctx.config.model.rounds = rounds;
    }
    ctx.config.validate()?;
    require_path(&args.registrations, "registrations")?;
    let dir = args
        .dataset
        .clone()
        .unwrap_or_else(|| ctx.config.paths.dataset.clone());
    let mut dataset = Dataset::open(&dir, &ctx.config.template)?;
    ctx.config.template = dataset.template;
    // Only scans with a registration take part.
    dataset
        .ids
        .retain(|id| args.registrations.join(id).join("gloss.json").exists());
    if dataset.ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no registrations found in {}",
            args.registrations.display()
        )));
    }
    let template = make_template(&dataset.template)?;
    let rig = Rig::from_template(&template);
    let scans = dataset
        .ids
        .iter()
        .map(|id| {
            registered(
                &dataset,
                &args.registrations,
                id,
                ctx.config.stages.family_priors,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let built = build_model(&rig, &scans, &ctx.config.effective_coreg())?;
    built.model.save(&ctx.path("model.json"))?;
    let mut rounds = Vec::new();
    if let Some(coreg) = &built.coreg {
        for (r, round) in coreg.rounds.iter().enumerate() {
            let dir = ctx.path(format!("rounds/{}", r + 1));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (s, refinement) in scans.iter().zip(&round.refinements) {
                write_obj(&dir.join(format!("{}.obj", s.id)), &refinement.mesh)?;
            }
            println!(
                "round {}: mean distance {:.6}, motion {:.6}",
                r + 1,
                round.mean_distance,
                round.motion
            );
            rounds.push(RoundMetrics {
                round: r + 1,
                mean_distance: round.mean_distance,
                motion: round.motion,
                distances: round.distances.clone(),
            });
        }
    }
    let model = &built.model;
    write_json(
        &ctx.path("metrics.json"),
        &Metrics {
            scans: dataset.ids.clone(),
            initial_distance: built.coreg.as_ref().map(|c| c.initial_distance),
            rounds,
            shape_dim: model.shape_dim(),
            eigenvalues: model.shape_space.eigenvalues.clone(),
            families: model.families.keys().cloned().collect(),
        },
    )?;
    println!(
        "model: {} scans, {} shape components, families [{}]",
        scans.len(),
        model.shape_dim(),
        model
            .families
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(true)
}
