//! `smal register`: part-model fit and ARAP refinement of every scan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smal_core::gloss::{EnergyTerms, GlossParams};
use smal_core::mesh::{write_obj, Vec3};
use smal_core::pipeline::{Registrar, ScanRegistration};
use smal_core::synth::make_template;
use smal_core::{Error, Result};

use crate::args::RegisterArgs;
use crate::context::{write_json, Context};
use crate::dataset::Dataset;

/// Contents of `{id}/gloss.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlossRecord {
    pub params: GlossParams,
    pub terms: EnergyTerms,
    pub theta: Vec<f64>,
    pub gamma: Vec3,
    pub gloss_distance: f64,
    pub arap_distance: f64,
    pub arap: bool,
}

#[derive(Serialize)]
struct Trace<'a> {
    gloss_round_energies: &'a [f64],
    arap_energies: &'a [f64],
    arap_fell_back: bool,
}

/// Per-scan entry of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub gloss_distance: Option<f64>,
    pub arap_distance: Option<f64>,
    pub error: Option<String>,
}

/// Final registration of a scan: `arap.obj` when refined, else `gloss.obj`.
pub const REGISTRATION_FILES: [&str; 2] = ["arap.obj", "gloss.obj"];

fn save(ctx: &Context, id: &str, r: &ScanRegistration) -> Result<()> {
    let dir = ctx.path(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(
        &dir.join("gloss.json"),
        &GlossRecord {
            params: r.gloss.params.clone(),
            terms: r.gloss.terms,
            theta: r.theta.clone(),
            gamma: r.gamma,
            gloss_distance: r.gloss_distance,
            arap_distance: r.arap_distance,
            arap: r.arap.is_some(),
        },
    )?;
    write_obj(&dir.join("gloss.obj"), &r.gloss.mesh)?;
    if let Some(a) = &r.arap {
        write_obj(&dir.join("arap.obj"), &a.mesh)?;
    }
    write_json(
        &dir.join("trace.json"),
        &Trace {
            gloss_round_energies: &r.gloss.round_energies,
            arap_energies: r.arap.as_ref().map_or(&[], |a| &a.energy_trace),
            arap_fell_back: r.arap.as_ref().is_some_and(|a| a.fell_back),
        },
    )
}

pub fn run(ctx: &mut Context, args: &RegisterArgs) -> Result<bool> {
    let dir = args
        .dataset
        .clone()
        .unwrap_or_else(|| ctx.config.paths.dataset.clone());
    let mut dataset = Dataset::open(&dir, &ctx.config.template)?;
    dataset.select(&args.only)?;
    ctx.config.template = dataset.template;
    let template = make_template(&dataset.template)?;
    let registrar = Registrar::new(&template, &ctx.config.registration.pose_basis)?;
    let ctx = &*ctx;
    let arap = ctx.config.stages.arap;
    let results: Vec<(String, Result<ScanRegistration>)> = dataset
        .ids
        .par_iter()
        .map(|id| {
            let r = dataset.load(id).and_then(|a| {
                registrar
                    .register_with(&a.scan, &a.keypoints, &ctx.config.registration, arap)
                    .map_err(|e| e.context(format!("scan `{id}`")))
            });
            (id.clone(), r)
        })
        .collect();
    let mut summary = BTreeMap::new();
    let mut first_error = None;
    for (id, r) in results {
        let entry = match r.and_then(|reg| save(ctx, &id, &reg).map(|_| reg)) {
            Ok(reg) => {
                println!(
                    "{id}: part model {:.5}, refined {:.5}",
                    reg.gloss_distance, reg.arap_distance
                );
                SummaryEntry {
                    gloss_distance: Some(reg.gloss_distance),
                    arap_distance: Some(reg.arap_distance),
                    error: None,
                }
            }
            Err(e) => {
                log::error!("{e}");
                let entry = SummaryEntry {
                    gloss_distance: None,
                    arap_distance: None,
                    error: Some(e.to_string()),
                };
                first_error.get_or_insert(e);
                entry
            }
        };
        summary.insert(id, entry);
    }
    write_json(&ctx.path("summary.json"), &summary)?;
    match first_error {
        None => Ok(true),
        Some(e) => {
            let failed = summary.values().filter(|s| s.error.is_some()).count();
            ctx.finish()?;
            Err(e.context(format!("{failed} of {} scans failed", summary.len())))
        }
    }
}
