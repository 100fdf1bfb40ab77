//! `smal synth`: procedural dataset generation.

use smal_core::synth::{make_template, write_dataset};
use smal_core::Result;

use crate::args::SynthArgs;
use crate::context::{write_json, Context};
use crate::dataset::DatasetIndex;

pub fn run(ctx: &mut Context, args: &SynthArgs) -> Result<bool> {
    if let Some(count) = args.count {
        ctx.config.synth.count = count;
    }
    if let Some(resolution) = args.resolution {
        ctx.config.template.resolution = resolution;
    }
    ctx.config.validate()?;
    let c = &ctx.config;
    let template = make_template(&c.template)?;
    log::info!("template: {} vertices", template.vertex_count());
    let animals = write_dataset(
        &ctx.out_dir,
        &template,
        &c.synth.dataset,
        c.synth.count,
        c.seed,
    )?;
    println!(
        "wrote {} animals to {}",
        animals.len(),
        ctx.out_dir.display()
    );
    write_json(
        &ctx.path("dataset.json"),
        &DatasetIndex {
            template: c.template,
            seed: c.seed,
            animals,
        },
    )?;
    Ok(true)
}
