//! `smal verify`: gradient checks and numerical invariants.

use smal_core::verify::{gradient_suite, invariant_suite, VerifyConfig, VerifyReport};
use smal_core::Result;

use crate::args::VerifyArgs;
use crate::context::{write_json, Context};

pub fn run(ctx: &mut Context, args: &VerifyArgs) -> Result<bool> {
    let mut config = VerifyConfig {
        seed: ctx.config.seed,
        fault_injection: args.inject_fault,
        ..VerifyConfig::default()
    };
    if let Some(p) = args.points {
        config.points = p;
    }
    if let Some(c) = args.cases {
        config.cases = c;
    }
    let mut checks = if args.invariants_only {
        Vec::new()
    } else {
        gradient_suite(&config)?
    };
    checks.extend(invariant_suite(&config)?);
    let report = VerifyReport { checks };
    for c in &report.checks {
        println!(
            "{:<28} {:>10.3e} < {:<8.0e} {:<4} {:>7.2}s{}",
            c.name,
            c.max_error,
            c.threshold,
            if c.passed { "ok" } else { "FAIL" },
            c.seconds,
            c.detail
                .as_deref()
                .map(|d| format!("  {d}"))
                .unwrap_or_default()
        );
    }
    // Timings stay out of the report file so that it is reproducible.
    let mut value = serde_json::to_value(&report)?;
    if let Some(checks) = value.get_mut("checks").and_then(|c| c.as_array_mut()) {
        for c in checks {
            c.as_object_mut().expect("check object").remove("seconds");
        }
    }
    write_json(&ctx.path("report.json"), &value)?;
    let failed = report.failures().count();
    if failed == 0 {
        println!("all {} checks passed", report.checks.len());
    } else {
        println!("{failed} of {} checks failed", report.checks.len());
    }
    Ok(failed == 0)
}
