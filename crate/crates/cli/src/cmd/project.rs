use super::{energy_config, gather, load_model, masks, parallelism, trace_rows, Named, TRACE_HEADER};
use crate::args::{ModeArg, ProjectArgs};
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs};
use gradrecon::projector::{project_batch, ProjectionTrace, UpdateMode};
use gradrecon::Tensor;

pub fn run(a: &ProjectArgs) -> CliResult<()> {
    match (a.mode, a.mask.is_empty()) {
        (ModeArg::Masked, true) => return Err(CliError::usage("--mode masked needs --mask")),
        (ModeArg::Standard | ModeArg::Weighted, false) => {
            return Err(CliError::usage("--mask is only valid with --mode masked"))
        }
        _ => {}
    }
    let model = load_model(&a.model)?;
    let inputs = gather(&a.inputs)?;
    let mode = match a.mode {
        ModeArg::Weighted => UpdateMode::Weighted,
        _ => UpdateMode::Standard,
    };
    let mut cfg = energy_config(&a.energy, &model, mode)?;
    cfg.snapshot_every = a.snapshot_every;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let m = if a.mode == ModeArg::Masked { Some(masks(&a.mask, inputs.len())?) } else { None };
    let images: Vec<Tensor<f32>> = inputs.iter().map(|n| n.image.clone()).collect();
    let traces = project_batch(&model, &images, &cfg, m.as_deref(), parallelism(&a.common));

    let mut out = Outputs::create(&a.out)?;
    let mut summary = Vec::new();
    for (n, t) in inputs.iter().zip(traces) {
        let t = t.map_err(|e| CliError::new("project", format!("{}: {e}", n.name)))?;
        write_trace(&mut out, n, &t)?;
        let (first, last) = (&t.records[0], t.records.last().expect("t = 0 record"));
        summary.push(vec![
            n.name.clone(),
            t.iterations().to_string(),
            t.stop_reason.as_str().to_string(),
            num(first.energy),
            num(last.energy),
            num(last.loss_r),
        ]);
    }
    out.csv(
        "projections.csv",
        &["image", "iterations", "stop_reason", "energy_initial", "energy_final", "loss_r_final"],
        &summary,
    )?;
    out.finish("project", a)
}

/// `<name>.proj.{tnsr,pgm}`, `<name>.recon.tnsr`, snapshots and `<name>.trace.csv`.
fn write_trace(out: &mut Outputs, n: &Named, t: &ProjectionTrace<f32>) -> CliResult<()> {
    out.image(&format!("{}.proj", n.name), &t.image)?;
    out.tensor(&format!("{}.recon.tnsr", n.name), &t.initial_reconstruction)?;
    let snap = |it: usize| format!("{}.snap{it:05}.tnsr", n.name);
    for (it, s) in &t.snapshots {
        out.tensor(&snap(*it), s)?;
    }
    out.csv(&format!("{}.trace.csv", n.name), &TRACE_HEADER, &trace_rows(t, snap))
}
