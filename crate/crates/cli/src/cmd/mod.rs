pub mod convergence;
pub mod data;
pub mod evaluate;
pub mod inpaint;
pub mod project;
pub mod scores;
pub mod train;

use crate::args::{Common, EnergyArgs, InputArgs, OptimizerArg, StopArg};
use crate::error::{CliError, CliResult};
use crate::output::{num, read_input, stem};
use gradrecon::io::{load_checkpoint, read_mask};
use gradrecon::models::ModelBundle;
use gradrecon::projector::{EnergyConfig, InputOptimizer, ProjectionTrace, StopCriterion, UpdateMode};
use gradrecon::synth::{load_dataset, LoadedImage};
use gradrecon::trainer::loss_threshold;
use gradrecon::{Parallelism, Tensor};
use std::collections::BTreeSet;
use std::path::Path;

pub fn parallelism(c: &Common) -> Parallelism {
    if c.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

pub fn load_model(path: &Path) -> CliResult<ModelBundle<f32>> {
    Ok(load_checkpoint(path)?)
}

pub fn optimizer(o: OptimizerArg) -> InputOptimizer {
    match o {
        OptimizerArg::Plain => InputOptimizer::Plain,
        OptimizerArg::Adam => InputOptimizer::Adam,
    }
}

/// Energy settings with the stop criterion resolved against the model.
pub fn energy_config(e: &EnergyArgs, model: &ModelBundle<f32>, mode: UpdateMode) -> CliResult<EnergyConfig> {
    let stop = match e.stop {
        StopArg::Threshold if e.quantile == 0.0 => None,
        StopArg::Threshold => Some(StopCriterion::LossThreshold(loss_threshold(model, e.quantile)?)),
        StopArg::Converged => Some(StopCriterion::EnergyConverged {
            tolerance: e.tolerance,
            patience: e.patience,
        }),
        StopArg::MaxIters => Some(StopCriterion::MaxIters),
    };
    let cfg = EnergyConfig {
        alpha: e.alpha,
        lambda: e.lambda,
        max_iters: e.max_iters,
        mode,
        optimizer: optimizer(e.optimizer),
        stop,
        clamp: !e.no_clamp,
        snapshot_every: None,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

/// A named image with its ground-truth mask when it came from a dataset.
pub struct Named {
    pub name: String,
    pub image: Tensor<f32>,
    pub mask: Option<Tensor<f32>>,
}

/// `good_0003` for `test/good/0003.pgm`, `defect_0003` for `test/defect/0003.pgm`.
pub fn dataset_name(l: &LoadedImage) -> String {
    let class = l
        .path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{class}_{}", stem(&l.path))
}

pub fn test_images(dir: &Path) -> CliResult<Vec<Named>> {
    let d = load_dataset(dir)?;
    if d.test.is_empty() {
        return Err(CliError::new("data", format!("{}: no test images", dir.display())));
    }
    Ok(d.test
        .iter()
        .map(|l| Named {
            name: dataset_name(l),
            image: l.image.image.clone(),
            mask: Some(l.image.mask.clone()),
        })
        .collect())
}

pub fn input_files(paths: &[std::path::PathBuf]) -> CliResult<Vec<Named>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in paths {
        let name = stem(p);
        if !seen.insert(name.clone()) {
            return Err(CliError::usage(format!("two inputs share the file stem `{name}`")));
        }
        out.push(Named { name, image: read_input(p)?, mask: None });
    }
    Ok(out)
}

pub fn gather(inputs: &InputArgs) -> CliResult<Vec<Named>> {
    match (&inputs.data, inputs.input.is_empty()) {
        (Some(d), true) => test_images(d),
        (None, false) => input_files(&inputs.input),
        _ => Err(CliError::usage("give either --input files or --data DIR")),
    }
}

/// Masks for `n` images: one each, or a single one shared by all.
pub fn masks(paths: &[std::path::PathBuf], n: usize) -> CliResult<Vec<Tensor<f32>>> {
    if paths.len() != 1 && paths.len() != n {
        return Err(CliError::usage(format!("{} masks for {n} inputs; give one per input or one for all", paths.len())));
    }
    let loaded = paths.iter().map(|p| Ok(read_mask(p)?)).collect::<CliResult<Vec<Tensor<f32>>>>()?;
    Ok((0..n).map(|i| loaded[i.min(loaded.len() - 1)].clone()).collect())
}

/// `iter,energy,loss_r,l1_dist,snapshot` rows.
pub fn trace_rows(trace: &ProjectionTrace<f32>, snapshot_name: impl Fn(usize) -> String) -> Vec<Vec<String>> {
    let snaps: BTreeSet<usize> = trace.snapshots.iter().map(|s| s.0).collect();
    trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                num(r.energy),
                num(r.loss_r),
                num(r.l1_dist),
                if snaps.contains(&r.iter) { snapshot_name(r.iter) } else { String::new() },
            ]
        })
        .collect()
}

pub const TRACE_HEADER: [&str; 5] = ["iter", "energy", "loss_r", "l1_dist", "snapshot"];
