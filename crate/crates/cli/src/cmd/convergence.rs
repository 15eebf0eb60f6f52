use super::{load_model, optimizer, parallelism, test_images};
use crate::args::ConvergenceArgs;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs};
use gradrecon::metrics::{auroc_per_iteration, trace_maps};
use gradrecon::projector::{project_batch, EnergyConfig, StopCriterion, UpdateMode};
use gradrecon::Tensor;

pub fn run(a: &ConvergenceArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let defective: Vec<_> = test_images(&a.data)?
        .into_iter()
        .filter(|n| n.mask.as_ref().is_some_and(|m| m.data().iter().any(|&v| v > 0.5)))
        .collect();
    if defective.is_empty() {
        return Err(CliError::new("data", format!("{}: no defective test images", a.data.display())));
    }
    let x: Vec<Tensor<f32>> = defective.iter().map(|n| n.image.clone()).collect();
    let masks: Vec<Tensor<f32>> = defective.iter().map(|n| n.mask.clone().expect("dataset mask")).collect();
    let mut series = Vec::new();
    for mode in [UpdateMode::Standard, UpdateMode::Weighted] {
        let cfg = EnergyConfig {
            alpha: a.alpha,
            lambda: a.lambda,
            max_iters: a.max_iters,
            mode,
            optimizer: optimizer(a.optimizer),
            stop: Some(StopCriterion::MaxIters),
            clamp: !a.no_clamp,
            snapshot_every: Some(a.snapshot_every),
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        let mut maps = Vec::new();
        for (img, t) in x.iter().zip(project_batch(&model, &x, &cfg, None, parallelism(&a.common))) {
            let t = t.map_err(|e| CliError::new("project", e.to_string()))?;
            maps.push(trace_maps(img, &t)?);
        }
        series.push(auroc_per_iteration(&maps, &masks)?);
    }
    let rows: Vec<Vec<String>> = series[0]
        .iter()
        .zip(&series[1])
        .map(|((t, s), (_, w))| vec![t.to_string(), num(*s), num(*w)])
        .collect();
    let mut out = Outputs::create(&a.out)?;
    out.csv("convergence.csv", &["iter", "auroc_standard", "auroc_weighted"], &rows)?;
    out.finish("convergence", a)
}
