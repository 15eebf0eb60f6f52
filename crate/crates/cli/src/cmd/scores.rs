use super::{energy_config, load_model, parallelism, test_images};
use crate::args::{CompareArgs, ProjectionModeArg};
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs};
use gradrecon::metrics::{anomaly_map, pooled_auroc, score_baselines, AnomalyMap};
use gradrecon::models::ModelError;
use gradrecon::parallel::map_indexed;
use gradrecon::projector::{project_batch, UpdateMode};
use gradrecon::Tensor;

pub const HEADER: [&str; 7] = ["dataset", "recon-sq", "grad-abs", "product", "kl-grad", "kl-product", "vae-grad"];

pub fn run(a: &CompareArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    if !model.variant.is_variational() {
        return Err(ModelError::NotVariational(model.variant).into());
    }
    let mode = match a.mode {
        ProjectionModeArg::Standard => UpdateMode::Standard,
        ProjectionModeArg::Weighted => UpdateMode::Weighted,
    };
    let cfg = energy_config(&a.energy, &model, mode)?;
    let par = parallelism(&a.common);
    let mut rows = Vec::new();
    for dir in &a.data {
        let images = test_images(dir)?;
        let masks: Vec<Tensor<f32>> = images.iter().map(|n| n.mask.clone().expect("dataset mask")).collect();
        let x: Vec<Tensor<f32>> = images.iter().map(|n| n.image.clone()).collect();
        let singles = map_indexed(&x, par, |_, img| score_baselines(&model, img))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut row = vec![dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string())];
        for k in 0..5 {
            let maps: Vec<AnomalyMap> = singles.iter().map(|s| s.ordered()[k].clone()).collect();
            row.push(num(pooled_auroc(&maps, &masks)?));
        }
        let mut grad = Vec::new();
        for (img, t) in x.iter().zip(project_batch(&model, &x, &cfg, None, par)) {
            let t = t.map_err(|e| CliError::new("project", e.to_string()))?;
            grad.push(anomaly_map(img, &t.image)?);
        }
        row.push(num(pooled_auroc(&grad, &masks)?));
        rows.push(row);
    }
    let mut out = Outputs::create(&a.out)?;
    out.csv("scores.csv", &HEADER, &rows)?;
    out.finish("compare-scores", a)
}
