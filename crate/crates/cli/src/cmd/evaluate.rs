use super::{load_model, test_images};
use crate::args::EvaluateArgs;
use crate::error::{CliError, CliResult};
use crate::output::{num, read_input, Outputs};
use gradrecon::metrics::{anomaly_map, histogram, improvement_rate, map_auroc, pooled_auroc, summarize};
use gradrecon::models::ModelBundle;
use gradrecon::Tensor;
use std::path::Path;

fn find(dir: &Path, name: &str, suffixes: &[&str]) -> Option<std::path::PathBuf> {
    suffixes.iter().map(|s| dir.join(format!("{name}{s}"))).find(|p| p.is_file())
}

pub fn run(a: &EvaluateArgs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be at least 1"));
    }
    let images = test_images(&a.data)?;
    let model: Option<ModelBundle<f32>> = a.model.as_deref().map(load_model).transpose()?;

    let mut base_maps = Vec::new();
    let mut grad_maps = Vec::new();
    let mut masks = Vec::new();
    for n in &images {
        let proj = find(&a.projections, &n.name, &[".proj.tnsr", ".proj.pgm", ".proj.ppm"]).ok_or_else(|| {
            CliError::new("io", format!("{}: no projection for {}", a.projections.display(), n.name))
        })?;
        let proj = read_input(&proj)?;
        let recon: Tensor<f32> = match (find(&a.projections, &n.name, &[".recon.tnsr"]), &model) {
            (Some(p), _) => read_input(&p)?,
            (None, Some(m)) => m.reconstruct(&n.image)?,
            (None, None) => {
                return Err(CliError::new(
                    "io",
                    format!("no {}.recon.tnsr in {}; pass --model to recompute it", n.name, a.projections.display()),
                ))
            }
        };
        base_maps.push(anomaly_map(&n.image, &recon)?);
        grad_maps.push(anomaly_map(&n.image, &proj)?);
        masks.push(n.mask.clone().expect("dataset images carry masks"));
    }

    let mut rows = Vec::new();
    let mut rates = Vec::new();
    let (mut sum_b, mut sum_g) = (0.0, 0.0);
    for (i, n) in images.iter().enumerate() {
        if !masks[i].data().iter().any(|&v| v > 0.5) {
            continue;
        }
        let b = map_auroc(&base_maps[i], &masks[i])?;
        let g = map_auroc(&grad_maps[i], &masks[i])?;
        let r = improvement_rate(g, b)?;
        sum_b += b;
        sum_g += g;
        rates.push(r);
        rows.push(vec![n.name.clone(), num(b), num(g), num(r)]);
    }
    if rates.is_empty() {
        return Err(CliError::new("data", format!("{}: no defective test images", a.data.display())));
    }
    let pooled_b = pooled_auroc(&base_maps, &masks)?;
    let pooled_g = pooled_auroc(&grad_maps, &masks)?;
    let s = summarize(&rates)?;
    let k = rates.len() as f64;
    let agg: Vec<Vec<String>> = [
        ("images", rates.len() as f64),
        ("pooled_auroc_baseline", pooled_b),
        ("pooled_auroc_grad", pooled_g),
        ("pooled_improvement_rate", improvement_rate(pooled_g, pooled_b)?),
        ("mean_auroc_baseline", sum_b / k),
        ("mean_auroc_grad", sum_g / k),
        ("improvement_mean", s.mean),
        ("improvement_median", s.median),
        ("improvement_q1", s.q1),
        ("improvement_q3", s.q3),
        ("improvement_min", s.min),
        ("improvement_max", s.max),
    ]
    .iter()
    .map(|(k, v)| vec![k.to_string(), num(*v)])
    .collect();
    let hist: Vec<Vec<String>> = histogram(&rates, a.bins)?
        .iter()
        .map(|b| vec![num(b.lo), num(b.hi), b.count.to_string()])
        .collect();

    let mut out = Outputs::create(&a.out)?;
    out.csv("per_image.csv", &["image", "auroc_baseline", "auroc_grad", "improvement_rate"], &rows)?;
    out.csv("aggregate.csv", &["statistic", "value"], &agg)?;
    out.csv("histogram.csv", &["bin_lo", "bin_hi", "count"], &hist)?;
    out.finish("evaluate", a)
}
