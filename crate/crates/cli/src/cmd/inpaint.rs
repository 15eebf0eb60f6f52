use super::{energy_config, input_files, load_model, masks, parallelism, trace_rows, TRACE_HEADER};
use crate::args::InpaintArgs;
use crate::error::{CliError, CliResult};
use crate::output::{num, read_input, Outputs};
use gradrecon::projector::{project_batch, UpdateMode};
use gradrecon::Tensor;

/// Mean squared error over the pixels where `mask` is set (all channels).
fn masked_mse(a: &Tensor<f32>, b: &Tensor<f32>, mask: &Tensor<f32>) -> f64 {
    let plane = mask.len();
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..a.len() {
        if mask.data()[i % plane] > 0.5 {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn run(a: &InpaintArgs) -> CliResult<()> {
    if !a.blind && a.mask.is_empty() {
        return Err(CliError::usage("known-mask inpainting needs --mask (or pass --blind)"));
    }
    if !a.truth.is_empty() && a.truth.len() != a.input.len() {
        return Err(CliError::usage(format!("{} --truth files for {} inputs", a.truth.len(), a.input.len())));
    }
    let model = load_model(&a.model)?;
    let inputs = input_files(&a.input)?;
    let (mode, m) = if a.blind {
        (UpdateMode::Weighted, None)
    } else {
        (UpdateMode::Standard, Some(masks(&a.mask, inputs.len())?))
    };
    let cfg = energy_config(&a.energy, &model, mode)?;
    let images: Vec<Tensor<f32>> = inputs.iter().map(|n| n.image.clone()).collect();
    let traces = project_batch(&model, &images, &cfg, m.as_deref(), parallelism(&a.common));

    let mut out = Outputs::create(&a.out)?;
    let mut rows = Vec::new();
    for (i, (n, t)) in inputs.iter().zip(traces).enumerate() {
        let t = t.map_err(|e| CliError::new("project", format!("{}: {e}", n.name)))?;
        out.image(&format!("{}.inpainted", n.name), &t.image)?;
        out.csv(&format!("{}.trace.csv", n.name), &TRACE_HEADER, &trace_rows(&t, |_| String::new()))?;
        let mut row = vec![n.name.clone(), t.iterations().to_string(), t.stop_reason.as_str().to_string()];
        if let Some(truth) = a.truth.get(i) {
            let truth = read_input(truth)?;
            if truth.shape() != n.image.shape() {
                return Err(CliError::new("io", format!("{}: truth shape {:?} differs from input", n.name, truth.shape())));
            }
            let region = match &m {
                Some(m) => m[i].clone(),
                None => Tensor::ones(&n.image.shape()[1..]),
            };
            row.push(num(masked_mse(&n.image, &truth, &region)));
            row.push(num(masked_mse(&t.image, &truth, &region)));
        }
        rows.push(row);
    }
    let mut header = vec!["image", "iterations", "stop_reason"];
    if !a.truth.is_empty() {
        header.extend(["mse_corrupted", "mse_inpainted"]);
    }
    out.csv("inpaint.csv", &header, &rows)?;
    out.finish("inpaint", a)
}
