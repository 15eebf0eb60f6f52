use super::parallelism;
use crate::args::{TrainArgs, VariantArg};
use crate::error::{CliError, CliResult};
use crate::output::{num, stem, Outputs};
use gradrecon::io::write_checkpoint;
use gradrecon::models::{ArchitectureSpec, ModelBundle, Variant};
use gradrecon::synth::load_dataset;
use gradrecon::trainer::{fit, EpochStats, TrainConfig, TrainError};

pub fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::L2ae => Variant::L2AE,
        VariantArg::Dsae => Variant::DSAE,
        VariantArg::Vae => Variant::VAE,
        VariantArg::GammaVae => Variant::GammaVAE,
    }
}

fn history_rows(h: &[EpochStats]) -> Vec<Vec<String>> {
    h.iter()
        .map(|s| vec![s.epoch.to_string(), num(s.mean_loss), num(s.mean_loss_r), num(s.mean_loss_kl)])
        .collect()
}

const HEADER: [&str; 4] = ["epoch", "mean_loss", "mean_Lr", "mean_LKL"];

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let file = a
        .out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::usage("--out must name a checkpoint file"))?;
    let data = load_dataset(&a.data)?;
    let images: Vec<_> = data.train.into_iter().map(|l| l.image.image).collect();
    let Some(first) = images.first() else {
        return Err(CliError::new("data", format!("{}: no training images in train/good", a.data.display())));
    };
    let &[c, h, w] = first.shape() else { unreachable!("images are [C,H,W]") };
    let arch = ArchitectureSpec::new(c, h, w, &a.conv_channels, a.latent_dim);
    let model = ModelBundle::<f32>::init(variant(a.variant), arch, a.seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        parallelism: parallelism(&a.common),
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => ".".into(),
    };
    let mut out = Outputs::create(&dir)?;
    let loss_csv = format!("{}.loss.csv", stem(&a.out));
    match fit(model, &images, &cfg) {
        Ok((trained, history)) => {
            out.bytes(&file, &write_checkpoint(&trained)?)?;
            out.csv(&loss_csv, &HEADER, &history_rows(&history))?;
            out.finish("train", a)
        }
        Err(TrainError::NonFinite { epoch, sample, history }) => {
            out.csv(&loss_csv, &HEADER, &history_rows(&history))?;
            Err(CliError::new(
                "train",
                format!("non-finite loss in epoch {epoch} at sample {sample}; partial history in {loss_csv}"),
            ))
        }
        Err(e) => Err(e.into()),
    }
}
