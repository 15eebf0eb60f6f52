use crate::args::{MakeDataArgs, TextureArg};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use gradrecon::synth::{make_dataset, save_dataset, DatasetConfig, DefectKind, TextureKind};

pub fn run(a: &MakeDataArgs) -> CliResult<()> {
    let cfg = DatasetConfig {
        texture: match a.texture {
            TextureArg::Grid => TextureKind::Grid,
            TextureArg::Stripes => TextureKind::Stripes,
            TextureArg::Checker => TextureKind::Checker,
        },
        size: a.size,
        train_normal: a.train,
        test_normal: a.test_normal,
        test_anomalous: a.test_anomalous,
        defect_kinds: DefectKind::ALL.to_vec(),
        defect_size: (a.defect_min, a.defect_max),
        augment: !a.no_augment,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let data = make_dataset(&cfg)?;
    let mut out = Outputs::create(&a.out)?;
    for p in save_dataset(&a.out, &data, &cfg)? {
        out.note(&p.strip_prefix(&a.out).unwrap_or(&p).to_string_lossy());
    }
    out.finish("make-data", a)
}
