mod common;

use common::{full_pipeline, gradrecon, ok, snapshot, stderr, tiny_setup};
use gradrecon::io::{load_checkpoint, read_tensor, write_image, write_mask, write_tensor};
use gradrecon::models::{ModelBundle, Variant};
use gradrecon::Tensor;
use std::fs;
use std::path::{Path, PathBuf};
use tempfile::tempdir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval")
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let dst = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dst);
        } else {
            fs::copy(&p, &dst).unwrap();
        }
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn tensor(path: &Path) -> Tensor<f32> {
    read_tensor(path).unwrap().into_tensor()
}

#[test]
fn training_is_reproducible_across_directories() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    tiny_setup(a.path());
    tiny_setup(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.contains_key("model/vae.ckpt"));
    assert!(sa.contains_key("model/vae.loss.csv"));
    assert!(sa.contains_key("model/manifest.json"));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs between runs");
    }
    let loss = read_csv(&a.path().join("model/vae.loss.csv"));
    assert_eq!(loss[0], ["epoch", "mean_loss", "mean_Lr", "mean_LKL"]);
    assert_eq!(loss.len(), 3);
}

#[test]
fn sequential_flag_gives_identical_checkpoint() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "train", "--data", "data", "--out", "seq/vae.ckpt", "--epochs", "2", "--lr", "1e-3", "--batch-size", "4",
        "--latent-dim", "4", "--conv-channels", "4,4", "--seed", "3", "--sequential",
    ]);
    let par = fs::read(d.path().join("model/vae.ckpt")).unwrap();
    let seq = fs::read(d.path().join("seq/vae.ckpt")).unwrap();
    assert!(par == seq);
}

#[test]
fn gamma_vae_checkpoint_stores_log_gamma() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "train", "--data", "data", "--out", "g.ckpt", "--variant", "gamma-vae", "--epochs", "1", "--latent-dim",
        "4", "--conv-channels", "4,4",
    ]);
    let m: ModelBundle<f32> = load_checkpoint(d.path().join("g.ckpt")).unwrap();
    assert_eq!(m.variant, Variant::GammaVAE);
    assert!(m.params.get("log_gamma").is_some());
}

#[test]
fn missing_required_flag_is_usage_error() {
    let d = tempdir().unwrap();
    let out = gradrecon(d.path(), &["train", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.lines().any(|l| l.starts_with("error: kind=usage message=")), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn zero_alpha_single_step_returns_input() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "project", "--model", "model/vae.ckpt", "--input", "data/test/defect/0000.pgm", "--out", "p", "--alpha",
        "0", "--max-iters", "1", "--stop", "max-iters",
    ]);
    let proj = tensor(&d.path().join("p/0000.proj.tnsr"));
    let input: Tensor<f32> = gradrecon::io::read_image(d.path().join("data/test/defect/0000.pgm")).unwrap();
    assert_eq!(proj, input);
}

#[test]
fn trace_lists_snapshot_every_ten_iterations() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "project", "--model", "model/vae.ckpt", "--input", "data/test/good/0000.pgm", "--out", "p", "--alpha",
        "0.01", "--max-iters", "30", "--stop", "max-iters", "--snapshot-every", "10",
    ]);
    let rows = read_csv(&d.path().join("p/0000.trace.csv"));
    assert_eq!(rows[0], ["iter", "energy", "loss_r", "l1_dist", "snapshot"]);
    assert_eq!(rows.len(), 32);
    for r in &rows[1..] {
        let it: usize = r[0].parse().unwrap();
        if it % 10 == 0 {
            assert_eq!(r[4], format!("0000.snap{it:05}.tnsr"));
            assert!(d.path().join("p").join(&r[4]).is_file());
        } else {
            assert_eq!(r[4], "");
        }
    }
    let summary = read_csv(&d.path().join("p/projections.csv"));
    assert_eq!(summary[1][1], "30");
    assert_eq!(summary[1][2], "max-iters");
}

/// A 24×24 constant image whose projection differs only in a 2×2 block.
fn perfect_maps_dir(root: &Path, same: bool) {
    let base = Tensor::<f32>::full(&[1, 24, 24], 0.4);
    let mut proj = base.clone();
    for y in 11..13 {
        for x in 11..13 {
            proj.data_mut()[y * 24 + x] = 1.0;
        }
    }
    let mut mask = Tensor::<f32>::zeros(&[24, 24]);
    for y in 6..18 {
        for x in 6..18 {
            mask.data_mut()[y * 24 + x] = 1.0;
        }
    }
    for sub in ["data/train/good", "data/test/good", "data/test/defect", "data/ground_truth/defect", "proj"] {
        fs::create_dir_all(root.join(sub)).unwrap();
    }
    write_image(root.join("data/test/good/0000.pgm"), &base).unwrap();
    write_image(root.join("data/test/defect/0000.pgm"), &base).unwrap();
    write_mask(root.join("data/ground_truth/defect/0000_mask.pgm"), &mask).unwrap();
    write_tensor(root.join("proj/good_0000.recon.tnsr"), &base).unwrap();
    write_tensor(root.join("proj/defect_0000.recon.tnsr"), if same { &proj } else { &base }).unwrap();
    write_tensor(root.join("proj/good_0000.proj.tnsr"), &base).unwrap();
    write_tensor(root.join("proj/defect_0000.proj.tnsr"), &proj).unwrap();
}

#[test]
fn perfect_maps_give_unit_auroc() {
    let d = tempdir().unwrap();
    perfect_maps_dir(d.path(), false);
    ok(d.path(), &["evaluate", "--data", "data", "--projections", "proj", "--out", "e"]);
    let rows = read_csv(&d.path().join("e/per_image.csv"));
    assert_eq!(rows[1][0], "defect_0000");
    assert_eq!(rows[1][2], "1");
    let agg = read_csv(&d.path().join("e/aggregate.csv"));
    let pooled = agg.iter().find(|r| r[0] == "pooled_auroc_grad").unwrap();
    assert_eq!(pooled[1], "1");
}

#[test]
fn identical_maps_give_zero_improvement() {
    let d = tempdir().unwrap();
    perfect_maps_dir(d.path(), true);
    ok(d.path(), &["evaluate", "--data", "data", "--projections", "proj", "--out", "e"]);
    for r in &read_csv(&d.path().join("e/per_image.csv"))[1..] {
        assert_eq!(r[3], "0");
    }
    let agg = read_csv(&d.path().join("e/aggregate.csv"));
    for key in ["pooled_improvement_rate", "improvement_mean", "improvement_min", "improvement_max"] {
        assert_eq!(agg.iter().find(|r| r[0] == key).unwrap()[1], "0", "{key}");
    }
    let hist = read_csv(&d.path().join("e/histogram.csv"));
    assert_eq!(hist[0], ["bin_lo", "bin_hi", "count"]);
}

#[test]
fn evaluate_matches_golden_fixture() {
    let d = tempdir().unwrap();
    let f = fixture();
    let out = d.path().join("e");
    let status = std::process::Command::new(common::bin())
        .arg("evaluate")
        .arg("--data")
        .arg(f.join("data"))
        .arg("--projections")
        .arg(f.join("projections"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["aggregate.csv", "per_image.csv"] {
        let got = fs::read(out.join(name)).unwrap();
        let want = fs::read(f.join("expected").join(name)).unwrap();
        assert!(got == want, "{name} differs from the golden copy");
    }
}

#[test]
fn evaluate_without_ground_truth_fails() {
    let d = tempdir().unwrap();
    copy_dir(&fixture(), d.path());
    fs::remove_file(d.path().join("data/ground_truth/defect/0001_mask.pgm")).unwrap();
    let out = gradrecon(d.path(), &["evaluate", "--data", "data", "--projections", "projections", "--out", "e"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).starts_with("error: kind="));
}

#[test]
fn evaluate_without_projection_fails() {
    let d = tempdir().unwrap();
    copy_dir(&fixture(), d.path());
    fs::remove_file(d.path().join("projections/defect_0002.proj.tnsr")).unwrap();
    let out = gradrecon(d.path(), &["evaluate", "--data", "data", "--projections", "projections", "--out", "e"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kind=io"));
}

#[test]
fn known_mask_inpainting_keeps_unmasked_pixels() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "inpaint", "--model", "model/vae.ckpt", "--input", "data/test/defect/0000.pgm", "--mask",
        "data/ground_truth/defect/0000_mask.pgm", "--truth", "data/test/good/0000.pgm", "--out", "inp", "--stop",
        "max-iters", "--max-iters", "40", "--alpha", "0.05",
    ]);
    let input: Tensor<f32> = gradrecon::io::read_image(d.path().join("data/test/defect/0000.pgm")).unwrap();
    let mask: Tensor<f32> = gradrecon::io::read_mask(d.path().join("data/ground_truth/defect/0000_mask.pgm")).unwrap();
    let out = tensor(&d.path().join("inp/0000.inpainted.tnsr"));
    let mut changed = 0;
    for i in 0..input.len() {
        if mask.data()[i] > 0.5 {
            changed += (out.data()[i] != input.data()[i]) as usize;
        } else {
            assert_eq!(out.data()[i], input.data()[i], "pixel {i} outside the mask moved");
        }
    }
    assert!(changed > 0);
    let rows = read_csv(&d.path().join("inp/inpaint.csv"));
    assert_eq!(rows[0], ["image", "iterations", "stop_reason", "mse_corrupted", "mse_inpainted"]);
}

#[test]
fn inpaint_mode_flags_are_checked() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    let both = gradrecon(d.path(), &[
        "inpaint", "--model", "model/vae.ckpt", "--input", "data/test/defect/0000.pgm", "--blind", "--mask",
        "data/ground_truth/defect/0000_mask.pgm", "--out", "x",
    ]);
    assert_eq!(both.status.code(), Some(2));
    let neither = gradrecon(d.path(), &[
        "inpaint", "--model", "model/vae.ckpt", "--input", "data/test/defect/0000.pgm", "--out", "x",
    ]);
    assert_eq!(neither.status.code(), Some(2));
    assert!(stderr(&neither).contains("kind=usage"));
    let masked = gradrecon(d.path(), &[
        "project", "--model", "model/vae.ckpt", "--data", "data", "--mode", "masked", "--out", "x",
    ]);
    assert_eq!(masked.status.code(), Some(2));
}

#[test]
fn compare_scores_needs_variational_model() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "train", "--data", "data", "--out", "ae.ckpt", "--variant", "l2ae", "--epochs", "1", "--latent-dim", "4",
        "--conv-channels", "4,4",
    ]);
    let out = gradrecon(d.path(), &["compare-scores", "--model", "ae.ckpt", "--data", "data", "--out", "s"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kind=model"), "{}", stderr(&out));

    ok(d.path(), &[
        "compare-scores", "--model", "model/vae.ckpt", "--data", "data", "--out", "s", "--stop", "max-iters",
        "--max-iters", "5",
    ]);
    let rows = read_csv(&d.path().join("s/scores.csv"));
    assert_eq!(rows[0], ["dataset", "recon-sq", "grad-abs", "product", "kl-grad", "kl-product", "vae-grad"]);
    assert_eq!(rows.len(), 2);
    for v in &rows[1][1..] {
        let a: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn convergence_series_share_their_start() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    ok(d.path(), &[
        "convergence", "--model", "model/vae.ckpt", "--data", "data", "--out", "c", "--max-iters", "20",
        "--snapshot-every", "10", "--alpha", "0.05",
    ]);
    let rows = read_csv(&d.path().join("c/convergence.csv"));
    assert_eq!(rows[0], ["iter", "auroc_standard", "auroc_weighted"]);
    let iters: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(iters, ["0", "10", "20"]);
    assert_eq!(rows[1][1], rows[1][2]);
}

#[test]
fn config_file_supplies_flags() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    fs::write(
        d.path().join("run.cfg"),
        "# projection settings\nmodel = model/vae.ckpt\ninput = data/test/good/0000.pgm\nout = cfg-out\nalpha = 0.02\nmax-iters = 3\nstop = max-iters\n",
    )
    .unwrap();
    ok(d.path(), &["project", "--config", "run.cfg"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("cfg-out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "project");
    assert_eq!(manifest["config"]["energy"]["alpha"], 0.02);
    assert_eq!(manifest["config"]["energy"]["max_iters"], 3);

    ok(d.path(), &["project", "--config", "run.cfg", "--max-iters", "2", "--out", "flag-out"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("flag-out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["energy"]["max_iters"], 2);

    fs::write(d.path().join("bad.cfg"), "model = model/vae.ckpt\nfrobnicate = 3\n").unwrap();
    let out = gradrecon(d.path(), &["project", "--config", "bad.cfg", "--data", "data", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("frobnicate"));
}

#[test]
fn diverging_training_reports_partial_history() {
    let d = tempdir().unwrap();
    tiny_setup(d.path());
    let out = gradrecon(d.path(), &[
        "train", "--data", "data", "--out", "nan/m.ckpt", "--lr", "1e30", "--epochs", "5", "--latent-dim", "4",
        "--conv-channels", "4,4",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kind=train"), "{}", stderr(&out));
    assert!(!d.path().join("nan/m.ckpt").exists());
    let rows = read_csv(&d.path().join("nan/m.loss.csv"));
    assert_eq!(rows[0], ["epoch", "mean_loss", "mean_Lr", "mean_LKL"]);
    assert!(rows.len() < 7);
}

#[test]
fn full_pipeline_is_byte_identical_on_rerun() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    full_pipeline(a.path());
    full_pipeline(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs between runs");
    }
    for k in ["eval/aggregate.csv", "scores/scores.csv", "conv/convergence.csv", "inp/inpaint.csv"] {
        assert!(sa.contains_key(k), "{k} missing");
    }
}
