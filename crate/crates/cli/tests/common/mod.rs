#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_gradrecon"))
}

/// Runs the binary with `dir` as working directory.
pub fn gradrecon(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).output().expect("binary runs")
}

/// Like [`gradrecon`], panicking with stderr unless the exit code is 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = gradrecon(dir, args);
    assert!(
        out.status.success(),
        "gradrecon {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A tiny dataset and a two-epoch VAE in `dir/data` and `dir/model`.
pub fn tiny_setup(dir: &Path) {
    ok(dir, &[
        "make-data", "--out", "data", "--size", "16", "--train", "8", "--test-normal", "2",
        "--test-anomalous", "3", "--defect-min", "3", "--defect-max", "5", "--seed", "3",
    ]);
    ok(dir, &[
        "train", "--data", "data", "--out", "model/vae.ckpt", "--epochs", "2", "--lr", "1e-3",
        "--batch-size", "4", "--latent-dim", "4", "--conv-channels", "4,4", "--seed", "3",
    ]);
}

/// Every command once, on the tiny setup.
pub fn full_pipeline(dir: &Path) {
    tiny_setup(dir);
    ok(dir, &[
        "project", "--model", "model/vae.ckpt", "--data", "data", "--out", "proj", "--stop", "max-iters",
        "--max-iters", "15", "--alpha", "0.05", "--snapshot-every", "5",
    ]);
    ok(dir, &["evaluate", "--data", "data", "--projections", "proj", "--out", "eval"]);
    ok(dir, &[
        "inpaint", "--model", "model/vae.ckpt", "--input", "data/test/defect/0000.pgm", "--mask",
        "data/ground_truth/defect/0000_mask.pgm", "--truth", "data/test/good/0000.pgm", "--out", "inp",
        "--stop", "max-iters", "--max-iters", "10",
    ]);
    ok(dir, &[
        "inpaint", "--model", "model/vae.ckpt", "--input", "data/test/defect/0001.pgm", "--blind",
        "--out", "inp-blind", "--stop", "max-iters", "--max-iters", "10",
    ]);
    ok(dir, &[
        "compare-scores", "--model", "model/vae.ckpt", "--data", "data", "--out", "scores", "--stop",
        "max-iters", "--max-iters", "10",
    ]);
    ok(dir, &[
        "convergence", "--model", "model/vae.ckpt", "--data", "data", "--out", "conv", "--max-iters", "10",
        "--snapshot-every", "5", "--alpha", "0.05",
    ]);
}
