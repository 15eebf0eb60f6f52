//! Output directory bookkeeping: every written file is listed in
//! `manifest.json` together with the resolved command configuration.

use crate::error::{CliError, CliResult};
use gradrecon::io::{read_image, read_tensor, write_image, write_tensor};
use gradrecon::Tensor;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    files: &'a [String],
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Lists a file written by someone else (relative to the directory).
    pub fn note(&mut self, name: &str) {
        self.record(name);
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, data).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
        self.record(name);
        Ok(())
    }

    /// Writes a CSV file from a header and rows of already formatted fields.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let data = w.into_inner().map_err(|e| CliError::new("io", e.to_string()))?;
        self.bytes(name, &data)
    }

    /// `<stem>.tnsr` (exact) and `<stem>.pgm`/`.ppm` (8-bit preview).
    pub fn image(&mut self, stem: &str, img: &Tensor<f32>) -> CliResult<()> {
        let t = format!("{stem}.tnsr");
        write_tensor(self.path(&t), img)?;
        self.record(&t);
        let ext = if img.shape().first() == Some(&3) { "ppm" } else { "pgm" };
        let p = format!("{stem}.{ext}");
        write_image(self.path(&p), &img.map(|v| v.clamp(0.0, 1.0)))?;
        self.record(&p);
        Ok(())
    }

    pub fn tensor(&mut self, name: &str, t: &Tensor<f32>) -> CliResult<()> {
        write_tensor(self.path(name), t)?;
        self.record(name);
        Ok(())
    }

    /// Writes `manifest.json` last; it lists every file written before it.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> CliResult<()> {
        let m = Manifest { command, config, files: &self.files };
        let mut json = serde_json::to_vec_pretty(&m)?;
        json.push(b'\n');
        let p = self.path("manifest.json");
        std::fs::write(&p, json).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
        self.files.push("manifest.json".into());
        Ok(())
    }
}

/// Reads a PGM/PPM image or a TNSR tensor as `[C,H,W]`.
pub fn read_input(path: &Path) -> CliResult<Tensor<f32>> {
    if path.extension().and_then(|e| e.to_str()) == Some("tnsr") {
        let t: Tensor<f32> = read_tensor(path)?.into_tensor();
        return match *t.shape() {
            [h, w] => Ok(t.reshape(&[1, h, w]).expect("same length")),
            [_, _, _] => Ok(t),
            [1, c, h, w] => Ok(t.reshape(&[c, h, w]).expect("same length")),
            _ => Err(CliError::new("io", format!("{}: not an image tensor, shape {:?}", path.display(), t.shape()))),
        };
    }
    Ok(read_image(path)?)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
