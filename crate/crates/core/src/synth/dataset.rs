use super::{Dataset, DatasetConfig, LabeledImage, Provenance};
use crate::io::{read_image, read_mask, with_path, write_image, write_mask, IoError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: DatasetConfig,
    pub train: Vec<Provenance>,
    pub test: Vec<Provenance>,
}

fn image_name(i: usize) -> String {
    format!("{i:04}.pgm")
}

fn create_dir(p: &Path) -> Result<(), IoError> {
    with_path(p, std::fs::create_dir_all(p))
}

/// Writes `train/good`, `test/good`, `test/defect`, `ground_truth/defect`
/// and `meta.json` under `dir`. Returns the written files in write order.
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset, cfg: &DatasetConfig) -> Result<Vec<PathBuf>, IoError> {
    let dir = dir.as_ref();
    let sub = |s: &str| dir.join(s);
    for s in ["train/good", "test/good", "test/defect", "ground_truth/defect"] {
        create_dir(&sub(s))?;
    }
    let mut written = Vec::new();
    for (i, li) in data.train.iter().enumerate() {
        let p = sub("train/good").join(image_name(i));
        write_image(&p, &li.image)?;
        written.push(p);
    }
    let (mut n_good, mut n_defect) = (0, 0);
    for li in &data.test {
        if li.is_anomalous() {
            let p = sub("test/defect").join(image_name(n_defect));
            write_image(&p, &li.image)?;
            let m = sub("ground_truth/defect").join(format!("{n_defect:04}_mask.pgm"));
            write_mask(&m, &li.mask)?;
            written.push(p);
            written.push(m);
            n_defect += 1;
        } else {
            let p = sub("test/good").join(image_name(n_good));
            write_image(&p, &li.image)?;
            written.push(p);
            n_good += 1;
        }
    }
    let meta = DatasetMeta {
        config: cfg.clone(),
        train: data.train.iter().filter_map(|l| l.provenance.clone()).collect(),
        test: data.test.iter().filter_map(|l| l.provenance.clone()).collect(),
    };
    let p = dir.join("meta.json");
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    with_path(&p, std::fs::write(&p, json))?;
    written.push(p);
    Ok(written)
}

/// PGM/PPM files of a directory, sorted by name; empty if it does not exist.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = with_path(dir, std::fs::read_dir(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// A loaded image with the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub path: PathBuf,
    pub image: LabeledImage,
}

/// Reads a dataset directory in the layout written by [`save_dataset`].
///
/// Every `test/defect/NAME.pgm` needs `ground_truth/defect/NAME_mask.pgm`.
/// `meta.json` is optional, so exported third-party datasets load too.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset, IoError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(IoError::File {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        });
    }
    let normal = |p: PathBuf| -> Result<LoadedImage, IoError> {
        let image: Tensor<f32> = read_image(&p)?;
        let mask = Tensor::zeros(&image.shape()[1..]);
        Ok(LoadedImage {
            path: p,
            image: LabeledImage {
                image,
                mask,
                provenance: None,
            },
        })
    };
    let mut train = image_files(&dir.join("train/good"))?
        .into_iter()
        .map(normal)
        .collect::<Result<Vec<_>, _>>()?;
    let mut test = image_files(&dir.join("test/good"))?
        .into_iter()
        .map(normal)
        .collect::<Result<Vec<_>, _>>()?;
    for p in image_files(&dir.join("test/defect"))? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let m = dir.join("ground_truth/defect").join(format!("{stem}_mask.pgm"));
        if !m.is_file() {
            return Err(IoError::File {
                path: m.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing ground-truth mask"),
            });
        }
        let image: Tensor<f32> = read_image(&p)?;
        let mask: Tensor<f32> = read_mask(&m)?;
        if mask.shape() != &image.shape()[1..] {
            return Err(crate::io::malformed(
                "PNM",
                0,
                format!("{}: mask shape {:?} does not match image", m.display(), mask.shape()),
            ));
        }
        test.push(LoadedImage {
            path: p,
            image: LabeledImage {
                image,
                mask,
                provenance: None,
            },
        });
    }
    let meta_path = dir.join("meta.json");
    let meta = if meta_path.is_file() {
        let bytes = with_path(&meta_path, std::fs::read(&meta_path))?;
        Some(serde_json::from_slice::<DatasetMeta>(&bytes)?)
    } else {
        None
    };
    if let Some(m) = &meta {
        for (li, p) in train.iter_mut().zip(&m.train) {
            li.image.provenance = Some(p.clone());
        }
        for (li, p) in test.iter_mut().zip(&m.test) {
            li.image.provenance = Some(p.clone());
        }
    }
    Ok(LoadedDataset { train, test, meta })
}

/// A dataset read from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub train: Vec<LoadedImage>,
    /// Normal test images first, then defective ones.
    pub test: Vec<LoadedImage>,
    pub meta: Option<DatasetMeta>,
}

impl LoadedDataset {
    pub fn into_dataset(self) -> Dataset {
        Dataset {
            train: self.train.into_iter().map(|l| l.image).collect(),
            test: self.test.into_iter().map(|l| l.image).collect(),
        }
    }
}
