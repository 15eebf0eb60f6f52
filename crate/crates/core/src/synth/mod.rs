//! Deterministic synthetic textures with injected defects and exact masks.
//!
//! Every pixel value is a multiple of 1/255, so images survive an 8-bit
//! PGM round trip unchanged, and generation uses only basic arithmetic, so
//! the same seed gives the same bytes on every platform.

mod dataset;

pub use dataset::{load_dataset, save_dataset, DatasetMeta, LoadedDataset, LoadedImage};

use crate::io::{byte_to_unit, unit_to_byte};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("defect of size {size} does not fit a {height}x{width} image")]
    DefectTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $s),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {} `{s}`", stringify!($name)))
            }
        }
    };
}

named_enum!(TextureKind {
    Grid => "grid",
    Stripes => "stripes",
    Checker => "checker",
});

named_enum!(DefectKind {
    SquarePatch => "square-patch",
    LineScratch => "line-scratch",
    NoiseBlob => "noise-blob",
});

named_enum!(MaskKind {
    Rectangle => "rectangle",
    RandomBlob => "random-blob",
});

/// Right-angle rotation, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];
}

/// Where a synthetic image came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub texture: TextureKind,
    pub defect: Option<DefectKind>,
    pub seed: u64,
}

/// An image `[C,H,W]` in `[0,1]` with its `[H,W]` ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub provenance: Option<Provenance>,
}

impl LabeledImage {
    pub fn is_anomalous(&self) -> bool {
        self.mask.data().iter().any(|&v| v > 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub texture: TextureKind,
    /// Square image side.
    pub size: usize,
    pub train_normal: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    /// Cycled through over the anomalous test images.
    pub defect_kinds: Vec<DefectKind>,
    /// Inclusive range of defect extent (side, length or diameter) in pixels.
    pub defect_size: (usize, usize),
    /// Apply random right-angle rotation and wrap-around shift to training images.
    pub augment: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    /// 64×64 grid, 500 train, 50 + 50 test, all three defect kinds.
    fn default() -> Self {
        DatasetConfig {
            texture: TextureKind::Grid,
            size: 64,
            train_normal: 500,
            test_normal: 50,
            test_anomalous: 50,
            defect_kinds: DefectKind::ALL.to_vec(),
            defect_size: (6, 14),
            augment: true,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Config(m.into()));
        if self.size < 8 {
            return err("image size must be at least 8");
        }
        if self.train_normal == 0 || self.test_normal == 0 || self.test_anomalous == 0 {
            return err("all image counts must be at least 1");
        }
        if self.defect_kinds.is_empty() {
            return err("at least one defect kind is required");
        }
        let (lo, hi) = self.defect_size;
        if lo == 0 || lo > hi || hi >= self.size {
            return err("defect size range must satisfy 1 <= min <= max < image size");
        }
        Ok(())
    }
}

/// Train set (all normal) and test set (normal first, then anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// Seed of item `index` in `stream`, derived from `seed` by SplitMix64 mixing.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ stream) ^ index)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn quantize(v: f64) -> f32 {
    byte_to_unit(unit_to_byte(v)) as f32
}

const PERIOD: f64 = 8.0;
/// Line and cell offsets sit at `PERIOD / 2 ± PHASE_JITTER`; the centre is
/// fixed under right-angle rotations of images whose size is a multiple of
/// the period.
const PHASE_JITTER: f64 = 1.0;
/// Random training shifts are multiples of this many pixels.
const SHIFT_STEP: usize = 2 * PERIOD as usize;

/// Coverage of a line of half-width `half` centred on `phase + k·period`
/// at coordinate `u`, with a one-pixel linear ramp.
fn line_coverage(u: f64, phase: f64, half: f64) -> f64 {
    let t = (u - phase).rem_euclid(PERIOD);
    let d = t.min(PERIOD - t);
    (half + 0.5 - d).clamp(0.0, 1.0)
}

/// A `[1, size, size]` texture; the seed jitters phase, contrast and grain.
pub fn generate_texture(kind: TextureKind, size: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let py = PERIOD / 2.0 + r.gen_range(-PHASE_JITTER..PHASE_JITTER);
    let px = PERIOD / 2.0 + r.gen_range(-PHASE_JITTER..PHASE_JITTER);
    let bg: f64 = r.gen_range(0.15..0.3);
    let fg: f64 = r.gen_range(0.7..0.85);
    let grain: Vec<f64> = (0..size * size).map(|_| r.gen_range(-0.02..0.02)).collect();
    Tensor::from_fn(&[1, size, size], |i| {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        let cov = match kind {
            TextureKind::Grid => line_coverage(y, py, 1.0).max(line_coverage(x, px, 1.0)),
            TextureKind::Stripes => line_coverage(y, py, 1.5),
            TextureKind::Checker => {
                let a = ((y - py) / PERIOD).floor() as i64;
                let b = ((x - px) / PERIOD).floor() as i64;
                ((a + b).rem_euclid(2)) as f64
            }
        };
        quantize(bg + (fg - bg) * cov + grain[i])
    })
}

/// Alters a region of `image` and returns it with the region's mask. Pixels
/// outside the mask are untouched.
pub fn inject_defect(
    image: &Tensor<f32>,
    kind: DefectKind,
    size: usize,
    seed: u64,
) -> Result<LabeledImage, SynthError> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(SynthError::Config(format!(
                "expected a [C,H,W] image, got {:?}",
                image.shape()
            )))
        }
    };
    if size == 0 || size >= h || size >= w {
        return Err(SynthError::DefectTooLarge {
            size,
            height: h,
            width: w,
        });
    }
    let mut r = rng(seed);
    let mut mask = vec![false; h * w];
    let mut out = image.clone();
    let plane = h * w;
    match kind {
        DefectKind::SquarePatch => {
            let (y0, x0) = (r.gen_range(0..=h - size), r.gen_range(0..=w - size));
            let fill = quantize(r.gen_range(0.0..1.0));
            for y in y0..y0 + size {
                for x in x0..x0 + size {
                    mask[y * w + x] = true;
                    for ch in 0..c {
                        out.data_mut()[ch * plane + y * w + x] = fill;
                    }
                }
            }
        }
        DefectKind::LineScratch => {
            const DIRS: [(i64, i64); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];
            let value = quantize(r.gen_range(0.0..1.0));
            let thick = r.gen_range(1..=2i64);
            let (mut y, mut x) = (r.gen_range(0..h) as i64, r.gen_range(0..w) as i64);
            let mut dir = r.gen_range(0..8usize);
            for _ in 0..size {
                for t in 0..thick {
                    let (yy, xx) = if DIRS[dir].0 == 0 { (y + t, x) } else { (y, x + t) };
                    if (0..h as i64).contains(&yy) && (0..w as i64).contains(&xx) {
                        let p = yy as usize * w + xx as usize;
                        mask[p] = true;
                        for ch in 0..c {
                            out.data_mut()[ch * plane + p] = value;
                        }
                    }
                }
                // Random walk: occasionally turn by 45 degrees.
                if r.gen_bool(0.3) {
                    dir = if r.gen_bool(0.5) { (dir + 1) % 8 } else { (dir + 7) % 8 };
                }
                y = (y + DIRS[dir].0).clamp(0, h as i64 - 1);
                x = (x + DIRS[dir].1).clamp(0, w as i64 - 1);
            }
        }
        DefectKind::NoiseBlob => {
            let ry = r.gen_range(size as f64 / 4.0..=size as f64 / 2.0);
            let rx = r.gen_range(size as f64 / 4.0..=size as f64 / 2.0);
            let cy = r.gen_range(ry..=h as f64 - ry);
            let cx = r.gen_range(rx..=w as f64 - rx);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                    if u * u + v * v <= 1.0 {
                        mask[y * w + x] = true;
                        for ch in 0..c {
                            out.data_mut()[ch * plane + y * w + x] = quantize(r.gen_range(0.0..1.0));
                        }
                    }
                }
            }
        }
    }
    Ok(LabeledImage {
        image: out,
        mask: Tensor::from_fn(&[h, w], |i| if mask[i] { 1.0 } else { 0.0 }),
        provenance: None,
    })
}

/// Rotates each `[H,W]` plane by a right angle, then shifts it with
/// wrap-around by `(dy, dx)`. A pure pixel permutation.
pub fn augment(image: &Tensor<f32>, rotation: Rotation, offset: (usize, usize)) -> Tensor<f32> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => panic!("augment expects an image, got {:?}", image.shape()),
    };
    let (oh, ow) = match rotation {
        Rotation::R0 | Rotation::R180 => (h, w),
        Rotation::R90 | Rotation::R270 => (w, h),
    };
    let d = image.data();
    let mut out = Vec::with_capacity(d.len());
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let (ry, rx) = ((y + oh - offset.0 % oh) % oh, (x + ow - offset.1 % ow) % ow);
                let (sy, sx) = match rotation {
                    Rotation::R0 => (ry, rx),
                    Rotation::R90 => (rx, w - 1 - ry),
                    Rotation::R180 => (h - 1 - ry, w - 1 - rx),
                    Rotation::R270 => (h - 1 - rx, ry),
                };
                out.push(d[ch * h * w + sy * w + sx]);
            }
        }
    }
    let shape = if image.rank() == 2 { vec![oh, ow] } else { vec![c, oh, ow] };
    Tensor::from_raw(shape, out)
}

/// Random right-angle rotation and wrap-around shift drawn from `seed`;
/// shifts are multiples of twice the texture period.
pub fn random_augment(image: &Tensor<f32>, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let rot = Rotation::ALL[r.gen_range(0..4)];
    let (h, w) = (image.shape()[image.rank() - 2], image.shape()[image.rank() - 1]);
    let shift = |r: &mut ChaCha8Rng, n: usize| r.gen_range(0..n.div_ceil(SHIFT_STEP)) * SHIFT_STEP;
    let offset = (shift(&mut r, h), shift(&mut r, w));
    augment(image, rot, offset)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_TEST_NORMAL: u64 = 2;
const STREAM_TEST_DEFECT: u64 = 3;
const STREAM_DEFECT: u64 = 4;
const STREAM_AUGMENT: u64 = 5;

/// Builds the full dataset described by `cfg`.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let s = cfg.size;
    let normal = |stream: u64, i: usize| {
        let seed = derive_seed(cfg.seed, stream, i as u64);
        (generate_texture(cfg.texture, s, seed), seed)
    };
    let blank = || Tensor::zeros(&[s, s]);
    let mut train = Vec::with_capacity(cfg.train_normal);
    for i in 0..cfg.train_normal {
        let (mut img, seed) = normal(STREAM_TRAIN, i);
        if cfg.augment {
            img = random_augment(&img, derive_seed(cfg.seed, STREAM_AUGMENT, i as u64));
        }
        train.push(LabeledImage {
            image: img,
            mask: blank(),
            provenance: Some(Provenance {
                texture: cfg.texture,
                defect: None,
                seed,
            }),
        });
    }
    let mut test = Vec::with_capacity(cfg.test_normal + cfg.test_anomalous);
    for i in 0..cfg.test_normal {
        let (img, seed) = normal(STREAM_TEST_NORMAL, i);
        test.push(LabeledImage {
            image: img,
            mask: blank(),
            provenance: Some(Provenance {
                texture: cfg.texture,
                defect: None,
                seed,
            }),
        });
    }
    for i in 0..cfg.test_anomalous {
        let (img, seed) = normal(STREAM_TEST_DEFECT, i);
        let kind = cfg.defect_kinds[i % cfg.defect_kinds.len()];
        let dseed = derive_seed(cfg.seed, STREAM_DEFECT, i as u64);
        let size = rng(dseed).gen_range(cfg.defect_size.0..=cfg.defect_size.1);
        let mut li = inject_defect(&img, kind, size, dseed)?;
        li.provenance = Some(Provenance {
            texture: cfg.texture,
            defect: Some(kind),
            seed,
        });
        test.push(li);
    }
    Ok(Dataset { train, test })
}

/// A binary `[H,W]` mask covering about `coverage` of the image.
///
/// Rectangles get a random aspect ratio in `[1/2, 2]`; blobs grow from a
/// random seed pixel by random frontier expansion to the exact pixel count.
pub fn make_inpainting_mask(
    shape: (usize, usize),
    kind: MaskKind,
    coverage: f64,
    seed: u64,
) -> Result<Tensor<f32>, SynthError> {
    let (h, w) = shape;
    if !(coverage > 0.0 && coverage <= 0.5) {
        return Err(SynthError::Config(format!("coverage {coverage} outside (0, 0.5]")));
    }
    if h == 0 || w == 0 {
        return Err(SynthError::Config("empty mask shape".into()));
    }
    let mut r = rng(seed);
    let target = ((coverage * (h * w) as f64).round() as usize).max(1);
    let mut mask = vec![false; h * w];
    match kind {
        MaskKind::Rectangle => {
            let aspect: f64 = r.gen_range(0.5..=2.0);
            let rw = ((target as f64 * aspect).sqrt().round() as usize).clamp(1, w);
            let rh = ((target as f64 / rw as f64).round() as usize).clamp(1, h);
            let (y0, x0) = (r.gen_range(0..=h - rh), r.gen_range(0..=w - rw));
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    mask[y * w + x] = true;
                }
            }
        }
        MaskKind::RandomBlob => {
            let start = r.gen_range(0..h * w);
            mask[start] = true;
            let mut frontier = Vec::new();
            let mut in_frontier = vec![false; h * w];
            let mut push_neighbours = |p: usize, frontier: &mut Vec<usize>, mask: &[bool]| {
                let (y, x) = (p / w, p % w);
                let mut add = |q: usize| {
                    if !mask[q] && !in_frontier[q] {
                        in_frontier[q] = true;
                        frontier.push(q);
                    }
                };
                if y > 0 {
                    add(p - w);
                }
                if y + 1 < h {
                    add(p + w);
                }
                if x > 0 {
                    add(p - 1);
                }
                if x + 1 < w {
                    add(p + 1);
                }
            };
            push_neighbours(start, &mut frontier, &mask);
            let mut count = 1;
            while count < target && !frontier.is_empty() {
                let k = r.gen_range(0..frontier.len());
                let p = frontier.swap_remove(k);
                mask[p] = true;
                count += 1;
                push_neighbours(p, &mut frontier, &mask);
            }
        }
    }
    Ok(Tensor::from_fn(&[h, w], |i| if mask[i] { 1.0 } else { 0.0 }))
}

/// Replaces masked pixels (all channels) with uniform noise.
pub fn corrupt(image: &Tensor<f32>, mask: &Tensor<f32>, seed: u64) -> Tensor<f32> {
    let plane = mask.len();
    let mut r = rng(seed);
    let mut out = image.clone();
    let channels = image.len() / plane;
    for ch in 0..channels {
        for p in 0..plane {
            if mask.data()[p] > 0.5 {
                out.data_mut()[ch * plane + p] = quantize(r.gen_range(0.0..1.0));
            }
        }
    }
    out
}
