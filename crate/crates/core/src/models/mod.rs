//! Autoencoder variants: architecture, parameters, graphs and losses.

mod arch;
mod graph;

pub use arch::{ArchitectureSpec, ConvLayer};
pub use graph::{build_model_graph, LatentMode, ModelGraph};
pub(crate) use graph::build_on;

use crate::autodiff::{AutodiffError, Bindings, Tape};
use crate::element::Element;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("expected input of shape {expected:?}, got {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("parameter `{name}`: {detail}")]
    Parameter { name: String, detail: String },
    #[error("{0} has no latent distribution")]
    NotVariational(Variant),
    #[error("model has no training statistics")]
    MissingStatistics,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "l2ae")]
    L2AE,
    #[serde(rename = "dsae")]
    DSAE,
    #[serde(rename = "vae")]
    VAE,
    #[serde(rename = "gamma-vae")]
    GammaVAE,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::L2AE, Variant::DSAE, Variant::VAE, Variant::GammaVAE];

    /// VAE and γ-VAE encode to a Gaussian and carry a KL term.
    pub fn is_variational(self) -> bool {
        matches!(self, Variant::VAE | Variant::GammaVAE)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::L2AE => "l2ae",
            Variant::DSAE => "dsae",
            Variant::VAE => "vae",
            Variant::GammaVAE => "gamma-vae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected l2ae, dsae, vae or gamma-vae)"))
    }
}

/// Statistics of the per-sample reconstruction loss over the training set,
/// evaluated with the deterministic reconstruction after the last epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    /// Per-sample `L_r`, ascending.
    pub loss_r_sorted: Vec<f64>,
    pub loss_r_min: f64,
    /// `L_r` quantiles at q = 0.01, 0.02, ..., 1.00.
    pub loss_r_quantiles: Vec<f64>,
    pub final_mean_loss: f64,
}

impl TrainingMetadata {
    pub fn from_losses(epochs_run: usize, losses: &[f64], final_mean_loss: f64) -> Self {
        let mut sorted = losses.to_vec();
        sorted.sort_by(f64::total_cmp);
        let quantiles = (1..=100)
            .map(|k| quantile_sorted(&sorted, k as f64 / 100.0))
            .collect();
        TrainingMetadata {
            epochs_run,
            loss_r_min: sorted.first().copied().unwrap_or(f64::NAN),
            loss_r_sorted: sorted,
            loss_r_quantiles: quantiles,
            final_mean_loss,
        }
    }

    pub fn has_statistics(&self) -> bool {
        !self.loss_r_sorted.is_empty()
    }
}

/// Linear interpolation between order statistics at `h = (n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `q(z|x)` for the variational variants; `logvar` is `None` for the
/// deterministic ones, whose encoder output is the latent point itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution<E: Element = f32> {
    pub mu: Tensor<E>,
    pub logvar: Option<Tensor<E>>,
}

/// Mean image of `p(x|z)` plus the scalar decoder variance for γ-VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedDistribution<E: Element = f32> {
    pub mean: Tensor<E>,
    pub gamma: Option<f64>,
}

/// Scalar loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub loss_r: f64,
    pub loss_kl: f64,
}

/// A model: variant, architecture, named parameters and training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<E: Element = f32> {
    pub variant: Variant,
    pub arch: ArchitectureSpec,
    pub params: BTreeMap<String, Tensor<E>>,
    pub metadata: TrainingMetadata,
}

impl<E: Element> ModelBundle<E> {
    /// Fresh parameters: weights uniform in ±√(6/fan_in), zero biases,
    /// `log_gamma = 0`.
    pub fn init(variant: Variant, arch: ArchitectureSpec, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for p in arch.parameter_specs(variant) {
            let t = match p.fan_in {
                Some(fan_in) => {
                    let bound = (6.0 / fan_in).sqrt();
                    Tensor::from_fn(&p.shape, |_| E::from_f64(rng.gen_range(-bound..bound)))
                }
                None => Tensor::zeros(&p.shape),
            };
            params.insert(p.name, t);
        }
        Ok(ModelBundle {
            variant,
            arch,
            params,
            metadata: TrainingMetadata::default(),
        })
    }

    /// Assembles a bundle from loaded parts, checking every parameter.
    pub fn from_parts(
        variant: Variant,
        arch: ArchitectureSpec,
        params: BTreeMap<String, Tensor<E>>,
        metadata: TrainingMetadata,
    ) -> Result<Self, ModelError> {
        let m = ModelBundle {
            variant,
            arch,
            params,
            metadata,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every expected parameter present with the expected shape, no extras,
    /// finite statistics.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.arch.validate()?;
        let specs = self.arch.parameter_specs(self.variant);
        for p in &specs {
            let t = self.params.get(&p.name).ok_or_else(|| ModelError::Parameter {
                name: p.name.clone(),
                detail: "missing".into(),
            })?;
            if t.shape() != p.shape.as_slice() {
                return Err(ModelError::Parameter {
                    name: p.name.clone(),
                    detail: format!("shape {:?}, expected {:?}", t.shape(), p.shape),
                });
            }
        }
        if let Some(extra) = self
            .params
            .keys()
            .find(|k| !specs.iter().any(|p| &p.name == *k))
        {
            return Err(ModelError::Parameter {
                name: extra.clone(),
                detail: "not part of the architecture".into(),
            });
        }
        let md = &self.metadata;
        if md.has_statistics() {
            let finite = md.loss_r_sorted.iter().chain(&md.loss_r_quantiles).all(|v| v.is_finite());
            if !finite || md.loss_r_quantiles.iter().any(|&q| q < md.loss_r_min) {
                return Err(ModelError::InvalidArgument(
                    "training statistics are not finite or not ordered".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input_shape()
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Decoder variance γ = exp(log γ) for γ-VAE.
    pub fn gamma(&self) -> Option<f64> {
        self.params.get("log_gamma").map(|t| t.data()[0].to_f64().exp())
    }

    /// Binds every parameter under its name.
    pub fn bind_params<'b>(&'b self, bindings: &mut Bindings<'b, E>) {
        for (k, v) in &self.params {
            bindings.bind(k, v);
        }
    }

    /// Accepts `[C,H,W]` or `[1,C,H,W]`; returns the batched shape.
    pub fn check_input(&self, x: &Tensor<E>) -> Result<Vec<usize>, ModelError> {
        let [c, h, w] = self.input_shape();
        let ok = match x.shape() {
            [a, b, d] => [*a, *b, *d] == [c, h, w],
            [1, a, b, d] => [*a, *b, *d] == [c, h, w],
            _ => false,
        };
        if !ok {
            return Err(ModelError::InputShape {
                expected: vec![c, h, w],
                actual: x.shape().to_vec(),
            });
        }
        Ok(vec![1, c, h, w])
    }

    fn batched(&self, x: &Tensor<E>) -> Result<Tensor<E>, ModelError> {
        let shape = self.check_input(x)?;
        Ok(x.clone().reshape(&shape).expect("same length"))
    }

    /// Encoder output for one image.
    pub fn encode(&self, x: &Tensor<E>) -> Result<LatentDistribution<E>, ModelError> {
        let xb = self.batched(x)?;
        let mg = build_model_graph(&self.arch, self.variant, LatentMode::Mean)?;
        let mut b = Bindings::new();
        self.bind_params(&mut b);
        b.bind("x", &xb);
        let mut tape = Tape::new(&mg.graph);
        tape.forward(&b)?;
        let l = self.latent_dim();
        let mu = tape.value(mg.mu)?.clone().reshape(&[l]).expect("latent length");
        let logvar = match mg.logvar {
            Some(id) => Some(tape.value(id)?.clone().reshape(&[l]).expect("latent length")),
            None => None,
        };
        Ok(LatentDistribution { mu, logvar })
    }

    /// Decoder mean for one latent point of length `l`.
    pub fn decode(&self, z: &Tensor<E>) -> Result<DecodedDistribution<E>, ModelError> {
        let l = self.latent_dim();
        if z.len() != l {
            return Err(ModelError::InvalidArgument(format!(
                "latent has {} entries, expected {l}",
                z.len()
            )));
        }
        let zb = z.clone().reshape(&[1, l]).expect("latent length");
        let mut g = crate::autodiff::Graph::new();
        let zid = g.leaf("z", false);
        let out = graph::decoder(&mut g, &self.arch, zid, 1)?;
        let mut b = Bindings::new();
        self.bind_params(&mut b);
        b.bind("z", &zb);
        let mut tape = Tape::new(&g);
        tape.forward(&b)?;
        let [c, h, w] = self.input_shape();
        let mean = tape.value(out)?.clone().reshape(&[c, h, w]).expect("image shape");
        Ok(DecodedDistribution {
            mean,
            gamma: self.gamma(),
        })
    }

    /// Deterministic reconstruction: decode the encoder mean. Output is `[C,H,W]`.
    pub fn reconstruct(&self, x: &Tensor<E>) -> Result<Tensor<E>, ModelError> {
        let xb = self.batched(x)?;
        let mg = build_model_graph(&self.arch, self.variant, LatentMode::Mean)?;
        let mut b = Bindings::new();
        self.bind_params(&mut b);
        b.bind("x", &xb);
        let mut tape = Tape::new(&mg.graph);
        tape.forward(&b)?;
        let [c, h, w] = self.input_shape();
        Ok(tape.value(mg.recon)?.clone().reshape(&[c, h, w]).expect("image shape"))
    }

    /// `L`, `L_r` and `L_KL` for one image. Variational variants draw
    /// `z = μ + σ·noise`; `noise = None` uses `z = μ`.
    pub fn loss_terms(
        &self,
        x: &Tensor<E>,
        noise: Option<&Tensor<E>>,
    ) -> Result<LossTerms, ModelError> {
        let xb = self.batched(x)?;
        let l = self.latent_dim();
        let noise_b = match noise {
            Some(n) if self.variant.is_variational() => {
                if n.len() != l {
                    return Err(ModelError::InvalidArgument(format!(
                        "noise has {} entries, expected {l}",
                        n.len()
                    )));
                }
                Some(n.clone().reshape(&[1, l]).expect("latent length"))
            }
            _ => None,
        };
        let mode = if noise_b.is_some() {
            LatentMode::Sampled
        } else {
            LatentMode::Mean
        };
        let mg = build_model_graph(&self.arch, self.variant, mode)?;
        let mut b = Bindings::new();
        self.bind_params(&mut b);
        b.bind("x", &xb);
        if let Some(n) = &noise_b {
            b.bind("noise", n);
        }
        let mut tape = Tape::new(&mg.graph);
        tape.forward(&b)?;
        Ok(LossTerms {
            total: tape.scalar(mg.total)?,
            loss_r: tape.scalar(mg.loss_r)?,
            loss_kl: match mg.loss_kl {
                Some(id) => tape.scalar(id)?,
                None => 0.0,
            },
        })
    }

    pub fn cast<F: Element>(&self) -> ModelBundle<F> {
        ModelBundle {
            variant: self.variant,
            arch: self.arch.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Reparameterized sample `z = μ + exp(logvar/2)·noise`.
pub fn sample_latent<E: Element>(
    dist: &LatentDistribution<E>,
    noise: &Tensor<E>,
) -> Result<Tensor<E>, ModelError> {
    if noise.len() != dist.mu.len() {
        return Err(ModelError::InvalidArgument(format!(
            "noise has {} entries, expected {}",
            noise.len(),
            dist.mu.len()
        )));
    }
    let Some(logvar) = &dist.logvar else {
        return Ok(dist.mu.clone());
    };
    let half = E::from_f64(0.5);
    let data = dist
        .mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise.data())
        .map(|((&m, &lv), &n)| m + (lv * half).exp() * n)
        .collect();
    Ok(Tensor::from_raw(dist.mu.shape().to_vec(), data))
}

/// KL divergence of `N(μ, diag(exp(logvar)))` from `N(0, I)`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}
