//! Adam training of a [`ModelBundle`] and the loss threshold derived from it.

use crate::autodiff::{Bindings, Tape};
use crate::element::Element;
use crate::models::{
    build_model_graph, quantile_sorted, LatentMode, ModelBundle, ModelError, TrainingMetadata,
};
use crate::parallel::{map_indexed, Parallelism};
use crate::synth::derive_seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("parameter `{name}`: gradient shape {grad:?} does not match {param:?}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("non-finite loss in epoch {epoch} (sample {sample})")]
    NonFinite {
        epoch: usize,
        sample: usize,
        /// Completed epochs before the failure.
        history: Vec<EpochStats>,
    },
    #[error("{0}")]
    Model(#[from] ModelError),
}

/// Moment estimates of Adam for a set of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<E: Element = f32> {
    pub m: BTreeMap<String, Tensor<E>>,
    pub v: BTreeMap<String, Tensor<E>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<E: Element> AdamState<E> {
    /// Zero moments shaped like `params`; β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &BTreeMap<String, Tensor<E>>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// State for a single unnamed tensor (stored under the empty name).
    pub fn for_tensor(t: &Tensor<E>) -> Self {
        let mut p = BTreeMap::new();
        p.insert(String::new(), Tensor::zeros(t.shape()));
        Self::new(&p)
    }
}

/// In-place Adam update of one tensor with bias-corrected moments.
/// `t` is the already-incremented step count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adam_update<E: Element>(
    param: &mut [E],
    grad: &[E],
    m: &mut [E],
    v: &mut [E],
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].to_f64();
        let mi = beta1 * m[i].to_f64() + (1.0 - beta1) * g;
        let vi = beta2 * v[i].to_f64() + (1.0 - beta2) * g * g;
        m[i] = E::from_f64(mi);
        v[i] = E::from_f64(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        param[i] = E::from_f64(param[i].to_f64() - step);
    }
}

/// One Adam step over every parameter that has a gradient.
pub fn adam_step<E: Element>(
    params: &mut BTreeMap<String, Tensor<E>>,
    grads: &BTreeMap<String, Tensor<E>>,
    state: &mut AdamState<E>,
    lr: f64,
) -> Result<(), TrainError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TrainError::Config(format!("learning rate {lr} must be finite and >= 0")));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| TrainError::Config(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(TrainError::ShapeMismatch {
                name: name.clone(),
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        adam_update(
            p.data_mut(),
            g.data(),
            m.data_mut(),
            v.data_mut(),
            state.t,
            state.beta1,
            state.beta2,
            state.eps,
            lr,
        );
    }
    Ok(())
}

/// Training hyperparameters. The loss is the one of the model's variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 16,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean losses over the samples of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_loss_r: f64,
    pub mean_loss_kl: f64,
}

const STREAM_SHUFFLE: u64 = 101;
const STREAM_NOISE: u64 = 102;

struct SampleResult<E: Element> {
    grads: BTreeMap<String, Tensor<E>>,
    total: f64,
    loss_r: f64,
    loss_kl: f64,
}

/// Trains `model` on `images` (each `[C,H,W]`), returning the trained model
/// and one [`EpochStats`] per epoch.
pub fn fit<E: Element>(
    model: ModelBundle<E>,
    images: &[Tensor<E>],
    cfg: &TrainConfig,
) -> Result<(ModelBundle<E>, Vec<EpochStats>), TrainError> {
    fit_with(model, images, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<E: Element>(
    mut model: ModelBundle<E>,
    images: &[Tensor<E>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelBundle<E>, Vec<EpochStats>), TrainError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batched: Vec<Tensor<E>> = images
        .iter()
        .map(|x| {
            let s = model.check_input(x)?;
            Ok(x.clone().reshape(&s).expect("same length"))
        })
        .collect::<Result<_, ModelError>>()?;
    let variational = model.variant.is_variational();
    let mode = if variational { LatentMode::Sampled } else { LatentMode::Mean };
    let mg = build_model_graph(&model.arch, model.variant, mode)?;
    let l = model.latent_dim();
    let names: Vec<String> = model.params.keys().cloned().collect();
    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_r, mut sum_kl) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results = map_indexed(chunk, cfg.parallelism, |k, &idx| {
                let position = (b * cfg.batch_size + k) as u64;
                let noise = variational.then(|| {
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(
                        derive_seed(cfg.seed, STREAM_NOISE, epoch as u64),
                        0,
                        position,
                    ));
                    Tensor::<E>::from_fn(&[1, l], |_| {
                        E::from_f64(StandardNormal.sample(&mut r))
                    })
                });
                let mut bind = Bindings::new();
                model.bind_params(&mut bind);
                bind.bind("x", &batched[idx]);
                if let Some(n) = &noise {
                    bind.bind("noise", n);
                }
                let mut tape = Tape::new(&mg.graph);
                tape.forward(&bind)?;
                let total = tape.scalar(mg.total)?;
                let loss_r = tape.scalar(mg.loss_r)?;
                let loss_kl = match mg.loss_kl {
                    Some(id) => tape.scalar(id)?,
                    None => 0.0,
                };
                let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
                let grads = tape.backward_wrt(mg.total, &refs)?.into_map();
                Ok::<_, ModelError>(SampleResult {
                    grads,
                    total,
                    loss_r,
                    loss_kl,
                })
            });
            let mut acc: Option<BTreeMap<String, Tensor<E>>> = None;
            for (k, r) in results.into_iter().enumerate() {
                let r = r?;
                let grads_finite = r.grads.values().all(|g| g.all_finite());
                if !r.total.is_finite() || !grads_finite {
                    return Err(TrainError::NonFinite {
                        epoch,
                        sample: chunk[k],
                        history,
                    });
                }
                sum_total += r.total;
                sum_r += r.loss_r;
                sum_kl += r.loss_kl;
                match acc.as_mut() {
                    None => acc = Some(r.grads),
                    Some(a) => {
                        for (name, g) in r.grads {
                            let t = a.get_mut(&name).expect("same parameter set");
                            for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = E::from_f64(1.0 / chunk.len() as f64);
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(&mut model.params, &grads, &mut adam, cfg.learning_rate)?;
        }
        let n = images.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: sum_total / n,
            mean_loss_r: sum_r / n,
            mean_loss_kl: sum_kl / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }

    let losses = reconstruction_losses(&model, &batched, cfg.parallelism)?;
    if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite {
            epoch: cfg.epochs,
            sample: i,
            history,
        });
    }
    let final_mean = history.last().map(|h| h.mean_loss).unwrap_or(f64::NAN);
    model.metadata = TrainingMetadata::from_losses(cfg.epochs, &losses, final_mean);
    Ok((model, history))
}

/// Deterministic `L_r` (latent = encoder mean) of every image.
pub fn reconstruction_losses<E: Element>(
    model: &ModelBundle<E>,
    images: &[Tensor<E>],
    parallelism: Parallelism,
) -> Result<Vec<f64>, ModelError> {
    let mg = build_model_graph(&model.arch, model.variant, LatentMode::Mean)?;
    map_indexed(images, parallelism, |_, x| {
        let s = model.check_input(x)?;
        let xb = x.clone().reshape(&s).expect("same length");
        let mut bind = Bindings::new();
        model.bind_params(&mut bind);
        bind.bind("x", &xb);
        let mut tape = Tape::new(&mg.graph);
        tape.forward(&bind)?;
        Ok(tape.scalar(mg.loss_r)?)
    })
    .into_iter()
    .collect()
}

/// Empirical `q`-quantile of the stored per-sample training `L_r`
/// (linear interpolation; `q = 0` is the minimum).
pub fn loss_threshold<E: Element>(model: &ModelBundle<E>, q: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(ModelError::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    if !model.metadata.has_statistics() {
        return Err(ModelError::MissingStatistics);
    }
    Ok(quantile_sorted(&model.metadata.loss_r_sorted, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> BTreeMap<String, Tensor<f64>> {
        let mut m = BTreeMap::new();
        m.insert(name.to_string(), Tensor::scalar(v));
        m
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = one("w", 0.7);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &one("w", 0.0), &mut s, 0.1).unwrap();
        assert_eq!(p["w"].data()[0], 0.7);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", 1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &one("w", -3.0), &mut s, 0.01).unwrap();
        assert!((p["w"].data()[0] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = one("w", 1.0);
        let mut s = AdamState::new(&p);
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::<f64>::zeros(&[2]));
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, 0.1),
            Err(TrainError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn two_step_recurrence() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
        let gs = [0.5, -2.0];
        let (mut w, mut m, mut v) = (0.3f64, 0.0, 0.0);
        for (k, g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = one("w", 0.3);
        let mut s = AdamState::new(&p);
        for g in gs {
            adam_step(&mut p, &one("w", g), &mut s, lr).unwrap();
        }
        assert!((p["w"].data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
