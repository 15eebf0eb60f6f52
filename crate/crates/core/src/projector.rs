//! Projection of an image onto the normal manifold by gradient descent on
//! `E(x) = L_r(x) + λ‖x − x₀‖₁`, taken in input space.
//!
//! Three update rules share one energy: the plain step, a step restricted to
//! a known mask `Ω`, and a step weighted by the squared residual
//! `(x_t − f(x_t))²`. The gradient may feed a plain descent step or Adam.

use crate::autodiff::{AutodiffError, Bindings, Graph, NodeId, Tape};
use crate::element::Element;
use crate::models::{build_on, LatentMode, ModelBundle, ModelError};
use crate::parallel::{map_indexed, Parallelism};
use crate::tensor::Tensor;
use crate::trainer::{adam_update, AdamState};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("invalid energy configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stop criterion needs a loss threshold but the model has no training statistics")]
    MissingThreshold,
    #[error("non-finite energy at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        /// Trace up to, excluding, the failing iteration.
        trace: Box<ProjectionTrace<f64>>,
    },
    #[error("{0}")]
    Model(#[from] ModelError),
}

impl From<AutodiffError> for ProjectError {
    fn from(e: AutodiffError) -> Self {
        ProjectError::Model(e.into())
    }
}

/// Which pixels an iteration may change, and how strongly.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum UpdateMode {
    /// `x − α∇E`
    #[default]
    Standard,
    /// `x − α(∇E ⊙ Ω)` with a binary `[H,W]` or image-shaped mask.
    Masked(Tensor<f32>),
    /// `x − α(∇E ⊙ (x − f(x))²)`
    Weighted,
}

impl UpdateMode {
    pub fn name(&self) -> &'static str {
        match self {
            UpdateMode::Standard => "standard",
            UpdateMode::Masked(_) => "masked",
            UpdateMode::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputOptimizer {
    #[default]
    Plain,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCriterion {
    /// Stop once `L_r(x_t) < T`.
    LossThreshold(f64),
    /// Stop once the relative energy drop stayed below `tolerance` for
    /// `patience` consecutive iterations.
    EnergyConverged { tolerance: f64, patience: usize },
    /// Always run `max_iters` iterations.
    MaxIters,
}

impl StopCriterion {
    pub fn converged_default() -> Self {
        StopCriterion::EnergyConverged {
            tolerance: 1e-5,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ThresholdReached,
    Converged,
    MaxIters,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ThresholdReached => "threshold-reached",
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max-iters",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub mode: UpdateMode,
    pub optimizer: InputOptimizer,
    /// `None` stops at the minimum training loss of the model.
    pub stop: Option<StopCriterion>,
    pub clamp: bool,
    /// Keep `x_t` every this many iterations (and at `t = 0`).
    pub snapshot_every: Option<usize>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            alpha: 0.5,
            lambda: 0.05,
            max_iters: 500,
            mode: UpdateMode::Standard,
            optimizer: InputOptimizer::Plain,
            stop: None,
            clamp: true,
            snapshot_every: None,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<(), ProjectError> {
        let bad = |m: String| Err(ProjectError::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be finite and >= 0", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot interval must be at least 1".into());
        }
        if let UpdateMode::Masked(m) = &self.mode {
            check_binary(m)?;
        }
        match self.stop {
            Some(StopCriterion::LossThreshold(t)) if t.is_nan() => bad("loss threshold is NaN".into()),
            Some(StopCriterion::EnergyConverged { tolerance, patience }) if !(tolerance >= 0.0) || patience == 0 => {
                bad("energy convergence needs tolerance >= 0 and patience >= 1".into())
            }
            _ => Ok(()),
        }
    }

    /// The stop criterion with the default threshold filled in.
    pub fn resolved_stop<E: Element>(&self, model: &ModelBundle<E>) -> Result<StopCriterion, ProjectError> {
        match self.stop {
            Some(s) => Ok(s),
            None if model.metadata.has_statistics() => Ok(StopCriterion::LossThreshold(model.metadata.loss_r_min)),
            None => Err(ProjectError::MissingThreshold),
        }
    }
}

fn check_binary<E: Element>(m: &Tensor<E>) -> Result<(), ProjectError> {
    if m.data().iter().all(|v| *v == E::zero() || *v == E::one()) {
        Ok(())
    } else {
        Err(ProjectError::Config("mask must contain only 0 and 1".into()))
    }
}

/// One row of a projection trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: f64,
    pub loss_r: f64,
    pub l1_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTrace<E: Element = f32> {
    /// `x_N`, shaped like `x₀`.
    pub image: Tensor<E>,
    /// `f(x₀)`, shaped like `x₀`.
    pub initial_reconstruction: Tensor<E>,
    /// One record per iteration, `t = 0` included.
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<(usize, Tensor<E>)>,
    pub stop_reason: StopReason,
}

impl<E: Element> ProjectionTrace<E> {
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    fn cast<F: Element>(&self) -> ProjectionTrace<F> {
        ProjectionTrace {
            image: self.image.cast(),
            initial_reconstruction: self.initial_reconstruction.cast(),
            records: self.records.clone(),
            snapshots: self.snapshots.iter().map(|(t, s)| (*t, s.cast())).collect(),
            stop_reason: self.stop_reason,
        }
    }
}

/// The energy of one model at a fixed `λ`, built once and evaluated per
/// iterate. The latent is the encoder mean, so `E` is a function of `x_t`.
#[derive(Debug, Clone)]
pub struct EnergyGraph {
    graph: Graph,
    loss_r: NodeId,
    l1: NodeId,
    energy: NodeId,
    recon: NodeId,
}

/// Energy, its terms, `∇ₓE` and `f(x_t)` at one iterate; tensors are `[1,C,H,W]`.
#[derive(Debug, Clone)]
pub struct EnergyEval<E: Element> {
    pub energy: f64,
    pub loss_r: f64,
    pub l1_dist: f64,
    pub grad: Tensor<E>,
    pub recon: Tensor<E>,
}

impl EnergyGraph {
    pub fn new<E: Element>(model: &ModelBundle<E>, lambda: f64) -> Result<Self, ModelError> {
        let mut g = Graph::new();
        let x = g.leaf("x", true);
        let x0 = g.leaf("x0", false);
        let parts = build_on(&mut g, &model.arch, model.variant, LatentMode::Mean, x)?;
        let d = g.sub(x, x0);
        let a = g.abs(d);
        let l1 = g.sum(a);
        let reg = g.scale(l1, lambda);
        let energy = g.add(parts.loss_r, reg);
        Ok(EnergyGraph {
            graph: g,
            loss_r: parts.loss_r,
            l1,
            energy,
            recon: parts.recon,
        })
    }

    /// `x_t`, `x0` must be `[1,C,H,W]`.
    pub fn evaluate<E: Element>(
        &self,
        model: &ModelBundle<E>,
        x_t: &Tensor<E>,
        x0: &Tensor<E>,
    ) -> Result<EnergyEval<E>, ProjectError> {
        let mut b = Bindings::new();
        model.bind_params(&mut b);
        b.bind("x", x_t);
        b.bind("x0", x0);
        let mut tape = Tape::new(&self.graph);
        tape.forward(&b)?;
        let grad = tape
            .backward_wrt(self.energy, &["x"])?
            .take("x")
            .expect("gradient of x");
        Ok(EnergyEval {
            energy: tape.scalar(self.energy)?,
            loss_r: tape.scalar(self.loss_r)?,
            l1_dist: tape.scalar(self.l1)?,
            grad,
            recon: tape.value(self.recon)?.clone(),
        })
    }
}

fn batched<E: Element>(model: &ModelBundle<E>, x: &Tensor<E>) -> Result<Tensor<E>, ProjectError> {
    let s = model.check_input(x)?;
    Ok(x.clone().reshape(&s).expect("same length"))
}

fn same_shape<E: Element>(a: &Tensor<E>, b: &Tensor<E>, what: &str) -> Result<(), ProjectError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(ProjectError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// `L_r(x_t) + λ Σ|x_t − x₀|`.
pub fn energy<E: Element>(model: &ModelBundle<E>, x_t: &Tensor<E>, x0: &Tensor<E>, lambda: f64) -> Result<f64, ProjectError> {
    same_shape(x_t, x0, "x_t and x0")?;
    let eg = EnergyGraph::new(model, lambda)?;
    Ok(eg.evaluate(model, &batched(model, x_t)?, &batched(model, x0)?)?.energy)
}

/// `∇ₓE(x_t)`, shaped like `x_t`; the L¹ subgradient is 0 where `x_t = x₀`.
pub fn energy_grad<E: Element>(
    model: &ModelBundle<E>,
    x_t: &Tensor<E>,
    x0: &Tensor<E>,
    lambda: f64,
) -> Result<Tensor<E>, ProjectError> {
    same_shape(x_t, x0, "x_t and x0")?;
    let eg = EnergyGraph::new(model, lambda)?;
    let ev = eg.evaluate(model, &batched(model, x_t)?, &batched(model, x0)?)?;
    Ok(ev.grad.reshape(x_t.shape()).expect("same length"))
}

/// Optimizer state over the image being projected.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<E: Element = f32> {
    Plain,
    Adam(AdamState<E>),
}

impl<E: Element> OptimizerState<E> {
    pub fn new(kind: InputOptimizer, x: &Tensor<E>) -> Self {
        match kind {
            InputOptimizer::Plain => OptimizerState::Plain,
            InputOptimizer::Adam => OptimizerState::Adam(AdamState::for_tensor(x)),
        }
    }
}

/// Applies a direction `d` (already masked or weighted) to `x`.
fn apply<E: Element>(
    x: &Tensor<E>,
    d: &Tensor<E>,
    state: &mut OptimizerState<E>,
    alpha: f64,
    clamp: bool,
) -> Result<Tensor<E>, ProjectError> {
    same_shape(x, d, "image and gradient")?;
    let mut out = x.clone();
    match state {
        OptimizerState::Plain => {
            let a = E::from_f64(alpha);
            for (o, g) in out.data_mut().iter_mut().zip(d.data()) {
                *o -= a * *g;
            }
        }
        OptimizerState::Adam(s) => {
            let m = s.m.entry(String::new()).or_insert_with(|| Tensor::zeros(x.shape()));
            let v = s.v.entry(String::new()).or_insert_with(|| Tensor::zeros(x.shape()));
            same_shape(x, m, "image and Adam state")?;
            s.t += 1;
            adam_update(
                out.data_mut(),
                d.data(),
                m.data_mut(),
                v.data_mut(),
                s.t,
                s.beta1,
                s.beta2,
                s.eps,
                alpha,
            );
        }
    }
    if clamp {
        let (lo, hi) = (E::zero(), E::one());
        out.data_mut().iter_mut().for_each(|v| {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            }
        });
    }
    Ok(out)
}

/// `x_{t+1} = x_t − α∇E`, then the optional clamp to `[0, 1]`.
pub fn step_standard<E: Element>(
    x_t: &Tensor<E>,
    grad: &Tensor<E>,
    state: &mut OptimizerState<E>,
    alpha: f64,
    clamp: bool,
) -> Result<Tensor<E>, ProjectError> {
    apply(x_t, grad, state, alpha, clamp)
}

/// Broadcasts an `[H,W]` mask over the channels of `x`, or checks an
/// image-shaped one.
fn expand_mask<E: Element>(x: &Tensor<E>, mask: &Tensor<E>) -> Result<Vec<bool>, ProjectError> {
    check_binary(mask)?;
    let plane: usize = x.shape()[x.rank().saturating_sub(2)..].iter().product();
    let md = mask.data();
    if mask.len() == x.len() && mask.rank() >= 3 {
        return Ok(md.iter().map(|v| *v == E::one()).collect());
    }
    if mask.rank() == 2 && x.rank() >= 2 && mask.shape() == &x.shape()[x.rank() - 2..] {
        return Ok((0..x.len()).map(|i| md[i % plane] == E::one()).collect());
    }
    Err(ProjectError::Shape(format!(
        "mask {:?} does not fit image {:?}",
        mask.shape(),
        x.shape()
    )))
}

/// `x_{t+1} = x_t − α(∇E ⊙ Ω)`. Pixels with `Ω = 0` are copied from `x_t`.
pub fn step_masked<E: Element>(
    x_t: &Tensor<E>,
    grad: &Tensor<E>,
    mask: &Tensor<E>,
    state: &mut OptimizerState<E>,
    alpha: f64,
    clamp: bool,
) -> Result<Tensor<E>, ProjectError> {
    let keep = expand_mask(x_t, mask)?;
    masked_with(x_t, grad, &keep, state, alpha, clamp)
}

fn masked_with<E: Element>(
    x_t: &Tensor<E>,
    grad: &Tensor<E>,
    inside: &[bool],
    state: &mut OptimizerState<E>,
    alpha: f64,
    clamp: bool,
) -> Result<Tensor<E>, ProjectError> {
    same_shape(x_t, grad, "image and gradient")?;
    let d = Tensor::from_fn(grad.shape(), |i| if inside[i] { grad.data()[i] } else { E::zero() });
    let mut out = apply(x_t, &d, state, alpha, clamp)?;
    for ((o, x), &m) in out.data_mut().iter_mut().zip(x_t.data()).zip(inside) {
        if !m {
            *o = *x;
        }
    }
    Ok(out)
}

/// `x_{t+1} = x_t − α(∇E ⊙ (x_t − f(x_t))²)` with the raw squared residual.
pub fn step_weighted<E: Element>(
    x_t: &Tensor<E>,
    grad: &Tensor<E>,
    recon: &Tensor<E>,
    state: &mut OptimizerState<E>,
    alpha: f64,
    clamp: bool,
) -> Result<Tensor<E>, ProjectError> {
    same_shape(x_t, recon, "image and reconstruction")?;
    same_shape(x_t, grad, "image and gradient")?;
    let d = Tensor::from_fn(x_t.shape(), |i| {
        let r = x_t.data()[i] - recon.data()[i];
        grad.data()[i] * (r * r)
    });
    apply(x_t, &d, state, alpha, clamp)
}

/// Whether `criterion` fires on the trace so far.
pub fn stop_check(records: &[IterRecord], criterion: &StopCriterion) -> Option<StopReason> {
    let last = records.last()?;
    match *criterion {
        StopCriterion::LossThreshold(t) => (last.loss_r < t).then_some(StopReason::ThresholdReached),
        StopCriterion::EnergyConverged { tolerance, patience } => {
            if records.len() <= patience {
                return None;
            }
            let stalled = records[records.len() - patience - 1..].windows(2).all(|w| {
                let (prev, cur) = (w[0].energy, w[1].energy);
                prev - cur < tolerance * prev.abs().max(f64::MIN_POSITIVE)
            });
            stalled.then_some(StopReason::Converged)
        }
        StopCriterion::MaxIters => None,
    }
}

/// Projects one image `[C,H,W]` (or `[1,C,H,W]`).
pub fn project<E: Element>(
    model: &ModelBundle<E>,
    x0: &Tensor<E>,
    cfg: &EnergyConfig,
) -> Result<ProjectionTrace<E>, ProjectError> {
    cfg.validate()?;
    let stop = cfg.resolved_stop(model)?;
    let x0b = batched(model, x0)?;
    let inside = match &cfg.mode {
        UpdateMode::Masked(m) => Some(expand_mask(&x0b, &m.cast::<E>())?),
        _ => None,
    };
    let eg = EnergyGraph::new(model, cfg.lambda)?;
    let mut state = OptimizerState::new(cfg.optimizer, &x0b);
    let shape = x0.shape().to_vec();
    let unbatch = |t: &Tensor<E>| t.clone().reshape(&shape).expect("same length");

    let mut x = x0b.clone();
    let mut ev = eg.evaluate(model, &x, &x0b)?;
    let initial_reconstruction = unbatch(&ev.recon);
    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    let mut snapshots = Vec::new();
    let record = |t: usize, ev: &EnergyEval<E>| IterRecord {
        iter: t,
        energy: ev.energy,
        loss_r: ev.loss_r,
        l1_dist: ev.l1_dist,
    };
    let fail = |iteration, records: Vec<IterRecord>, x: &Tensor<E>, snapshots: &Vec<(usize, Tensor<E>)>| {
        let partial = ProjectionTrace {
            image: unbatch(x),
            initial_reconstruction: initial_reconstruction.clone(),
            records,
            snapshots: snapshots.clone(),
            stop_reason: StopReason::MaxIters,
        };
        ProjectError::NonFinite {
            iteration,
            trace: Box::new(partial.cast()),
        }
    };
    if !ev.energy.is_finite() {
        return Err(fail(0, records, &x, &snapshots));
    }
    records.push(record(0, &ev));
    if cfg.snapshot_every.is_some() {
        snapshots.push((0, unbatch(&x)));
    }
    let mut reason = stop_check(&records, &stop).unwrap_or(StopReason::MaxIters);
    if reason == StopReason::MaxIters {
        for t in 1..=cfg.max_iters {
            x = match (&cfg.mode, &inside) {
                (UpdateMode::Masked(_), Some(keep)) => {
                    masked_with(&x, &ev.grad, keep, &mut state, cfg.alpha, cfg.clamp)?
                }
                (UpdateMode::Weighted, _) => {
                    step_weighted(&x, &ev.grad, &ev.recon, &mut state, cfg.alpha, cfg.clamp)?
                }
                _ => step_standard(&x, &ev.grad, &mut state, cfg.alpha, cfg.clamp)?,
            };
            ev = eg.evaluate(model, &x, &x0b)?;
            if !(ev.energy.is_finite() && ev.grad.all_finite()) {
                return Err(fail(t, records, &x, &snapshots));
            }
            records.push(record(t, &ev));
            if cfg.snapshot_every.is_some_and(|k| t % k == 0) {
                snapshots.push((t, unbatch(&x)));
            }
            if let Some(r) = stop_check(&records, &stop) {
                reason = r;
                break;
            }
        }
    }
    Ok(ProjectionTrace {
        image: unbatch(&x),
        initial_reconstruction,
        records,
        snapshots,
        stop_reason: reason,
    })
}

/// Projects every image; `masks` supplies a per-image `Ω` in masked mode
/// (otherwise the config's own mode is used for all images).
pub fn project_batch<E: Element>(
    model: &ModelBundle<E>,
    images: &[Tensor<E>],
    cfg: &EnergyConfig,
    masks: Option<&[Tensor<f32>]>,
    parallelism: Parallelism,
) -> Vec<Result<ProjectionTrace<E>, ProjectError>> {
    if let Some(m) = masks {
        if m.len() != images.len() {
            let msg = format!("{} masks for {} images", m.len(), images.len());
            return images.iter().map(|_| Err(ProjectError::Config(msg.clone()))).collect();
        }
    }
    map_indexed(images, parallelism, |i, x| match masks {
        Some(m) => {
            let c = EnergyConfig {
                mode: UpdateMode::Masked(m[i].clone()),
                ..cfg.clone()
            };
            project(model, x, &c)
        }
        None => project(model, x, cfg),
    })
}
