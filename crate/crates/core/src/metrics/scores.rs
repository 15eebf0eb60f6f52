use super::{channel_mean, AnomalyMap, MetricsError, ScoreKind};
use crate::autodiff::{Bindings, Tape};
use crate::element::Element;
use crate::models::{build_model_graph, LatentMode, ModelBundle, ModelError};
use crate::tensor::Tensor;

/// The five single-evaluation score maps of a variational model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    /// `(x − f(x))²`
    pub recon_sq: AnomalyMap,
    /// `|∇ₓ L(x)|`
    pub grad_abs: AnomalyMap,
    /// `|∇ₓ L(x)| ⊙ (x − f(x))²`
    pub product: AnomalyMap,
    /// `|∇ₓ L_KL(x)|`
    pub kl_grad: AnomalyMap,
    /// `|∇ₓ L_KL(x)| ⊙ (x − f(x))²`
    pub kl_product: AnomalyMap,
}

impl ScoreMaps {
    /// Maps in the column order used by reports.
    pub fn ordered(&self) -> [&AnomalyMap; 5] {
        [&self.recon_sq, &self.grad_abs, &self.product, &self.kl_grad, &self.kl_product]
    }
}

/// Score maps of one image `[C,H,W]` under a VAE or γ-VAE.
///
/// The loss is evaluated at the encoder mean (`z = μ`), so each map is a
/// deterministic function of `x`. Channel values are averaged per pixel.
pub fn score_baselines<E: Element>(
    model: &ModelBundle<E>,
    x: &Tensor<E>,
) -> Result<ScoreMaps, MetricsError> {
    if !model.variant.is_variational() {
        return Err(ModelError::NotVariational(model.variant).into());
    }
    let shape = model.check_input(x)?;
    let xb = x.clone().reshape(&shape).expect("same length");
    let mg = build_model_graph(&model.arch, model.variant, LatentMode::Mean)?;
    let mut b = Bindings::new();
    model.bind_params(&mut b);
    b.bind("x", &xb);
    let mut tape = Tape::new(&mg.graph);
    tape.forward(&b).map_err(ModelError::from)?;
    let kl = mg.loss_kl.expect("variational graph has a KL node");
    let g_total = tape
        .backward_wrt(mg.total, &["x"])
        .map_err(ModelError::from)?
        .take("x")
        .expect("x gradient");
    let g_kl = tape
        .backward_wrt(kl, &["x"])
        .map_err(ModelError::from)?
        .take("x")
        .expect("x gradient");
    let recon = tape.value(mg.recon).map_err(ModelError::from)?;

    let [c, h, w] = model.input_shape();
    let to_f64 = |t: &Tensor<E>| t.data().iter().map(|v| v.to_f64()).collect::<Vec<_>>();
    let (xd, rd) = (to_f64(&xb), to_f64(recon));
    let sq: Vec<f64> = xd.iter().zip(&rd).map(|(a, b)| (a - b) * (a - b)).collect();
    let abs_total: Vec<f64> = to_f64(&g_total).into_iter().map(f64::abs).collect();
    let abs_kl: Vec<f64> = to_f64(&g_kl).into_iter().map(f64::abs).collect();

    let map = |v: Vec<f64>, kind| AnomalyMap {
        scores: Tensor::from_raw(vec![h, w], channel_mean(&v, c, h, w)),
        kind,
    };
    let recon_sq = map(sq, ScoreKind::ReconSq);
    let grad_abs = map(abs_total, ScoreKind::GradAbs);
    let kl_grad = map(abs_kl, ScoreKind::KlGrad);
    let times = |a: &AnomalyMap, kind| AnomalyMap {
        scores: a.scores.zip_map(&recon_sq.scores, |p, q| p * q),
        kind,
    };
    let product = times(&grad_abs, ScoreKind::Product);
    let kl_product = times(&kl_grad, ScoreKind::KlProduct);
    Ok(ScoreMaps {
        recon_sq,
        grad_abs,
        product,
        kl_grad,
        kl_product,
    })
}
