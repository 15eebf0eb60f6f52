use super::{ArchitectureSpec, ModelError, Variant};
use crate::autodiff::{Conv2dParams, Graph, NodeId};
use crate::metrics::ssim::{gaussian_kernel_2d, SsimParams};
use crate::tensor::Tensor;

/// How the latent point is formed from the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// `z = μ`; the model is a deterministic function of `x`.
    Mean,
    /// `z = μ + exp(logvar/2)·noise` with a `noise [1, l]` leaf
    /// (variational variants only; others fall back to `Mean`).
    Sampled,
}

/// A model graph for single images `x [1,C,H,W]` and the nodes of interest.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub graph: Graph,
    pub x: NodeId,
    pub mu: NodeId,
    pub logvar: Option<NodeId>,
    pub z: NodeId,
    pub recon: NodeId,
    pub loss_r: NodeId,
    pub loss_kl: Option<NodeId>,
    pub total: NodeId,
}

/// Builds the full graph of `variant` on a fresh `x` leaf (requires gradients).
pub fn build_model_graph(
    arch: &ArchitectureSpec,
    variant: Variant,
    mode: LatentMode,
) -> Result<ModelGraph, ModelError> {
    let mut graph = Graph::new();
    let x = graph.leaf("x", true);
    let parts = build_on(&mut graph, arch, variant, mode, x)?;
    Ok(ModelGraph {
        graph,
        x,
        mu: parts.mu,
        logvar: parts.logvar,
        z: parts.z,
        recon: parts.recon,
        loss_r: parts.loss_r,
        loss_kl: parts.loss_kl,
        total: parts.total,
    })
}

pub(crate) struct Parts {
    pub mu: NodeId,
    pub logvar: Option<NodeId>,
    pub z: NodeId,
    pub recon: NodeId,
    pub loss_r: NodeId,
    pub loss_kl: Option<NodeId>,
    pub total: NodeId,
}

/// Adds parameter leaves, encoder, decoder and losses for input node `x`.
pub(crate) fn build_on(
    g: &mut Graph,
    arch: &ArchitectureSpec,
    variant: Variant,
    mode: LatentMode,
    x: NodeId,
) -> Result<Parts, ModelError> {
    arch.validate()?;
    let l = arch.latent_dim;
    let h = encoder(g, arch, x)?;
    let (mu, logvar) = if variant.is_variational() {
        let mu = g.narrow(h, 0, l);
        let lv = g.narrow(h, l, l);
        (mu, Some(g.clamp(lv, -10.0, 10.0)))
    } else {
        (h, None)
    };
    let z = match (mode, logvar) {
        (LatentMode::Sampled, Some(lv)) => {
            let noise = g.leaf("noise", false);
            let half = g.scale(lv, 0.5);
            let sigma = g.exp(half);
            let eps = g.mul(sigma, noise);
            g.add(mu, eps)
        }
        _ => mu,
    };
    let recon = decoder(g, arch, z, 1)?;
    let loss_r = reconstruction_loss(g, arch, variant, x, recon);
    let loss_kl = logvar.map(|lv| {
        // ½ Σ (μ² + e^lv − 1 − lv)
        let m2 = g.square(mu);
        let e = g.exp(lv);
        let a = g.add(m2, e);
        let b = g.sub(a, lv);
        let c = g.offset(b, -1.0);
        let s = g.sum(c);
        g.scale(s, 0.5)
    });
    let total = match loss_kl {
        Some(kl) => g.add(loss_r, kl),
        None => loss_r,
    };
    Ok(Parts {
        mu,
        logvar,
        z,
        recon,
        loss_r,
        loss_kl,
        total,
    })
}

fn param(g: &mut Graph, name: &str) -> NodeId {
    g.leaf_id(name).unwrap_or_else(|| g.leaf(name, true))
}

fn encoder(g: &mut Graph, arch: &ArchitectureSpec, x: NodeId) -> Result<NodeId, ModelError> {
    let mut h = x;
    for (i, layer) in arch.encoder.iter().enumerate() {
        let w = param(g, &format!("enc.conv{i}.weight"));
        let b = param(g, &format!("enc.conv{i}.bias"));
        let params = Conv2dParams {
            stride: layer.stride,
            padding: layer.padding,
        };
        h = g.conv2d(h, w, Some(b), params)?;
        h = g.leaky_relu(h, arch.leaky_slope);
    }
    let feat = arch.feature_len()?;
    let flat = g.reshape(h, &[1, feat]);
    let w = param(g, "enc.fc.weight");
    let b = param(g, "enc.fc.bias");
    Ok(g.dense(flat, w, Some(b)))
}

/// Decoder mean for latent node `z [n, l]`; output `[n, C, H, W]`.
pub(crate) fn decoder(
    g: &mut Graph,
    arch: &ArchitectureSpec,
    z: NodeId,
    n: usize,
) -> Result<NodeId, ModelError> {
    let shapes = arch.encoder_shapes()?;
    let last = *shapes.last().unwrap();
    let w = param(g, "dec.fc.weight");
    let b = param(g, "dec.fc.bias");
    let mut h = g.dense(z, w, Some(b));
    h = g.leaky_relu(h, arch.leaky_slope);
    h = g.reshape(h, &[n, last[0], last[1], last[2]]);
    let depth = arch.encoder.len();
    for (j, i) in (0..depth).rev().enumerate() {
        let layer = &arch.encoder[i];
        let w = param(g, &format!("dec.deconv{j}.weight"));
        let b = param(g, &format!("dec.deconv{j}.bias"));
        let params = Conv2dParams {
            stride: layer.stride,
            padding: layer.padding,
        };
        h = g.conv_transpose2d(h, w, Some(b), params)?;
        if j + 1 < depth {
            h = g.leaky_relu(h, arch.leaky_slope);
        }
    }
    Ok(g.sigmoid(h))
}

fn reconstruction_loss(
    g: &mut Graph,
    arch: &ArchitectureSpec,
    variant: Variant,
    x: NodeId,
    recon: NodeId,
) -> NodeId {
    match variant {
        Variant::L2AE => {
            let d = g.sub(x, recon);
            let sq = g.square(d);
            g.sum(sq)
        }
        Variant::VAE => {
            let d = g.sub(x, recon);
            let sq = g.square(d);
            let s = g.sum(sq);
            g.scale(s, 0.5)
        }
        Variant::GammaVAE => {
            // ½ Σ [(x − μ)² e^{−log γ} + log γ + log 2π]
            let lg = param(g, "log_gamma");
            let d = g.sub(x, recon);
            let sq = g.square(d);
            let neg = g.scale(lg, -1.0);
            let inv_gamma = g.exp(neg);
            let w = g.mul(sq, inv_gamma);
            let s = g.sum(w);
            let half = g.scale(s, 0.5);
            let n = (arch.channels * arch.height * arch.width) as f64;
            let per_pixel = g.offset(lg, (2.0 * std::f64::consts::PI).ln());
            let consts = g.scale(per_pixel, 0.5 * n);
            let consts = g.sum(consts);
            g.add(half, consts)
        }
        Variant::DSAE => {
            let map = dssim_node(g, arch, x, recon, &SsimParams::default());
            g.mean(map)
        }
    }
}

/// Differentiable per-pixel DSSIM of two `[1,C,H,W]` nodes, `[C,1,H,W]` out.
///
/// Window statistics use symmetric padding and a Gaussian kernel, matching
/// [`crate::metrics::dssim_map`] before its final clamp.
pub(crate) fn dssim_node(
    g: &mut Graph,
    arch: &ArchitectureSpec,
    x: NodeId,
    y: NodeId,
    p: &SsimParams,
) -> NodeId {
    let (c, h, w) = (arch.channels, arch.height, arch.width);
    let k = p.window;
    let kernel = Tensor::new(vec![1, 1, k, k], gaussian_kernel_2d(k, p.sigma)).expect("kernel shape");
    let kid = g.constant(kernel);
    let pad = k / 2;
    let planes = |g: &mut Graph, v: NodeId| g.reshape(v, &[c, 1, h, w]);
    let xs = planes(g, x);
    let ys = planes(g, y);
    let no_pad = Conv2dParams {
        stride: 1,
        padding: 0,
    };
    let filt = |g: &mut Graph, v: NodeId| {
        let padded = g.pad_symmetric(v, pad);
        g.conv2d(padded, kid, None, no_pad).expect("stride 1")
    };
    let xx = g.square(xs);
    let yy = g.square(ys);
    let xy = g.mul(xs, ys);
    let mx = filt(g, xs);
    let my = filt(g, ys);
    let exx = filt(g, xx);
    let eyy = filt(g, yy);
    let exy = filt(g, xy);
    let mx2 = g.square(mx);
    let my2 = g.square(my);
    let mxy = g.mul(mx, my);
    let vx = g.sub(exx, mx2);
    let vy = g.sub(eyy, my2);
    let cov = g.sub(exy, mxy);
    // ((2 μx μy + c1)(2 σxy + c2)) / ((μx² + μy² + c1)(σx² + σy² + c2))
    let a1 = g.scale(mxy, 2.0);
    let a1 = g.offset(a1, p.c1);
    let a2 = g.scale(cov, 2.0);
    let a2 = g.offset(a2, p.c2);
    let num = g.mul(a1, a2);
    let b1 = g.add(mx2, my2);
    let b1 = g.offset(b1, p.c1);
    let b2 = g.add(vx, vy);
    let b2 = g.offset(b2, p.c2);
    let den = g.mul(b1, b2);
    let ssim = g.div(num, den);
    let one_minus = g.scale(ssim, -0.5);
    g.offset(one_minus, 0.5)
}
