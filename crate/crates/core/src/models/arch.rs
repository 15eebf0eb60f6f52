use super::{ModelError, Variant};
use crate::autodiff::kernels::{conv_out_size, conv_transpose_out_size};
use serde::{Deserialize, Serialize};

/// One strided convolution of the encoder. The decoder mirrors it with a
/// transposed convolution of the same kernel, stride and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Convolutional encoder, dense bottleneck, mirrored transposed-conv decoder.
///
/// Hidden layers use leaky ReLU; the decoder output goes through a sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder: Vec<ConvLayer>,
    pub latent_dim: usize,
    pub leaky_slope: f64,
}

impl Default for ArchitectureSpec {
    /// 64×64 grayscale, channels (32, 32, 64, 64), kernel 4, stride 2, l = 100.
    fn default() -> Self {
        Self::new(1, 64, 64, &[32, 32, 64, 64], 100)
    }
}

pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` for biases and `log_gamma`, which start at zero.
    pub fan_in: Option<f64>,
}

impl ArchitectureSpec {
    /// Kernel-4, stride-2, padding-1 encoder with the given channel counts.
    pub fn new(channels: usize, height: usize, width: usize, conv: &[usize], latent_dim: usize) -> Self {
        ArchitectureSpec {
            channels,
            height,
            width,
            encoder: conv
                .iter()
                .map(|&c| ConvLayer {
                    out_channels: c,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                })
                .collect(),
            latent_dim,
            leaky_slope: 0.1,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// `[C, H, W]` after each encoder layer, starting with the input.
    pub fn encoder_shapes(&self) -> Result<Vec<[usize; 3]>, ModelError> {
        let mut shapes = vec![self.input_shape()];
        for (i, l) in self.encoder.iter().enumerate() {
            let [_, h, w] = *shapes.last().unwrap();
            let oh = conv_out_size(h, l.kernel, l.stride, l.padding);
            let ow = conv_out_size(w, l.kernel, l.stride, l.padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => shapes.push([l.out_channels, oh, ow]),
                _ => {
                    return Err(ModelError::Architecture(format!(
                        "encoder layer {i} does not fit a {h}x{w} input"
                    )))
                }
            }
        }
        Ok(shapes)
    }

    /// Flattened size of the last encoder feature map.
    pub fn feature_len(&self) -> Result<usize, ModelError> {
        let s = *self.encoder_shapes()?.last().unwrap();
        Ok(s.iter().product())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(ModelError::Architecture("empty input shape".into()));
        }
        if self.latent_dim == 0 {
            return Err(ModelError::Architecture("latent dimension must be positive".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(ModelError::Architecture("leaky slope must be finite and >= 0".into()));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            if l.out_channels == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(ModelError::Architecture(format!(
                    "encoder layer {i}: channels, kernel and stride must be positive"
                )));
            }
        }
        let shapes = self.encoder_shapes()?;
        // The decoder must land exactly back on each encoder shape.
        for (i, l) in self.encoder.iter().enumerate().rev() {
            let [_, h, w] = shapes[i + 1];
            let up = (
                conv_transpose_out_size(h, l.kernel, l.stride, l.padding),
                conv_transpose_out_size(w, l.kernel, l.stride, l.padding),
            );
            if up != (Some(shapes[i][1]), Some(shapes[i][2])) {
                return Err(ModelError::Architecture(format!(
                    "decoder layer mirroring encoder layer {i} does not restore {}x{}",
                    shapes[i][1], shapes[i][2]
                )));
            }
        }
        Ok(())
    }

    /// Encoder output width: `2l` for variational variants, `l` otherwise.
    pub fn encoder_out_len(&self, variant: Variant) -> usize {
        if variant.is_variational() {
            2 * self.latent_dim
        } else {
            self.latent_dim
        }
    }

    pub(crate) fn parameter_specs(&self, variant: Variant) -> Vec<ParamSpec> {
        let shapes = self.encoder_shapes().expect("validated architecture");
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: Option<f64>| {
            out.push(ParamSpec { name, shape, fan_in })
        };
        for (i, l) in self.encoder.iter().enumerate() {
            let c = shapes[i][0];
            let k = l.kernel;
            push(
                format!("enc.conv{i}.weight"),
                vec![l.out_channels, c, k, k],
                Some((c * k * k) as f64),
            );
            push(format!("enc.conv{i}.bias"), vec![l.out_channels], None);
        }
        let feat: usize = shapes.last().unwrap().iter().product();
        let enc_out = self.encoder_out_len(variant);
        push("enc.fc.weight".into(), vec![feat, enc_out], Some(feat as f64));
        push("enc.fc.bias".into(), vec![enc_out], None);
        push("dec.fc.weight".into(), vec![self.latent_dim, feat], Some(self.latent_dim as f64));
        push("dec.fc.bias".into(), vec![feat], None);
        for (j, i) in (0..self.encoder.len()).rev().enumerate() {
            let l = &self.encoder[i];
            let (cin, cout) = (shapes[i + 1][0], shapes[i][0]);
            let k = l.kernel;
            let s2 = (l.stride * l.stride) as f64;
            push(
                format!("dec.deconv{j}.weight"),
                vec![cin, cout, k, k],
                Some(((cin * k * k) as f64 / s2).max(1.0)),
            );
            push(format!("dec.deconv{j}.bias"), vec![cout], None);
        }
        if variant == Variant::GammaVAE {
            push("log_gamma".into(), vec![1], None);
        }
        out
    }

    /// Names and shapes of all parameters of `variant`, in a fixed order.
    pub fn parameter_shapes(&self, variant: Variant) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
        self.validate()?;
        Ok(self
            .parameter_specs(variant)
            .into_iter()
            .map(|p| (p.name, p.shape))
            .collect())
    }
}
