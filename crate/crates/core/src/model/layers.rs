use candle_core::{DType, Device, Module, Tensor, Var, D};

use super::params::{Init, ParamBuilder};
use crate::error::Result;

/// Forward-pass context: train/eval switch plus an optional attention probe.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ctx<'a> {
    pub train: bool,
    pub probe: Option<&'a AttentionProbe>,
}

impl<'a> Ctx<'a> {
    pub fn train() -> Self {
        Self {
            train: true,
            probe: None,
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            probe: None,
        }
    }

    pub fn with_probe(mut self, probe: &'a AttentionProbe) -> Self {
        self.probe = Some(probe);
        self
    }
}

/// Records, per attention layer, the worst deviation of a softmax row sum from 1.
#[derive(Debug, Default)]
pub struct AttentionProbe {
    records: std::cell::RefCell<Vec<(String, f64)>>,
}

impl AttentionProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, layer: &str, weights: &Tensor) -> Result<()> {
        let sums = weights
            .to_dtype(DType::F64)?
            .sum(D::Minus1)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        self.records.borrow_mut().push((layer.to_string(), worst));
        Ok(())
    }

    pub fn records(&self) -> Vec<(String, f64)> {
        self.records.borrow().clone()
    }

    pub fn max_deviation(&self) -> f64 {
        self.records
            .borrow()
            .iter()
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

pub fn linear(pb: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<candle_nn::Linear> {
    let w = pb.get((out_dim, in_dim), "weight", Init::TruncNormal { std: 0.02 })?;
    let b = pb.get(out_dim, "bias", Init::Zeros)?;
    Ok(candle_nn::Linear::new(w, Some(b)))
}

/// 2-D convolution with independent kernel/padding per axis.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    pad: (usize, usize),
    stride: usize,
    dilation: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub pad: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn square(k: usize, pad: usize) -> Self {
        Self {
            kernel: (k, k),
            pad: (pad, pad),
            stride: 1,
            dilation: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

impl Conv2d {
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        let weight = pb.get(
            (c_out, c_in, kh, kw),
            "weight",
            Init::Kaiming {
                fan_in: c_in * kh * kw,
            },
        )?;
        let bias = if spec.bias {
            Some(pb.get(c_out, "bias", Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            pad: spec.pad,
            stride: spec.stride,
            dilation: spec.dilation,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (ph, pw) = self.pad;
        let y = if ph == pw {
            x.conv2d(&self.weight, ph, self.stride, self.dilation, 1)?
        } else {
            x.pad_with_zeros(2, ph, ph)?
                .pad_with_zeros(3, pw, pw)?
                .conv2d(&self.weight, 0, self.stride, self.dilation, 1)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Transposed convolution with `kernel == stride` (non-overlapping upsampling).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl ConvTranspose2d {
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, factor: usize) -> Result<Self> {
        let weight = pb.get(
            (c_in, c_out, factor, factor),
            "weight",
            Init::Kaiming { fan_in: c_in },
        )?;
        let bias = pb.get(c_out, "bias", Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            stride: factor,
        })
    }
}

impl Module for ConvTranspose2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.conv_transpose2d(&self.weight, 0, 0, self.stride, 1)?
            .broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

/// Layer normalization over the last dimension.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.get(dim, "weight", Init::Ones)?,
            bias: pb.get(dim, "bias", Init::Zeros)?,
            eps: 1e-6,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mu = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        xc.broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}

/// Layer normalization over the channel axis of a `B×C×H×W` map.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.get(channels, "weight", Init::Ones)?,
            bias: pb.get(channels, "bias", Init::Zeros)?,
            eps: 1e-6,
        })
    }
}

impl Module for LayerNorm2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mu = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        xc.broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight.reshape((1, (), 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

/// Batch normalization with running statistics kept as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.get(channels, "weight", Init::Ones)?,
            bias: pb.get(channels, "bias", Init::Zeros)?,
            running_mean: pb.buffer(channels, "running_mean", Init::Zeros)?,
            running_var: pb.buffer(channels, "running_var", Init::Ones)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let (b, _, h, w) = x.dims4()?;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let var = x
                .broadcast_sub(&mean)?
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 {
                (var.detach() * (n / (n - 1.0)))?
            } else {
                var.detach()
            };
            let m = self.momentum;
            let rm = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let rv =
                ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased.flatten_all()? * m)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, (), 1, 1))?,
                self.running_var.as_tensor().reshape((1, (), 1, 1))?,
            )
        };
        let y = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight.reshape((1, (), 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?;
        Ok(y)
    }
}

/// Two or more linear layers with ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<candle_nn::Linear>,
}

impl Mlp {
    pub fn new(pb: &ParamBuilder, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| linear(&pb.pp(format!("layers.{i}")), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(&x)?;
            if i < last {
                x = x.relu()?;
            }
        }
        Ok(x)
    }
}

/// Bilinear resampling matrix (`out × in`) with half-pixel centres.
pub fn bilinear_matrix(n_in: usize, n_out: usize) -> Vec<f32> {
    let mut m = vec![0f32; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let t = (src - i0 as f64) as f32;
        m[o * n_in + i0] += 1.0 - t;
        m[o * n_in + i1] += t;
    }
    m
}

/// Differentiable bilinear resize of a `B×C×h×w` map to `B×C×H×W`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let mh = Tensor::from_vec(bilinear_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let mw_t = Tensor::from_vec(bilinear_matrix(w, out_w), (out_w, w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let y = x.contiguous()?.broadcast_matmul(&mw_t)?;
    Ok(mh.broadcast_matmul(&y)?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn cpu() -> Device {
    Device::Cpu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (a, b) in [(4, 16), (16, 64), (3, 7)] {
            let m = bilinear_matrix(a, b);
            for r in m.chunks(a) {
                assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn asymmetric_padding_preserves_shape() -> Result<()> {
        let pb = ParamBuilder::new(0, DType::F32, &Device::Cpu);
        let x = Tensor::ones((1, 3, 5, 6), DType::F32, &Device::Cpu)?;
        for (k, p) in [
            ((1, 3), (0, 1)),
            ((3, 1), (1, 0)),
            ((1, 5), (0, 2)),
            ((5, 1), (2, 0)),
        ] {
            let spec = ConvSpec {
                kernel: k,
                pad: p,
                stride: 1,
                dilation: 1,
                bias: true,
            };
            let c = Conv2d::new(&pb.pp(format!("c{}{}", k.0, k.1)), 3, 2, spec)?;
            assert_eq!(c.forward(&x)?.dims(), &[1, 2, 5, 6]);
        }
        Ok(())
    }
}
