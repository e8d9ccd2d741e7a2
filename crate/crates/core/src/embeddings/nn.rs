//! Inference-only layer primitives on `f64` activations.
//!
//! 1-D activations are `channels x time` matrices; 2-D activations are
//! channel-major `[channels][height][width]` buffers.

use rayon::prelude::*;

use super::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

pub(crate) const BN_EPS: f64 = 1e-5;

/// Mirror index into `0..len` without repeating the edge sample.
#[inline]
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Batch normalization with stored statistics, folded into scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl BatchNorm {
    pub fn load(archive: &TensorArchive, prefix: &str, channels: usize) -> Result<Self> {
        let get = |n: &str| -> Result<Vec<f64>> { Ok(archive.expect(&format!("{prefix}.{n}"), &[channels])?.to_f64()) };
        let gamma = get("gamma")?;
        let beta = get("beta")?;
        let mean = get("mean")?;
        let var = get("var")?;
        if let Some(c) = var.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "negative running variance in `{prefix}.var` at channel {c}"
            )));
        }
        let scale: Vec<f64> = gamma.iter().zip(&var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
        let shift = beta
            .iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    #[inline]
    pub fn apply_channel(&self, c: usize, x: f64) -> f64 {
        x * self.scale[c] + self.shift[c]
    }

    pub fn apply_vec(&self, v: &mut [f64]) {
        for (c, x) in v.iter_mut().enumerate() {
            *x = self.apply_channel(c, *x);
        }
    }

    /// Normalizes every row (channel) of a `channels x time` matrix.
    pub fn apply_rows(&self, m: &mut Matrix) {
        for c in 0..m.rows() {
            let (s, b) = (self.scale[c], self.shift[c]);
            m.row_mut(c).iter_mut().for_each(|x| *x = *x * s + b);
        }
    }
}

/// Dense layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Matrix,
    bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::invalid("linear bias length mismatch"));
        }
        Ok(Self { weight, bias })
    }

    pub fn load(archive: &TensorArchive, prefix: &str, input: usize, output: usize) -> Result<Self> {
        let w = archive.expect(&format!("{prefix}.weight"), &[output, input])?;
        let b = archive.expect(&format!("{prefix}.bias"), &[output])?;
        Self::new(Matrix::from_vec(output, input, w.to_f64())?, b.to_f64())
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }
}

/// 1-D convolution over time with "same" output length and reflect padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// `out x (in * kernel)`, tap index fastest.
    weight: Matrix,
    bias: Vec<f64>,
    in_channels: usize,
    kernel: usize,
    dilation: usize,
}

impl Conv1d {
    pub fn load(
        archive: &TensorArchive,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::invalid("conv1d kernel must be odd"));
        }
        let w = archive.expect(&format!("{prefix}.weight"), &[out_channels, in_channels, kernel])?;
        let b = archive.expect(&format!("{prefix}.bias"), &[out_channels])?;
        Ok(Self {
            weight: Matrix::from_vec(out_channels, in_channels * kernel, w.to_f64())?,
            bias: b.to_f64(),
            in_channels,
            kernel,
            dilation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.in_channels {
            return Err(Error::invalid(format!(
                "conv1d expects {} input channels, got {}",
                self.in_channels,
                x.rows()
            )));
        }
        let t_len = x.cols();
        let pad = self.dilation * (self.kernel - 1) / 2;
        let padded_len = t_len + 2 * pad;

        let padded = if pad == 0 {
            x.clone()
        } else {
            let mut p = Matrix::zeros(x.rows(), padded_len);
            for c in 0..x.rows() {
                let src = x.row(c);
                for (j, dst) in p.row_mut(c).iter_mut().enumerate() {
                    *dst = src[reflect_index(j as isize - pad as isize, t_len)];
                }
            }
            p
        };

        let mut out = Matrix::zeros(self.out_channels(), t_len);
        out.data_mut().par_chunks_mut(t_len).enumerate().for_each(|(o, dst)| {
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            let w = self.weight.row(o);
            for i in 0..self.in_channels {
                let src = padded.row(i);
                for k in 0..self.kernel {
                    let wk = w[i * self.kernel + k];
                    if wk == 0.0 {
                        continue;
                    }
                    let off = k * self.dilation;
                    for (d, s) in dst.iter_mut().zip(&src[off..off + t_len]) {
                        *d += wk * s;
                    }
                }
            }
        });
        Ok(out)
    }
}

/// Channel-major 3-D activation `[channels][height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.height + h) * self.width + w]
    }
}

/// 3x3 convolution with stride 2 and zero padding 1 in both axes.
#[derive(Debug, Clone)]
pub struct Conv2dStride2 {
    /// `[out][in][3][3]` flattened.
    weight: Vec<f64>,
    bias: Vec<f64>,
    in_channels: usize,
    out_channels: usize,
}

pub(crate) fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

impl Conv2dStride2 {
    pub fn load(archive: &TensorArchive, prefix: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        let w = archive.expect(&format!("{prefix}.weight"), &[out_channels, in_channels, 3, 3])?;
        let b = archive.expect(&format!("{prefix}.bias"), &[out_channels])?;
        Ok(Self {
            weight: w.to_f64(),
            bias: b.to_f64(),
            in_channels,
            out_channels,
        })
    }

    pub fn forward(&self, x: &FeatureMap3) -> Result<FeatureMap3> {
        if x.channels != self.in_channels {
            return Err(Error::invalid(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = (halve(x.height), halve(x.width));
        let mut out = FeatureMap3::zeros(self.out_channels, oh, ow);
        let plane = oh * ow;
        out.data.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let w = &self.weight[(o * self.in_channels + i) * 9..][..9];
                for y in 0..oh {
                    for ky in 0..3 {
                        let sy = (2 * y + ky) as isize - 1;
                        if sy < 0 || sy as usize >= x.height {
                            continue;
                        }
                        let row = &x.data[(i * x.height + sy as usize) * x.width..][..x.width];
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        for (xo, d) in drow.iter_mut().enumerate() {
                            let base = 2 * xo as isize - 1;
                            let mut acc = 0.0;
                            for kx in 0..3 {
                                let sx = base + kx as isize;
                                if sx >= 0 && (sx as usize) < x.width {
                                    acc += w[ky * 3 + kx] * row[sx as usize];
                                }
                            }
                            *d += acc;
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}
