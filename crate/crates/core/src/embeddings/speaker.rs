//! ECAPA-TDNN speaker encoder (inference only).
//!
//! MFCC frames -> TDNN stem -> SE-Res2 blocks -> multi-layer feature
//! aggregation -> channel-dependent attentive statistics pooling -> linear
//! projection. Every TDNN unit is conv, ReLU, batch norm.

use serde::{Deserialize, Serialize};

use super::archive::TensorArchive;
use super::nn::{relu, BatchNorm, Conv1d, Linear};
use super::{EmbeddingKind, EmbeddingVector};
use crate::dsp::MfccMap;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Matrix};

pub const SPEAKER_ARCHITECTURE: &str = "ecapa-tdnn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEncoderConfig {
    pub input_dim: usize,
    pub channels: usize,
    pub stem_kernel: usize,
    pub block_kernel: usize,
    /// One dilation per SE-Res2 block.
    pub dilations: Vec<usize>,
    pub res2_scale: usize,
    pub se_channels: usize,
    pub mfa_channels: usize,
    pub attention_dim: usize,
    pub embedding_dim: usize,
}

impl SpeakerEncoderConfig {
    /// Full-size network (1024 channels, 3 blocks, dilations 2/3/4).
    pub fn full() -> Self {
        Self {
            input_dim: 80,
            channels: 1024,
            stem_kernel: 5,
            block_kernel: 3,
            dilations: vec![2, 3, 4],
            res2_scale: 8,
            se_channels: 128,
            mfa_channels: 3072,
            attention_dim: 128,
            embedding_dim: 192,
        }
    }

    /// Narrow variant with the same topology and output size.
    pub fn compact() -> Self {
        Self {
            channels: 64,
            se_channels: 16,
            mfa_channels: 192,
            attention_dim: 32,
            ..Self::full()
        }
    }

    pub fn blocks(&self) -> usize {
        self.dilations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.channels,
            self.res2_scale,
            self.se_channels,
            self.mfa_channels,
            self.attention_dim,
            self.embedding_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("speaker encoder dimensions must be >= 1"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::invalid("need at least one block with dilation >= 1"));
        }
        if !self.channels.is_multiple_of(self.res2_scale) {
            return Err(Error::invalid(format!(
                "channels {} not divisible by res2 scale {}",
                self.channels, self.res2_scale
            )));
        }
        if self.stem_kernel.is_multiple_of(2) || self.block_kernel.is_multiple_of(2) {
            return Err(Error::invalid("kernel sizes must be odd"));
        }
        Ok(())
    }

    /// Every tensor the network needs, with its shape, in a fixed order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let c = self.channels;
        let sub = c / self.res2_scale;
        let tdnn = |out: &mut Vec<(String, Vec<usize>)>, p: String, i: usize, o: usize, k: usize| {
            out.push((format!("{p}.conv.weight"), vec![o, i, k]));
            out.push((format!("{p}.conv.bias"), vec![o]));
            for n in ["gamma", "beta", "mean", "var"] {
                out.push((format!("{p}.bn.{n}"), vec![o]));
            }
        };
        tdnn(&mut out, "stem".into(), self.input_dim, c, self.stem_kernel);
        for b in 0..self.blocks() {
            tdnn(&mut out, format!("blocks.{b}.tdnn1"), c, c, 1);
            for j in 0..self.res2_scale - 1 {
                tdnn(&mut out, format!("blocks.{b}.res2.{j}"), sub, sub, self.block_kernel);
            }
            tdnn(&mut out, format!("blocks.{b}.tdnn2"), c, c, 1);
            out.push((format!("blocks.{b}.se.fc1.weight"), vec![self.se_channels, c]));
            out.push((format!("blocks.{b}.se.fc1.bias"), vec![self.se_channels]));
            out.push((format!("blocks.{b}.se.fc2.weight"), vec![c, self.se_channels]));
            out.push((format!("blocks.{b}.se.fc2.bias"), vec![c]));
        }
        tdnn(&mut out, "mfa".into(), c * self.blocks(), self.mfa_channels, 1);
        let m = self.mfa_channels;
        tdnn(&mut out, "asp.tdnn".into(), 3 * m, self.attention_dim, 1);
        out.push(("asp.conv.weight".into(), vec![m, self.attention_dim, 1]));
        out.push(("asp.conv.bias".into(), vec![m]));
        for n in ["gamma", "beta", "mean", "var"] {
            out.push((format!("asp_bn.{n}"), vec![2 * m]));
        }
        out.push(("fc.weight".into(), vec![self.embedding_dim, 2 * m]));
        out.push(("fc.bias".into(), vec![self.embedding_dim]));
        out
    }
}

/// Conv, ReLU, batch norm.
#[derive(Debug, Clone)]
struct Tdnn {
    conv: Conv1d,
    bn: BatchNorm,
}

impl Tdnn {
    fn load(
        a: &TensorArchive,
        prefix: &str,
        input: usize,
        output: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::load(a, &format!("{prefix}.conv"), input, output, kernel, dilation)?,
            bn: BatchNorm::load(a, &format!("{prefix}.bn"), output)?,
        })
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.conv.forward(x)?;
        y.data_mut().iter_mut().for_each(|v| *v = relu(*v));
        self.bn.apply_rows(&mut y);
        Ok(y)
    }
}

#[derive(Debug, Clone)]
struct SqueezeExcitation {
    fc1: Linear,
    fc2: Linear,
}

impl SqueezeExcitation {
    fn forward(&self, x: &mut Matrix) {
        let t = x.cols() as f64;
        let squeezed: Vec<f64> = x.iter_rows().map(|r| r.iter().sum::<f64>() / t).collect();
        let hidden: Vec<f64> = self.fc1.forward(&squeezed).into_iter().map(relu).collect();
        let gates: Vec<f64> = self.fc2.forward(&hidden).into_iter().map(sigmoid).collect();
        for (c, g) in gates.iter().enumerate() {
            x.row_mut(c).iter_mut().for_each(|v| *v *= g);
        }
    }
}

#[derive(Debug, Clone)]
struct SeRes2Block {
    tdnn1: Tdnn,
    res2: Vec<Tdnn>,
    tdnn2: Tdnn,
    se: SqueezeExcitation,
    scale: usize,
}

impl SeRes2Block {
    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.tdnn1.forward(x)?;
        let sub = h.rows() / self.scale;
        let t = h.cols();

        // Hierarchical residual: y0 = x0, y1 = f1(x1), yi = fi(xi + y{i-1}).
        let mut res = Matrix::zeros(h.rows(), t);
        let chunk = |m: &Matrix, j: usize| Matrix::from_vec(sub, t, m.data()[j * sub * t..(j + 1) * sub * t].to_vec());
        res.data_mut()[..sub * t].copy_from_slice(&h.data()[..sub * t]);
        let mut prev: Option<Matrix> = None;
        for j in 1..self.scale {
            let mut input = chunk(&h, j)?;
            if let Some(p) = &prev {
                input.data_mut().iter_mut().zip(p.data()).for_each(|(a, b)| *a += b);
            }
            let y = self.res2[j - 1].forward(&input)?;
            res.data_mut()[j * sub * t..(j + 1) * sub * t].copy_from_slice(y.data());
            prev = Some(y);
        }

        let mut out = self.tdnn2.forward(&res)?;
        self.se.forward(&mut out);
        out.data_mut().iter_mut().zip(x.data()).for_each(|(o, r)| *o += r);
        Ok(out)
    }
}

/// Weights of the attentive statistics pooling layer.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    tdnn: Tdnn,
    conv: Conv1d,
}

impl AttentionWeights {
    pub fn load(a: &TensorArchive, prefix: &str, channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            tdnn: Tdnn::load(a, &format!("{prefix}.tdnn"), 3 * channels, hidden, 1, 1)?,
            conv: Conv1d::load(a, &format!("{prefix}.conv"), hidden, channels, 1, 1)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }
}

/// Result of attentive statistics pooling.
#[derive(Debug, Clone)]
pub struct PooledStats {
    /// Weighted means followed by weighted standard deviations (length 2C).
    pub stats: Vec<f64>,
    /// Attention weights, `channels x time`; every row sums to one.
    pub attention: Matrix,
}

fn mean_std(row: &[f64], weights: Option<&[f64]>) -> (f64, f64) {
    let t = row.len() as f64;
    let (mean, var) = match weights {
        Some(w) => {
            let mean: f64 = row.iter().zip(w).map(|(x, a)| a * x).sum();
            let var: f64 = row.iter().zip(w).map(|(x, a)| a * (x - mean).powi(2)).sum();
            (mean, var)
        }
        None => {
            let mean = row.iter().sum::<f64>() / t;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
            (mean, var)
        }
    };
    (mean, var.max(0.0).sqrt())
}

/// Channel-dependent attentive statistics pooling over a `C x M` activation.
///
/// Each frame is scored from its own features plus the utterance-level mean
/// and standard deviation; a per-channel softmax over time yields weights
/// used for the weighted mean and standard deviation.
pub fn attentive_stats_pool(h: &Matrix, w: &AttentionWeights) -> Result<PooledStats> {
    let (c, t) = h.shape();
    if t == 0 {
        return Err(Error::invalid("attentive pooling needs at least one frame"));
    }
    if c != w.channels() {
        return Err(Error::invalid(format!(
            "attentive pooling weights expect {} channels, got {c}",
            w.channels()
        )));
    }

    let mut context = Matrix::zeros(3 * c, t);
    for ch in 0..c {
        let row = h.row(ch);
        let (mean, std) = mean_std(row, None);
        context.row_mut(ch).copy_from_slice(row);
        context.row_mut(c + ch).iter_mut().for_each(|v| *v = mean);
        context.row_mut(2 * c + ch).iter_mut().for_each(|v| *v = std);
    }
    let mut hidden = w.tdnn.forward(&context)?;
    hidden.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    let mut attention = w.conv.forward(&hidden)?;

    for ch in 0..c {
        let row = attention.row_mut(ch);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }

    let mut stats = vec![0.0; 2 * c];
    for ch in 0..c {
        let (mean, std) = mean_std(h.row(ch), Some(attention.row(ch)));
        stats[ch] = mean;
        stats[c + ch] = std;
    }
    Ok(PooledStats { stats, attention })
}

/// Loaded ECAPA-TDNN network.
#[derive(Debug, Clone)]
pub struct SpeakerEncoder {
    config: SpeakerEncoderConfig,
    stem: Tdnn,
    blocks: Vec<SeRes2Block>,
    mfa: Tdnn,
    attention: AttentionWeights,
    asp_bn: BatchNorm,
    fc: Linear,
}

impl SpeakerEncoder {
    pub fn new(config: &SpeakerEncoderConfig, a: &TensorArchive) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let sub = c / config.res2_scale;
        let stem = Tdnn::load(a, "stem", config.input_dim, c, config.stem_kernel, 1)?;
        let blocks = config
            .dilations
            .iter()
            .enumerate()
            .map(|(b, &d)| {
                let p = format!("blocks.{b}");
                Ok(SeRes2Block {
                    tdnn1: Tdnn::load(a, &format!("{p}.tdnn1"), c, c, 1, 1)?,
                    res2: (0..config.res2_scale - 1)
                        .map(|j| Tdnn::load(a, &format!("{p}.res2.{j}"), sub, sub, config.block_kernel, d))
                        .collect::<Result<_>>()?,
                    tdnn2: Tdnn::load(a, &format!("{p}.tdnn2"), c, c, 1, 1)?,
                    se: SqueezeExcitation {
                        fc1: Linear::load(a, &format!("{p}.se.fc1"), c, config.se_channels)?,
                        fc2: Linear::load(a, &format!("{p}.se.fc2"), config.se_channels, c)?,
                    },
                    scale: config.res2_scale,
                })
            })
            .collect::<Result<_>>()?;
        let m = config.mfa_channels;
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            mfa: Tdnn::load(a, "mfa", c * config.blocks(), m, 1, 1)?,
            attention: AttentionWeights::load(a, "asp", m, config.attention_dim)?,
            asp_bn: BatchNorm::load(a, "asp_bn", 2 * m)?,
            fc: Linear::load(a, "fc", 2 * m, config.embedding_dim)?,
        })
    }

    pub fn config(&self) -> &SpeakerEncoderConfig {
        &self.config
    }

    /// Runs the network on frames x coefficients features.
    pub fn forward_with_attention(&self, mfcc: &MfccMap) -> Result<(EmbeddingVector, Matrix)> {
        if mfcc.frames() == 0 {
            return Err(Error::invalid("speaker encoder needs at least one frame"));
        }
        if mfcc.coefficients() != self.config.input_dim {
            return Err(Error::invalid(format!(
                "speaker encoder expects {} coefficients, got {}",
                self.config.input_dim,
                mfcc.coefficients()
            )));
        }
        let x = mfcc.values.transpose();
        let mut h = self.stem.forward(&x)?;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(&h)?;
            outputs.push(h.clone());
        }
        let t = h.cols();
        let mut stacked = Vec::with_capacity(outputs.len() * h.rows() * t);
        for o in &outputs {
            stacked.extend_from_slice(o.data());
        }
        let stacked = Matrix::from_vec(outputs.len() * h.rows(), t, stacked)?;
        let aggregated = self.mfa.forward(&stacked)?;
        let pooled = attentive_stats_pool(&aggregated, &self.attention)?;
        let mut stats = pooled.stats;
        self.asp_bn.apply_vec(&mut stats);
        let embedding = self.fc.forward(&stats);
        Ok((
            EmbeddingVector::new(EmbeddingKind::Speaker, embedding)?,
            pooled.attention,
        ))
    }

    pub fn forward(&self, mfcc: &MfccMap) -> Result<EmbeddingVector> {
        self.forward_with_attention(mfcc).map(|(e, _)| e)
    }
}

/// One-shot speaker embedding; prefer [`SpeakerEncoder`] for repeated use.
pub fn speaker_embed(
    mfcc: &MfccMap,
    weights: &TensorArchive,
    config: &SpeakerEncoderConfig,
) -> Result<EmbeddingVector> {
    SpeakerEncoder::new(config, weights)?.forward(mfcc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{init_weights, EncoderConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SpeakerEncoderConfig {
        SpeakerEncoderConfig {
            input_dim: 8,
            channels: 8,
            stem_kernel: 5,
            block_kernel: 3,
            dilations: vec![2, 3],
            res2_scale: 4,
            se_channels: 4,
            mfa_channels: 12,
            attention_dim: 4,
            embedding_dim: 6,
        }
    }

    fn archive(seed: u64) -> TensorArchive {
        init_weights(&EncoderConfig::Speaker(tiny()), seed)
            .unwrap()
            .archive()
            .clone()
    }

    fn random_map(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> MfccMap {
        let data = (0..frames * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        MfccMap {
            values: Matrix::from_vec(frames, dim, data).unwrap(),
        }
    }

    #[test]
    fn output_length_is_fixed() {
        let enc = SpeakerEncoder::new(&tiny(), &archive(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for frames in [1, 2, 50, 500] {
            let e = enc.forward(&random_map(&mut rng, frames, 8)).unwrap();
            assert_eq!(e.len(), 6);
            assert!(e.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn repeated_constant_frames_give_same_embedding() {
        let enc = SpeakerEncoder::new(&tiny(), &archive(3)).unwrap();
        let frame: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let map = |n: usize| MfccMap {
            values: Matrix::from_rows(&vec![frame.clone(); n]).unwrap(),
        };
        let a = enc.forward(&map(20)).unwrap();
        let b = enc.forward(&map(40)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let enc = SpeakerEncoder::new(&tiny(), &archive(4)).unwrap();
        let m = random_map(&mut ChaCha8Rng::seed_from_u64(5), 37, 8);
        assert_eq!(enc.forward(&m).unwrap(), enc.forward(&m).unwrap());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let enc = SpeakerEncoder::new(&tiny(), &archive(6)).unwrap();
        let m = random_map(&mut ChaCha8Rng::seed_from_u64(7), 61, 8);
        let (_, att) = enc.forward_with_attention(&m).unwrap();
        assert_eq!(att.shape(), (12, 61));
        for row in att.iter_rows() {
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_frame_pooling_returns_frame_and_zero_std() {
        let a = archive(8);
        let w = AttentionWeights::load(&a, "asp", 12, 4).unwrap();
        let h = Matrix::from_vec(12, 1, (0..12).map(|i| i as f64 - 4.5).collect()).unwrap();
        let p = attentive_stats_pool(&h, &w).unwrap();
        assert!(p.attention.data().iter().all(|&v| v == 1.0));
        assert_eq!(&p.stats[..12], h.data());
        assert!(p.stats[12..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn zero_attention_weights_give_row_means() {
        let mut a = archive(9);
        for name in ["asp.conv.weight", "asp.conv.bias"] {
            a.tensor_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let w = AttentionWeights::load(&a, "asp", 12, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = Matrix::from_vec(12, 9, (0..108).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = attentive_stats_pool(&h, &w).unwrap();
        for (c, row) in h.iter_rows().enumerate() {
            let mean = row.iter().sum::<f64>() / 9.0;
            assert!((p.stats[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let enc = SpeakerEncoder::new(&tiny(), &archive(11)).unwrap();
        let m = random_map(&mut ChaCha8Rng::seed_from_u64(0), 10, 7);
        assert!(enc.forward(&m).is_err());
        let empty = MfccMap {
            values: Matrix::zeros(0, 8),
        };
        assert!(enc.forward(&empty).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.res2_scale = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.dilations.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.stem_kernel = 4;
        assert!(c.validate().is_err());
        assert_eq!(SpeakerEncoderConfig::compact().embedding_dim, 192);
    }
}
