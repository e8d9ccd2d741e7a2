//! Prosody reference encoder: six strided 2-D convolutions over the log-mel
//! image, a single-layer GRU over the remaining time steps, and a tanh
//! projection of the final hidden state.

use serde::{Deserialize, Serialize};

use super::archive::{Tensor, TensorArchive};
use super::nn::{halve, relu, BatchNorm, Conv2dStride2, FeatureMap3, Linear};
use super::{EmbeddingKind, EmbeddingVector};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Matrix};

pub const PROSODY_ARCHITECTURE: &str = "prosody-encoder";
pub const PROSODY_CONV_LAYERS: usize = 6;

/// Frames needed for six stride-2 reductions; shorter inputs are zero-padded.
pub const PROSODY_MIN_FRAMES: usize = 1 << PROSODY_CONV_LAYERS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyEncoderConfig {
    pub input_bands: usize,
    pub conv_channels: [usize; PROSODY_CONV_LAYERS],
    pub gru_hidden: usize,
    pub embedding_dim: usize,
}

impl ProsodyEncoderConfig {
    pub fn full() -> Self {
        Self {
            input_bands: 80,
            conv_channels: [32, 32, 64, 64, 128, 128],
            gru_hidden: 128,
            embedding_dim: 128,
        }
    }

    /// Narrow variant with the same topology and output size.
    pub fn compact() -> Self {
        Self {
            conv_channels: [8, 8, 16, 16, 32, 32],
            gru_hidden: 64,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_bands == 0 || self.gru_hidden == 0 || self.embedding_dim == 0 || self.conv_channels.contains(&0) {
            return Err(Error::invalid("prosody encoder dimensions must be >= 1"));
        }
        Ok(())
    }

    /// Frequency bins left after the conv stack.
    pub fn reduced_bands(&self) -> usize {
        (0..PROSODY_CONV_LAYERS).fold(self.input_bands, |n, _| halve(n))
    }

    /// Width of each GRU input step (channels times remaining bins).
    pub fn gru_input_dim(&self) -> usize {
        self.conv_channels[PROSODY_CONV_LAYERS - 1] * self.reduced_bands()
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("conv.{i}.bias"), vec![cout]));
            for n in ["gamma", "beta", "mean", "var"] {
                out.push((format!("conv.{i}.bn.{n}"), vec![cout]));
            }
            cin = cout;
        }
        let h = self.gru_hidden;
        out.push(("gru.weight_ih".into(), vec![3 * h, self.gru_input_dim()]));
        out.push(("gru.weight_hh".into(), vec![3 * h, h]));
        out.push(("gru.bias_ih".into(), vec![3 * h]));
        out.push(("gru.bias_hh".into(), vec![3 * h]));
        out.push(("fc.weight".into(), vec![self.embedding_dim, h]));
        out.push(("fc.bias".into(), vec![self.embedding_dim]));
        out
    }
}

/// GRU parameters with gates stacked as reset, update, candidate.
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub weight_ih: Matrix,
    pub weight_hh: Matrix,
    pub bias_ih: Vec<f64>,
    pub bias_hh: Vec<f64>,
}

impl GruWeights {
    pub fn new(weight_ih: Matrix, weight_hh: Matrix, bias_ih: Vec<f64>, bias_hh: Vec<f64>) -> Result<Self> {
        let h3 = weight_hh.rows();
        if !h3.is_multiple_of(3)
            || weight_hh.cols() * 3 != h3
            || weight_ih.rows() != h3
            || bias_ih.len() != h3
            || bias_hh.len() != h3
        {
            return Err(Error::invalid("inconsistent GRU weight shapes"));
        }
        Ok(Self {
            weight_ih,
            weight_hh,
            bias_ih,
            bias_hh,
        })
    }

    pub fn load(a: &TensorArchive, input: usize, hidden: usize) -> Result<Self> {
        let m = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
            Matrix::from_vec(rows, cols, a.expect(name, &[rows, cols])?.to_f64())
        };
        Self::new(
            m("gru.weight_ih", 3 * hidden, input)?,
            m("gru.weight_hh", 3 * hidden, hidden)?,
            a.expect("gru.bias_ih", &[3 * hidden])?.to_f64(),
            a.expect("gru.bias_hh", &[3 * hidden])?.to_f64(),
        )
    }

    pub fn hidden(&self) -> usize {
        self.weight_hh.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.weight_ih.cols()
    }
}

/// Runs a GRU from a zero state over the rows of `seq` and returns the final
/// hidden state.
pub fn gru_forward(seq: &Matrix, w: &GruWeights) -> Result<Vec<f64>> {
    if seq.rows() == 0 {
        return Err(Error::invalid("GRU needs at least one time step"));
    }
    if seq.cols() != w.input_dim() {
        return Err(Error::invalid(format!(
            "GRU expects input width {}, got {}",
            w.input_dim(),
            seq.cols()
        )));
    }
    let h = w.hidden();
    let mut state = vec![0.0; h];
    let mut gi = vec![0.0; 3 * h];
    let mut gh = vec![0.0; 3 * h];
    for x in seq.iter_rows() {
        for (g, (row, b)) in gi.iter_mut().zip(w.weight_ih.iter_rows().zip(&w.bias_ih)) {
            *g = dot(row, x) + b;
        }
        for (g, (row, b)) in gh.iter_mut().zip(w.weight_hh.iter_rows().zip(&w.bias_hh)) {
            *g = dot(row, &state) + b;
        }
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            state[j] = (1.0 - z) * n + z * state[j];
        }
    }
    Ok(state)
}

#[derive(Debug, Clone)]
struct ConvLayer {
    conv: Conv2dStride2,
    bn: BatchNorm,
}

impl ConvLayer {
    fn forward(&self, x: &FeatureMap3) -> Result<FeatureMap3> {
        let mut y = self.conv.forward(x)?;
        self.normalize(&mut y);
        Ok(y)
    }

    fn normalize(&self, y: &mut FeatureMap3) {
        let plane = y.height * y.width;
        for (c, chunk) in y.data.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = relu(self.bn.apply_channel(c, *v)));
        }
    }
}

/// Single-channel image of the log-mel map, zero-padded to the minimum length.
fn input_map(mel: &MelSpectrogram) -> FeatureMap3 {
    let frames = mel.frames().max(PROSODY_MIN_FRAMES);
    let bands = mel.bands();
    let mut data = vec![0.0; frames * bands];
    data[..mel.values.data().len()].copy_from_slice(mel.values.data());
    FeatureMap3 {
        channels: 1,
        height: frames,
        width: bands,
        data,
    }
}

/// Sets the running mean and variance of every conv batch norm to the
/// per-channel statistics of its input over `mels`, one layer at a time so
/// each layer sees already calibrated activations. Other tensors are kept.
pub fn calibrate_prosody_batch_norm(
    config: &ProsodyEncoderConfig,
    archive: &TensorArchive,
    mels: &[MelSpectrogram],
) -> Result<TensorArchive> {
    if mels.is_empty() {
        return Err(Error::invalid("calibration needs at least one mel spectrogram"));
    }
    let mut archive = archive.clone();
    let encoder = ProsodyEncoder::new(config, &archive)?;
    let mut maps: Vec<FeatureMap3> = mels.iter().map(input_map).collect();
    for (i, layer) in encoder.convs.iter().enumerate() {
        let mut outs: Vec<FeatureMap3> = maps.iter().map(|x| layer.conv.forward(x)).collect::<Result<_>>()?;
        let channels = outs[0].channels;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut count = 0usize;
        for y in &outs {
            let plane = y.height * y.width;
            for (c, chunk) in y.data.chunks(plane).enumerate() {
                sum[c] += chunk.iter().sum::<f64>();
                sq[c] += chunk.iter().map(|v| v * v).sum::<f64>();
            }
            count += plane;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0)).collect();
        let prefix = format!("conv.{i}.bn");
        archive.insert(format!("{prefix}.mean"), Tensor::from_f64(vec![channels], &mean)?);
        archive.insert(format!("{prefix}.var"), Tensor::from_f64(vec![channels], &var)?);
        let calibrated = ConvLayer {
            conv: layer.conv.clone(),
            bn: BatchNorm::load(&archive, &prefix, channels)?,
        };
        outs.iter_mut().for_each(|y| calibrated.normalize(y));
        maps = outs;
    }
    archive.metadata.insert("calibrated_on".into(), mels.len().to_string());
    Ok(archive)
}

/// Loaded prosody encoder.
#[derive(Debug, Clone)]
pub struct ProsodyEncoder {
    config: ProsodyEncoderConfig,
    convs: Vec<ConvLayer>,
    gru: GruWeights,
    fc: Linear,
}

impl ProsodyEncoder {
    pub fn new(config: &ProsodyEncoderConfig, a: &TensorArchive) -> Result<Self> {
        config.validate()?;
        let mut cin = 1;
        let mut convs = Vec::with_capacity(PROSODY_CONV_LAYERS);
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            convs.push(ConvLayer {
                conv: Conv2dStride2::load(a, &format!("conv.{i}"), cin, cout)?,
                bn: BatchNorm::load(a, &format!("conv.{i}.bn"), cout)?,
            });
            cin = cout;
        }
        Ok(Self {
            config: config.clone(),
            convs,
            gru: GruWeights::load(a, config.gru_input_dim(), config.gru_hidden)?,
            fc: Linear::load(a, "fc", config.gru_hidden, config.embedding_dim)?,
        })
    }

    pub fn config(&self) -> &ProsodyEncoderConfig {
        &self.config
    }

    pub fn forward(&self, mel: &MelSpectrogram) -> Result<EmbeddingVector> {
        if mel.frames() == 0 {
            return Err(Error::invalid("prosody encoder needs at least one frame"));
        }
        if mel.bands() != self.config.input_bands {
            return Err(Error::invalid(format!(
                "prosody encoder expects {} mel bands, got {}",
                self.config.input_bands,
                mel.bands()
            )));
        }
        let mut x = input_map(mel);
        for layer in &self.convs {
            x = layer.forward(&x)?;
        }

        // [C][T][F] -> T rows of C*F (channel-major within each step)
        let (c, t, f) = (x.channels, x.height, x.width);
        let mut seq = Matrix::zeros(t, c * f);
        for step in 0..t {
            let row = seq.row_mut(step);
            for ch in 0..c {
                for bin in 0..f {
                    row[ch * f + bin] = x.at(ch, step, bin);
                }
            }
        }
        let state = gru_forward(&seq, &self.gru)?;
        let out: Vec<f64> = self.fc.forward(&state).into_iter().map(f64::tanh).collect();
        EmbeddingVector::new(EmbeddingKind::Prosody, out)
    }
}

/// One-shot prosody embedding; prefer [`ProsodyEncoder`] for repeated use.
pub fn prosody_embed(
    mel: &MelSpectrogram,
    weights: &TensorArchive,
    config: &ProsodyEncoderConfig,
) -> Result<EmbeddingVector> {
    ProsodyEncoder::new(config, weights)?.forward(mel)
}
