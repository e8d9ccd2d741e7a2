//! Speaker and prosody embedding extractors and their weight archives.

pub mod archive;
pub mod nn;
pub mod prosody;
pub mod speaker;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use archive::{Tensor, TensorArchive};
pub use prosody::{
    calibrate_prosody_batch_norm, gru_forward, prosody_embed, GruWeights, ProsodyEncoder, ProsodyEncoderConfig,
};
pub use speaker::{
    attentive_stats_pool, speaker_embed, AttentionWeights, PooledStats, SpeakerEncoder, SpeakerEncoderConfig,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Speaker,
    Prosody,
    Combined,
}

/// Fixed-length embedding tagged with the extractor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    kind: EmbeddingKind,
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(kind: EmbeddingKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind:?} embedding")));
        }
        Ok(Self { kind, values })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Architecture declared by a weight archive.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderConfig {
    Speaker(SpeakerEncoderConfig),
    Prosody(ProsodyEncoderConfig),
}

impl EncoderConfig {
    pub fn architecture(&self) -> &'static str {
        match self {
            EncoderConfig::Speaker(_) => speaker::SPEAKER_ARCHITECTURE,
            EncoderConfig::Prosody(_) => prosody::PROSODY_ARCHITECTURE,
        }
    }

    fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            EncoderConfig::Speaker(c) => c.tensor_shapes(),
            EncoderConfig::Prosody(c) => c.tensor_shapes(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            EncoderConfig::Speaker(c) => serde_json::to_value(c),
            EncoderConfig::Prosody(c) => serde_json::to_value(c),
        }
        .expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Speaker(c) => c.validate(),
            EncoderConfig::Prosody(c) => c.validate(),
        }
    }
}

/// A tensor archive validated against the architecture it declares.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    config: EncoderConfig,
    archive: TensorArchive,
}

impl WeightArchive {
    pub fn from_archive(archive: TensorArchive) -> Result<Self> {
        let config = match archive.architecture.as_str() {
            speaker::SPEAKER_ARCHITECTURE => EncoderConfig::Speaker(serde_json::from_value(archive.config.clone())?),
            prosody::PROSODY_ARCHITECTURE => EncoderConfig::Prosody(serde_json::from_value(archive.config.clone())?),
            other => return Err(Error::MalformedArchive(format!("unknown architecture `{other}`"))),
        };
        config.validate()?;
        for (name, shape) in config.tensor_shapes() {
            archive.expect(&name, &shape)?;
        }
        archive.check_finite()?;
        Ok(Self { config, archive })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn archive(&self) -> &TensorArchive {
        &self.archive
    }

    pub fn speaker_config(&self) -> Result<&SpeakerEncoderConfig> {
        match &self.config {
            EncoderConfig::Speaker(c) => Ok(c),
            _ => Err(Error::invalid("archive does not hold a speaker encoder")),
        }
    }

    pub fn prosody_config(&self) -> Result<&ProsodyEncoderConfig> {
        match &self.config {
            EncoderConfig::Prosody(c) => Ok(c),
            _ => Err(Error::invalid("archive does not hold a prosody encoder")),
        }
    }

    pub fn speaker_encoder(&self) -> Result<SpeakerEncoder> {
        SpeakerEncoder::new(self.speaker_config()?, &self.archive)
    }

    pub fn prosody_encoder(&self) -> Result<ProsodyEncoder> {
        ProsodyEncoder::new(self.prosody_config()?, &self.archive)
    }

    /// Prosody archive with batch-norm statistics measured on `mels`.
    pub fn calibrate_prosody(&self, mels: &[crate::dsp::MelSpectrogram]) -> Result<WeightArchive> {
        let archive = prosody::calibrate_prosody_batch_norm(self.prosody_config()?, &self.archive, mels)?;
        WeightArchive::from_archive(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.archive.save(path)
    }

    pub fn digest(&self) -> Result<String> {
        self.archive.digest()
    }
}

/// Reads and validates a weight archive.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightArchive> {
    WeightArchive::from_archive(TensorArchive::load(path)?)
}

/// Seeded random weights: N(0, 1/fan_in) for weight tensors, zero biases,
/// and batch-norm statistics drawn near the identity transform.
pub fn init_weights(config: &EncoderConfig, seed: u64) -> Result<WeightArchive> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = TensorArchive::new(config.architecture(), config.to_json());
    archive.metadata.insert("seed".into(), seed.to_string());
    archive.metadata.insert("init".into(), "random".into());
    for (name, shape) in config.tensor_shapes() {
        let n: usize = shape.iter().product();
        let leaf = name.rsplit('.').next().unwrap_or_default();
        let data: Vec<f32> = if leaf.starts_with("weight") {
            let fan_in: usize = shape[1..].iter().product();
            let scale = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                })
                .collect()
        } else {
            let (lo, hi) = match leaf {
                "gamma" | "var" => (0.8, 1.2),
                "beta" | "mean" => (-0.1, 0.1),
                _ => (0.0, 0.0),
            };
            (0..n)
                .map(|_| {
                    if lo == hi {
                        lo as f32
                    } else {
                        rng.random_range(lo..hi) as f32
                    }
                })
                .collect()
        };
        archive.insert(name, Tensor::new(shape, data)?);
    }
    WeightArchive::from_archive(archive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_deterministic() {
        let cfg = EncoderConfig::Prosody(ProsodyEncoderConfig::compact());
        let a = init_weights(&cfg, 7).unwrap();
        let b = init_weights(&cfg, 7).unwrap();
        let c = init_weights(&cfg, 8).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn wrong_shape_names_tensor() {
        let cfg = EncoderConfig::Speaker(SpeakerEncoderConfig::compact());
        let w = init_weights(&cfg, 1).unwrap();
        let mut raw = w.archive().clone();
        raw.insert("fc.bias", Tensor::new(vec![5], vec![0.0; 5]).unwrap());
        match WeightArchive::from_archive(raw) {
            Err(Error::ShapeMismatch { name, expected, actual }) => {
                assert_eq!(name, "fc.bias");
                assert_eq!(expected, vec![192]);
                assert_eq!(actual, vec![5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_weights_rejected() {
        let cfg = EncoderConfig::Prosody(ProsodyEncoderConfig::compact());
        let w = init_weights(&cfg, 1).unwrap();
        let mut raw = w.archive().clone();
        raw.tensor_mut("fc.weight").unwrap().data[3] = f32::INFINITY;
        assert!(matches!(WeightArchive::from_archive(raw), Err(Error::NonFinite(_))));
    }

    #[test]
    fn missing_tensor_and_unknown_architecture() {
        let cfg = EncoderConfig::Prosody(ProsodyEncoderConfig::compact());
        let w = init_weights(&cfg, 1).unwrap();
        let mut raw = TensorArchive::new(w.archive().architecture.clone(), w.archive().config.clone());
        for (name, t) in w.archive().tensors().filter(|(n, _)| *n != "gru.bias_hh") {
            raw.insert(name, t.clone());
        }
        assert!(matches!(
            WeightArchive::from_archive(raw),
            Err(Error::MissingTensor(n)) if n == "gru.bias_hh"
        ));
        let mut other = w.archive().clone();
        other.architecture = "wav2vec".into();
        assert!(WeightArchive::from_archive(other).is_err());
    }

    #[test]
    fn wrong_encoder_kind_is_an_error() {
        let cfg = EncoderConfig::Prosody(ProsodyEncoderConfig::compact());
        let w = init_weights(&cfg, 1).unwrap();
        assert!(w.speaker_encoder().is_err());
        assert!(w.prosody_encoder().is_ok());
    }

    #[test]
    fn embedding_vector_rejects_non_finite() {
        assert!(EmbeddingVector::new(EmbeddingKind::Speaker, vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::new(EmbeddingKind::Speaker, vec![]).is_err());
    }
}
