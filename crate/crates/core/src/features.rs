//! Classifier input assembly: embedding concatenation and z-score
//! standardization.

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingKind, EmbeddingVector};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Columns whose training spread is below this (relative to their mean) are
/// treated as constant.
const DEGENERATE_STD: f64 = 1e-12;

/// Classifier input, optionally standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    standardized: bool,
}

impl FeatureVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            standardized: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
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

/// `[speaker, prosody]` in that order.
pub fn concat(speaker: &EmbeddingVector, prosody: &EmbeddingVector) -> Result<FeatureVector> {
    if speaker.kind() != EmbeddingKind::Speaker {
        return Err(Error::invalid(format!(
            "first embedding must be a speaker embedding, got {:?}",
            speaker.kind()
        )));
    }
    if prosody.kind() != EmbeddingKind::Prosody {
        return Err(Error::invalid(format!(
            "second embedding must be a prosody embedding, got {:?}",
            prosody.kind()
        )));
    }
    let mut values = Vec::with_capacity(speaker.len() + prosody.len());
    values.extend_from_slice(speaker.values());
    values.extend_from_slice(prosody.values());
    Ok(FeatureVector::raw(values))
}

/// Which part of the concatenated vector a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSlice {
    Combined,
    Speaker,
    Prosody,
}

impl FeatureSlice {
    pub const ALL: [FeatureSlice; 3] = [FeatureSlice::Prosody, FeatureSlice::Speaker, FeatureSlice::Combined];

    /// Column range inside a `[speaker, prosody]` vector.
    pub fn range(self, speaker_dim: usize, total: usize) -> std::ops::Range<usize> {
        match self {
            FeatureSlice::Combined => 0..total,
            FeatureSlice::Speaker => 0..speaker_dim,
            FeatureSlice::Prosody => speaker_dim..total,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSlice::Combined => "combined",
            FeatureSlice::Speaker => "speaker",
            FeatureSlice::Prosody => "prosody",
        }
    }
}

impl std::str::FromStr for FeatureSlice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "combined" | "all" => Ok(FeatureSlice::Combined),
            "speaker" => Ok(FeatureSlice::Speaker),
            "prosody" => Ok(FeatureSlice::Prosody),
            other => Err(Error::invalid(format!("unknown feature slice `{other}`"))),
        }
    }
}

/// Per-dimension mean and population standard deviation from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted: bool,
}

impl Standardizer {
    /// A placeholder that refuses to transform until replaced by a fit.
    pub fn unfitted(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            fitted: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, f: &FeatureVector) -> Result<FeatureVector> {
        if f.is_standardized() {
            return Err(Error::invalid("feature vector is already standardized"));
        }
        Ok(FeatureVector {
            values: self.apply_slice(f.values())?,
            standardized: true,
        })
    }

    pub fn apply_slice(&self, values: &[f64]) -> Result<Vec<f64>> {
        if !self.fitted {
            return Err(Error::invalid("standardizer has not been fitted"));
        }
        if values.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature length {} does not match standardizer dimension {}",
                values.len(),
                self.dim()
            )));
        }
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s == 0.0 { 0.0 } else { (x - m) / s })
            .collect())
    }

    pub fn apply_matrix(&self, rows: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.rows() * rows.cols());
        for r in rows.iter_rows() {
            data.extend(self.apply_slice(r)?);
        }
        Matrix::from_vec(rows.rows(), rows.cols(), data)
    }
}

/// Fits a [`Standardizer`] on training rows (at least two).
pub fn fit_standardizer(train: &Matrix) -> Result<Standardizer> {
    let (n, dim) = train.shape();
    if n < 2 {
        return Err(Error::invalid(format!(
            "standardizer needs at least 2 training rows, got {n}"
        )));
    }
    if !train.is_finite() {
        return Err(Error::NonFinite("training features".into()));
    }
    let mut mean = vec![0.0; dim];
    for r in train.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in train.iter_rows() {
        var.iter_mut()
            .zip(r.iter().zip(&mean))
            .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n as f64).sqrt();
            if s <= DEGENERATE_STD * m.abs().max(1.0) {
                0.0
            } else {
                s
            }
        })
        .collect();
    Ok(Standardizer {
        mean,
        std,
        fitted: true,
    })
}

/// Convenience wrapper matching [`Standardizer::apply`].
pub fn apply_standardizer(s: &Standardizer, f: &FeatureVector) -> Result<FeatureVector> {
    s.apply(f)
}

/// Mean over columns of the per-column population variance.
pub fn mean_column_variance(m: &Matrix) -> f64 {
    let (n, dim) = m.shape();
    if n == 0 || dim == 0 {
        return 0.0;
    }
    (0..dim)
        .map(|c| {
            let col = m.column(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64
        })
        .sum::<f64>()
        / dim as f64
}
