//! Kernel SVM: training by SMO, decision scores, and grid search over C,
//! gamma and kernel.

pub mod grid;
pub mod kernel;
pub mod smo;

use serde::{Deserialize, Serialize};

pub use grid::{grid_search, GammaMode, Grid, GridConfig, GridEntry, GridSearchResult};
pub use kernel::{kernel_eval, KernelKind, KernelSpec};
pub use smo::{dual_objective, solve_dual, DualSolution, SmoParams, DEFAULT_TOL, KKT_TOL};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Standardizer};
use crate::label::{require_both_classes, Label};
use crate::tensor::Matrix;

/// Standardized rows with labels and the standardizer that produced them.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    x: Matrix,
    y: Vec<Label>,
    standardizer: Standardizer,
}

impl LabeledSet {
    /// Fits a standardizer on `raw` and applies it.
    pub fn fit(raw: &Matrix, y: Vec<Label>) -> Result<Self> {
        let s = crate::features::fit_standardizer(raw)?;
        Self::with_standardizer(raw, y, s)
    }

    /// Applies an already fitted standardizer.
    pub fn with_standardizer(raw: &Matrix, y: Vec<Label>, standardizer: Standardizer) -> Result<Self> {
        if raw.rows() != y.len() {
            return Err(Error::invalid(format!("{} rows but {} labels", raw.rows(), y.len())));
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        let x = standardizer.apply_matrix(raw)?;
        Ok(Self { x, y, standardizer })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[Label] {
        &self.y
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub(crate) fn signs(&self) -> Vec<f64> {
        self.y.iter().map(|l| l.sign()).collect()
    }
}

/// Trained classifier. Positive scores mean `DF`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    /// One row per support vector, in standardized coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Score of an already standardized slice.
    pub fn decision_standardized(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Standardizes raw features with the stored standardizer, then scores.
    pub fn decision_raw(&self, raw: &[f64]) -> Result<f64> {
        self.decision_standardized(&self.standardizer.apply_slice(raw)?)
    }

    /// Scores every row of a standardized matrix.
    pub fn decision_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.decision_standardized(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.support_vectors.len() != self.dual_coefs.len() {
            return Err(Error::invalid("support vector and coefficient counts differ"));
        }
        if self.support_vectors.iter().any(|sv| sv.len() != self.dim()) {
            return Err(Error::invalid("support vector width differs from standardizer"));
        }
        if !self.standardizer.fitted {
            return Err(Error::invalid("model standardizer is not fitted"));
        }
        let finite = self.bias.is_finite()
            && self.dual_coefs.iter().all(|v| v.is_finite())
            && self.support_vectors.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

/// Trains with default solver settings.
pub fn svm_train(data: &LabeledSet, c: f64, kernel: KernelSpec) -> Result<SvmModel> {
    svm_train_with(data, c, kernel, &SmoParams::default())
}

pub fn svm_train_with(data: &LabeledSet, c: f64, kernel: KernelSpec, params: &SmoParams) -> Result<SvmModel> {
    require_both_classes(&data.y, "training data").map_err(|e| Error::Training(e.to_string()))?;
    let y = data.signs();
    let sol = solve_dual(&data.x, &y, c, &kernel, params)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(data.x.row(i).to_vec());
            dual_coefs.push(a * y[i]);
        }
    }
    Ok(SvmModel {
        kernel,
        c,
        support_vectors,
        dual_coefs,
        bias: sol.bias,
        standardizer: data.standardizer.clone(),
        iterations: sol.iterations,
    })
}

pub fn svm_decision(m: &SvmModel, f: &FeatureVector) -> Result<f64> {
    if !f.is_standardized() {
        return Err(Error::invalid("feature vector must be standardized before scoring"));
    }
    m.decision_standardized(f.values())
}

pub fn svm_predict(m: &SvmModel, f: &FeatureVector) -> Result<Label> {
    Ok(Label::from_score(svm_decision(m, f)?))
}
