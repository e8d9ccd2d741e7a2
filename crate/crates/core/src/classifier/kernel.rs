use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Polynomial,
    Sigmoid,
}

impl KernelKind {
    /// Enumeration order used by grid search.
    pub const ALL: [KernelKind; 3] = [KernelKind::Rbf, KernelKind::Polynomial, KernelKind::Sigmoid];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Polynomial => "poly",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        Self::new(KernelKind::Rbf, gamma)
    }

    pub fn polynomial(gamma: f64, degree: u32, coef0: f64) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            gamma,
            degree,
            coef0,
        }
    }

    pub fn sigmoid(gamma: f64, coef0: f64) -> Self {
        Self {
            kind: KernelKind::Sigmoid,
            gamma,
            degree: 3,
            coef0,
        }
    }

    /// Degree 3 and zero offset.
    pub fn new(kind: KernelKind, gamma: f64) -> Self {
        Self {
            kind,
            gamma,
            degree: 3,
            coef0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!(
                "kernel gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !self.coef0.is_finite() {
            return Err(Error::invalid("kernel coef0 must be finite"));
        }
        if self.kind == KernelKind::Polynomial && self.degree == 0 {
            return Err(Error::invalid("polynomial degree must be >= 1"));
        }
        Ok(())
    }

    /// Kernel value without length checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Polynomial => (self.gamma * dot(u, v) + self.coef0).powi(self.degree as i32),
            KernelKind::Sigmoid => (self.gamma * dot(u, v) + self.coef0).tanh(),
        }
    }
}

pub fn kernel_eval(k: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "kernel inputs differ in length: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(k.eval_unchecked(u, v))
}

/// Rows of the signed kernel matrix `Q_ij = y_i y_j K(x_i, x_j)`, either
/// precomputed in full or computed on demand behind an LRU cache.
pub(crate) enum QMatrix<'a> {
    Full(Vec<Arc<[f64]>>),
    Cached {
        x: &'a Matrix,
        y: &'a [f64],
        kernel: KernelSpec,
        cache: LruCache<usize, Arc<[f64]>>,
    },
}

impl<'a> QMatrix<'a> {
    pub(crate) fn new(x: &'a Matrix, y: &'a [f64], kernel: KernelSpec, full_limit: usize, cache_rows: usize) -> Self {
        if x.rows() <= full_limit {
            let rows = (0..x.rows()).map(|i| compute_row(x, y, &kernel, i)).collect();
            QMatrix::Full(rows)
        } else {
            let cap = NonZeroUsize::new(cache_rows.max(2)).expect("nonzero");
            QMatrix::Cached {
                x,
                y,
                kernel,
                cache: LruCache::new(cap),
            }
        }
    }

    pub(crate) fn row(&mut self, i: usize) -> Arc<[f64]> {
        match self {
            QMatrix::Full(rows) => rows[i].clone(),
            QMatrix::Cached { x, y, kernel, cache } => cache.get_or_insert(i, || compute_row(x, y, kernel, i)).clone(),
        }
    }

    #[cfg(test)]
    pub(crate) fn is_cached(&self) -> bool {
        matches!(self, QMatrix::Cached { .. })
    }
}

fn compute_row(x: &Matrix, y: &[f64], k: &KernelSpec, i: usize) -> Arc<[f64]> {
    let xi = x.row(i);
    (0..x.rows())
        .map(|j| y[i] * y[j] * k.eval_unchecked(xi, x.row(j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let u = [0.3, -1.2, 4.0];
        assert_eq!(kernel_eval(&KernelSpec::rbf(0.7), &u, &u).unwrap(), 1.0);
        let v = [2f64.ln().sqrt(), 0.0];
        let r = kernel_eval(&KernelSpec::rbf(1.0), &v, &[0.0, 0.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let p = KernelSpec::polynomial(1.0, 2, 0.0);
        assert_eq!(kernel_eval(&p, &[1.0, 1.0], &[1.0, 2.0]).unwrap(), 9.0);
        let s = KernelSpec::sigmoid(0.5, 0.1);
        let expect = (0.5f64 * 3.0 + 0.1).tanh();
        assert_eq!(kernel_eval(&s, &[1.0, 1.0], &[1.0, 2.0]).unwrap(), expect);
    }

    #[test]
    fn length_mismatch() {
        assert!(kernel_eval(&KernelSpec::rbf(1.0), &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gamma_must_be_positive() {
        assert!(KernelSpec::rbf(0.0).validate().is_err());
        assert!(KernelSpec::rbf(f64::NAN).validate().is_err());
        assert!(KernelSpec::polynomial(1.0, 0, 0.0).validate().is_err());
        assert!(KernelSpec::sigmoid(1.0, 0.0).validate().is_ok());
    }

    #[test]
    fn cached_rows_match_full() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.3, -0.4]]).unwrap();
        let y = [1.0, -1.0, 1.0, -1.0];
        let k = KernelSpec::rbf(0.4);
        let mut full = QMatrix::new(&x, &y, k, 8000, 2);
        let mut lru = QMatrix::new(&x, &y, k, 0, 2);
        assert!(!full.is_cached());
        assert!(lru.is_cached());
        for i in [0, 1, 2, 3, 0, 2, 1] {
            assert_eq!(&*full.row(i), &*lru.row(i));
        }
    }
}
