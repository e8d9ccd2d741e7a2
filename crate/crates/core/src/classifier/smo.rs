//! Dual solver for the soft-margin SVM.
//!
//! Minimizes `½ αᵀQα − eᵀα` subject to `0 ≤ α ≤ C` and `yᵀα = 0`, where
//! `Q_ij = y_i y_j K(x_i, x_j)`. Each step picks the maximal violating pair
//! and solves the two-variable subproblem analytically.

use serde::{Deserialize, Serialize};

use super::kernel::{KernelSpec, QMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

/// Bound every KKT residual must respect at exit.
pub const KKT_TOL: f64 = 1e-3;

/// Default stopping gap. Far tighter than [`KKT_TOL`] so that the dual
/// objective and the decision scores are reproducible to about 1e-8.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    /// Iteration cap; `None` means `max(10_000_000, 100 n)`.
    pub max_iter: Option<usize>,
    /// Largest training set for which the whole kernel matrix is precomputed.
    pub full_gram_limit: usize,
    /// Rows kept by the LRU cache above that limit.
    pub cache_rows: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            full_gram_limit: 8000,
            cache_rows: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    /// `m(α) − M(α)` at exit.
    pub violation: f64,
}

/// Solves the dual for labels `y ∈ {−1, +1}`.
pub fn solve_dual(x: &Matrix, y: &[f64], c: f64, kernel: &KernelSpec, params: &SmoParams) -> Result<DualSolution> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::invalid("label count does not match row count"));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    kernel.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFinite("training features".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) || y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training("training labels must contain both classes".into()));
    }

    let mut q = QMatrix::new(x, y, *kernel, params.full_gram_limit, params.cache_rows);
    let diag: Vec<f64> = (0..n).map(|i| kernel.eval_unchecked(x.row(i), x.row(i))).collect();
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;

    let up = |a: f64, yi: f64| if yi > 0.0 { a < c } else { a > 0.0 };
    let low = |a: f64, yi: f64| if yi > 0.0 { a > 0.0 } else { a < c };

    let violation = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < params.tol {
            break gap.max(0.0);
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;

        let qi = q.row(i);
        let qj = q.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    };

    let bias = -rho(&alpha, &grad, y, c);
    // G = Qα − e, so Σα − ½αᵀQα = −½ αᵀ(G − e)
    let objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias,
        objective,
        iterations,
        violation,
    })
}

/// Offset from free vectors, or the midpoint of the feasible interval when
/// every multiplier sits at a bound.
fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum = 0.0;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Dual objective `Σα − ½ αᵀQα` (maximization form).
pub fn dual_objective(x: &Matrix, y: &[f64], alpha: &[f64], kernel: &KernelSpec) -> f64 {
    let n = x.rows();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel.eval_unchecked(x.row(i), x.row(j));
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(x: &[Vec<f64>], y: &[f64], c: f64, k: KernelSpec) -> DualSolution {
        solve_dual(&Matrix::from_rows(x).unwrap(), y, c, &k, &SmoParams::default()).unwrap()
    }

    #[test]
    fn two_points_closed_form() {
        // K(−1, 1) = e^{−4}; α = 2 / (2 − 2e^{−4}) for both points, b = 0.
        let s = solve(&[vec![-1.0], vec![1.0]], &[-1.0, 1.0], 100.0, KernelSpec::rbf(1.0));
        let expect = 1.0 / (1.0 - (-4f64).exp());
        for a in &s.alpha {
            assert!((a - expect).abs() < 1e-9, "{a} vs {expect}");
        }
        assert!(s.bias.abs() < 1e-9);
    }

    #[test]
    fn objective_matches_direct_sum() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let k = KernelSpec::rbf(1.0);
        let s = solve(&x, &y, 100.0, k);
        let direct = dual_objective(&Matrix::from_rows(&x).unwrap(), &y, &s.alpha, &k);
        assert!((s.objective - direct).abs() < 1e-10 * direct.abs().max(1.0));
        let balance: f64 = s.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-9);
    }

    #[test]
    fn rejects_single_class_and_bad_input() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let p = SmoParams::default();
        let k = KernelSpec::rbf(1.0);
        assert!(solve_dual(&x, &[1.0, 1.0], 1.0, &k, &p).is_err());
        assert!(solve_dual(&x, &[1.0, -1.0], 0.0, &k, &p).is_err());
        let bad = Matrix::from_rows(&[vec![f64::NAN], vec![1.0]]).unwrap();
        assert!(matches!(
            solve_dual(&bad, &[1.0, -1.0], 1.0, &k, &p),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![0.2], vec![0.3]]).unwrap();
        let p = SmoParams {
            max_iter: Some(1),
            tol: 1e-12,
            ..SmoParams::default()
        };
        let r = solve_dual(&x, &[1.0, -1.0, 1.0, -1.0], 10.0, &KernelSpec::rbf(1.0), &p);
        assert!(matches!(r, Err(Error::NotConverged { iterations: 1, .. })));
    }

    #[test]
    fn cached_path_matches_full() {
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let y: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let m = Matrix::from_rows(&x).unwrap();
        let k = KernelSpec::rbf(0.8);
        let full = solve_dual(&m, &y, 5.0, &k, &SmoParams::default()).unwrap();
        let cached = solve_dual(
            &m,
            &y,
            5.0,
            &k,
            &SmoParams {
                full_gram_limit: 0,
                cache_rows: 3,
                ..SmoParams::default()
            },
        )
        .unwrap();
        assert_eq!(full, cached);
    }
}
