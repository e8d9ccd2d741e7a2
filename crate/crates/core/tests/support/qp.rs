//! Reference solver for the SVM dual, independent of the library's SMO.
//!
//! Accelerated projected gradient on `min ½ αᵀQα − eᵀα` over
//! `{0 ≤ α ≤ C, yᵀα = 0}`, followed by an exact solve of the KKT system on
//! the identified free set.

use nalgebra::{DMatrix, DVector};

pub struct QpSolution {
    pub alpha: Vec<f64>,
    /// Maximization-form objective `Σα − ½ αᵀQα`.
    pub objective: f64,
}

fn objective(q: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.sum() - 0.5 * a.dot(&(q * a))
}

/// Euclidean projection onto the box intersected with the hyperplane.
fn project(v: &DVector<f64>, y: &[f64], c: f64) -> DVector<f64> {
    let at = |lam: f64| -> (DVector<f64>, f64) {
        let p = DVector::from_iterator(v.len(), v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)));
        let s = p.iter().zip(y).map(|(pi, yi)| pi * yi).sum();
        (p, s)
    };
    let bound = v.amax() + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * bound {
            break;
        }
    }
    at(0.5 * (lo + hi)).0
}

fn polish(q: &DMatrix<f64>, y: &[f64], c: f64, a: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.len();
    let eps = 1e-7 * c.max(1.0);
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > eps && a[i] < c - eps).collect();
    let fixed: Vec<(usize, f64)> = (0..n)
        .filter(|i| !free.contains(i))
        .map(|i| (i, if a[i] >= c - eps { c } else { 0.0 }))
        .collect();
    let m = free.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            kkt[(r, s)] = q[(i, j)];
        }
        kkt[(r, m)] = y[i];
        kkt[(m, r)] = y[i];
        rhs[r] = 1.0 - fixed.iter().map(|&(j, v)| q[(i, j)] * v).sum::<f64>();
    }
    rhs[m] = -fixed.iter().map(|&(j, v)| y[j] * v).sum::<f64>();
    let sol = kkt.lu().solve(&rhs)?;
    let mut out = DVector::zeros(n);
    for &(j, v) in &fixed {
        out[j] = v;
    }
    for (r, &i) in free.iter().enumerate() {
        if !(sol[r] >= -1e-12 && sol[r] <= c + 1e-12) {
            return None;
        }
        out[i] = sol[r].clamp(0.0, c);
    }
    Some(out)
}

/// `q` is the signed kernel matrix `y_i y_j K_ij`, assumed positive semidefinite.
pub fn solve(q: &DMatrix<f64>, y: &[f64], c: f64) -> QpSolution {
    let n = y.len();
    let lip = q.clone().symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lip;
    let mut x = project(&DVector::zeros(n), y, c);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let grad_at = |v: &DVector<f64>| q * v - DVector::from_element(n, 1.0);
    for _ in 0..100_000 {
        let next = project(&(&z - step * grad_at(&z)), y, c);
        if t > 1.0 && objective(q, &next) < objective(q, &x) {
            // momentum overshot: restart from the current iterate
            z = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + ((t - 1.0) / t_next) * (&next - &x);
        x = next;
        t = t_next;
        let residual = (&x - project(&(&x - step * grad_at(&x)), y, c)).amax();
        if residual < 1e-10 * c.max(1.0) {
            break;
        }
    }
    let mut best = x;
    let mut best_obj = objective(q, &best);
    if let Some(p) = polish(q, y, c, &best) {
        let balance: f64 = p.iter().zip(y).map(|(a, yi)| a * yi).sum();
        let o = objective(q, &p);
        if balance.abs() < 1e-10 && o >= best_obj {
            best = p;
            best_obj = o;
        }
    }
    QpSolution {
        alpha: best.iter().copied().collect(),
        objective: best_obj,
    }
}
