#![allow(dead_code)]

pub mod qp;

use nalgebra::DMatrix;
use prosospeaker::classifier::{KernelKind, KernelSpec};
use prosospeaker::tensor::Matrix;
use prosospeaker::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random binary problem for solver comparisons.
pub struct DualProblem {
    pub x: Matrix,
    pub labels: Vec<Label>,
    pub y: Vec<f64>,
    pub c: f64,
    pub kernel: KernelSpec,
}

impl DualProblem {
    pub fn signed_gram(&self) -> DMatrix<f64> {
        let n = self.x.rows();
        DMatrix::from_fn(n, n, |i, j| {
            self.y[i]
                * self.y[j]
                * prosospeaker::classifier::kernel_eval(&self.kernel, self.x.row(i), self.x.row(j)).unwrap()
        })
    }

    pub fn kernel_value(&self, i: usize, j: usize) -> f64 {
        prosospeaker::classifier::kernel_eval(&self.kernel, self.x.row(i), self.x.row(j)).unwrap()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.signed_gram().symmetric_eigenvalues().min()
    }
}

/// Draws until the kernel matrix is positive semidefinite, so the dual has a
/// well-defined optimum value.
pub fn random_problem(seed: u64, kind: KernelKind) -> DualProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(4..=20);
        let dim = rng.random_range(1..=5);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Df } else { Label::Real })
            .collect();
        labels[0] = Label::Df;
        labels[1] = Label::Real;
        let c = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
        let gamma = rng.random_range(0.1..2.0);
        let kernel = match kind {
            KernelKind::Rbf => KernelSpec::rbf(gamma),
            KernelKind::Polynomial => KernelSpec::polynomial(gamma, 3, 0.0),
            KernelKind::Sigmoid => KernelSpec::sigmoid(gamma * 0.1, 0.0),
        };
        let p = DualProblem {
            x: Matrix::from_vec(n, dim, data).unwrap(),
            y: labels.iter().map(|l| l.sign()).collect(),
            labels,
            c,
            kernel,
        };
        if p.min_eigenvalue() >= -1e-12 {
            return p;
        }
    }
}
