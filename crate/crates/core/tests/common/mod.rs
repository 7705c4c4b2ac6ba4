//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Dense universal-kriging reference: explicit inverse of `R + nugget I`.
pub struct DenseKriging {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    rinv: DMatrix<f64>,
    resid: DVector<f64>,
    u: Vec<Vec<f64>>,
    theta: Vec<f64>,
}

pub fn corr(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += theta[k] * (a[k] - b[k]).powi(2);
    }
    (-s).exp()
}

impl DenseKriging {
    pub fn new(u: &[Vec<f64>], f: &DMatrix<f64>, y: &[f64], theta: &[f64], nugget: f64) -> Self {
        let n = u.len();
        let r = DMatrix::from_fn(n, n, |i, j| corr(&u[i], &u[j], theta) + if i == j { nugget } else { 0.0 });
        let rinv = r.try_inverse().expect("invertible correlation matrix");
        let y = DVector::from_column_slice(y);
        let ft_rinv = f.transpose() * &rinv;
        let beta = (&ft_rinv * f).try_inverse().expect("full-rank trend") * (&ft_rinv * &y);
        let resid = &y - f * &beta;
        let sigma2 = (resid.transpose() * &rinv * &resid)[(0, 0)] / n as f64;
        Self { beta, sigma2, rinv, resid, u: u.to_vec(), theta: theta.to_vec() }
    }

    /// `psi(x)^T beta + r(x)^T R^-1 (y - F beta)` for standardized `x`.
    pub fn predict(&self, x: &[f64], psi: &[f64]) -> f64 {
        let r = DVector::from_iterator(self.u.len(), self.u.iter().map(|p| corr(x, p, &self.theta)));
        let trend: f64 = psi.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        trend + (r.transpose() * &self.rinv * &self.resid)[(0, 0)]
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
