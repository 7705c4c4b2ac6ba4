//! Sparse Legendre chaos expansions.

mod lar;
mod legendre;
mod multiindex;

pub use lar::{bic, bic_select, lar_path, nested_bic, ols_fit, BicChoice, OLS_MAX_COND};
pub use legendre::{legendre_all, legendre_eval};
pub use multiindex::{generate_hyperbolic, MultiIndex, MultiIndexSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Bounds;
use crate::error::{Error, Result};

const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PceConfig {
    pub min_degree: u32,
    pub max_degree: u32,
    pub q: f64,
}

impl Default for PceConfig {
    fn default() -> Self {
        Self { min_degree: 2, max_degree: 6, q: 0.95 }
    }
}

/// Outcome of the degree and sparsity search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceReport {
    pub degree: u32,
    pub bic: f64,
    pub n_terms: usize,
    /// Size of the full truncation set at the selected degree.
    pub candidates: usize,
    /// The design had fewer than twice as many points as candidate terms.
    pub small_design: bool,
}

/// Evaluation workspace reused across calls.
#[derive(Debug, Default, Clone)]
pub struct BasisScratch {
    table: Vec<f64>,
}

/// Evaluates every basis polynomial of `set` at the standardized point `u`.
pub fn eval_basis(set: &MultiIndexSet, u: &[f64], scratch: &mut BasisScratch, out: &mut [f64]) {
    let stride = set.max_degree() as usize + 1;
    scratch.table.resize(stride * u.len(), 0.0);
    for (k, &uk) in u.iter().enumerate() {
        legendre_all(uk, &mut scratch.table[k * stride..(k + 1) * stride]);
    }
    for (o, alpha) in out.iter_mut().zip(&set.indices) {
        let mut v = 1.0;
        for (k, &a) in alpha.as_slice().iter().enumerate() {
            if a != 0 {
                v *= scratch.table[k * stride + a as usize];
            }
        }
        *o = v;
    }
}

fn check_point(u: &[f64], dim: usize) -> Result<()> {
    if u.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: u.len() });
    }
    if u.iter().any(|v| !(v.abs() <= 1.0 + EDGE_TOL)) {
        return Err(Error::OutOfDomain(u.to_vec()));
    }
    Ok(())
}

/// Information matrix `Theta[i][j] = Psi_j(u_i)` for standardized points.
pub fn basis_matrix(points: &[Vec<f64>], set: &MultiIndexSet) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(points.len(), set.len());
    let mut scratch = BasisScratch::default();
    let mut row = vec![0.0; set.len()];
    for (i, u) in points.iter().enumerate() {
        check_point(u, set.dim)?;
        eval_basis(set, u, &mut scratch, &mut row);
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub first: Vec<f64>,
    pub total: Vec<f64>,
    /// Share of variance carried by interaction terms.
    pub interaction: f64,
    pub variance: f64,
}

/// Sparse expansion over a box; inputs are mapped to `[-1, 1]^M` internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsePce {
    pub bounds: Bounds,
    pub basis: MultiIndexSet,
    pub coeffs: Vec<f64>,
}

impl SparsePce {
    pub fn new(bounds: Bounds, basis: MultiIndexSet, coeffs: Vec<f64>) -> Result<Self> {
        if basis.len() != coeffs.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: coeffs.len() });
        }
        if basis.dim != bounds.dim() {
            return Err(Error::DimensionMismatch { expected: bounds.dim(), got: basis.dim });
        }
        Ok(Self { bounds, basis, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree search over `cfg.min_degree..=cfg.max_degree`, LAR ordering and
    /// BIC selection at each degree, BIC comparison across degrees.
    pub fn fit(bounds: &Bounds, x: &[Vec<f64>], y: &[f64], cfg: &PceConfig) -> Result<(Self, PceReport)> {
        let u: Vec<Vec<f64>> = x.iter().map(|p| bounds.standardize(p)).collect::<Result<_>>()?;
        Self::fit_standardized(bounds.clone(), &u, y, cfg)
    }

    pub fn fit_standardized(bounds: Bounds, u: &[Vec<f64>], y: &[f64], cfg: &PceConfig) -> Result<(Self, PceReport)> {
        let n = u.len();
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 design points, got {n}")));
        }
        if cfg.min_degree > cfg.max_degree {
            return Err(Error::InvalidArgument("min_degree exceeds max_degree".into()));
        }
        let yv = DVector::from_column_slice(y);
        let mut best: Option<(f64, u32, Vec<usize>, MultiIndexSet, DMatrix<f64>)> = None;
        for p in cfg.min_degree..=cfg.max_degree {
            let set = generate_hyperbolic(bounds.dim(), p, cfg.q)?;
            let theta = basis_matrix(u, &set)?;
            let order = lar_path(&theta, &yv)?;
            let scores = nested_bic(&theta, &yv, &order);
            let (k, score) = scores
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            if !score.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, p, order[..=k].to_vec(), set, theta));
            }
        }
        let (score, degree, subset, set, theta) =
            best.ok_or_else(|| Error::Solver("no degree produced a finite BIC".into()))?;
        let sub = theta.select_columns(subset.iter());
        let coeffs = ols_fit(&sub, &yv)?;
        let small_design = n < 2 * set.len();
        if small_design {
            log::warn!(
                "design of {n} points is below twice the {} candidate terms at degree {degree}",
                set.len()
            );
        }
        let report = PceReport { degree, bic: score, n_terms: subset.len(), candidates: set.len(), small_design };
        let basis = set.subset(&subset);
        Ok((Self::new(bounds, basis, coeffs.iter().copied().collect())?, report))
    }

    /// Evaluation at a physical point.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let u = self.bounds.standardize(x)?;
        self.predict_standardized(&u)
    }

    pub fn predict_standardized(&self, u: &[f64]) -> Result<f64> {
        check_point(u, self.dim())?;
        let mut scratch = BasisScratch::default();
        let mut row = vec![0.0; self.len()];
        eval_basis(&self.basis, u, &mut scratch, &mut row);
        Ok(row.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum())
    }

    /// Basis row at a standardized point, for callers that reuse buffers.
    pub fn basis_row(&self, u: &[f64], scratch: &mut BasisScratch, out: &mut [f64]) {
        eval_basis(&self.basis, u, scratch, out);
    }

    pub fn sobol_indices(&self) -> Result<SobolIndices> {
        let m = self.dim();
        let mut first = vec![0.0; m];
        let mut total = vec![0.0; m];
        let mut variance = 0.0;
        let mut interaction = 0.0;
        for (alpha, &a) in self.basis.indices.iter().zip(&self.coeffs) {
            if alpha.is_zero() {
                continue;
            }
            let a2 = a * a;
            variance += a2;
            let active: Vec<usize> = (0..m).filter(|&k| alpha.as_slice()[k] != 0).collect();
            for &k in &active {
                total[k] += a2;
            }
            if active.len() == 1 {
                first[active[0]] += a2;
            } else {
                interaction += a2;
            }
        }
        if !(variance > 0.0) {
            return Err(Error::ConstantSurrogate);
        }
        first.iter_mut().chain(total.iter_mut()).for_each(|v| *v /= variance);
        Ok(SobolIndices { first, total, interaction: interaction / variance, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid_1d(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![-1.0 + 2.0 * i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn basis_matrix_entries() {
        let set = generate_hyperbolic(2, 2, 1.0).unwrap();
        let m = basis_matrix(&[vec![0.0, 0.0]], &set).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        let k = set.indices.iter().position(|a| a.as_slice() == [2, 0]).unwrap();
        assert!((m[(0, k)] + 5f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(basis_matrix(&[vec![0.0]], &set).is_err());

        let set1 = generate_hyperbolic(1, 2, 1.0).unwrap();
        let m = basis_matrix(&[vec![-0.5], vec![0.1], vec![0.8]], &set1).unwrap();
        assert!(m.determinant().abs() > 1e-3);
    }

    #[test]
    fn linear_fit_is_exact() {
        let b = Bounds::cube(1, -1.0, 1.0).unwrap();
        let x = grid_1d(5);
        let y: Vec<f64> = x.iter().map(|p| 2.0 + 3.0 * p[0]).collect();
        let (pce, rep) = SparsePce::fit(&b, &x, &y, &PceConfig::default()).unwrap();
        assert!((pce.predict(&[0.25]).unwrap() - 2.75).abs() < 1e-10);
        assert!(rep.n_terms <= 3);
        assert!(rep.small_design);
    }

    #[test]
    fn constant_and_zero_predictions() {
        let b = Bounds::cube(2, 0.0, 1.0).unwrap();
        let set = generate_hyperbolic(2, 0, 1.0).unwrap();
        let pce = SparsePce::new(b.clone(), set, vec![4.5]).unwrap();
        assert_eq!(pce.predict(&[0.3, 0.9]).unwrap(), 4.5);
        assert!(matches!(pce.sobol_indices(), Err(Error::ConstantSurrogate)));
        let set = generate_hyperbolic(2, 2, 1.0).unwrap();
        let pce = SparsePce::new(b, set, vec![0.0; 6]).unwrap();
        assert_eq!(pce.predict(&[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn sobol_reference_cases() {
        let b = Bounds::cube(2, -1.0, 1.0).unwrap();
        let mk = |alphas: Vec<Vec<u32>>, c: Vec<f64>| {
            let basis = MultiIndexSet {
                dim: 2,
                p: 2,
                q: 1.0,
                indices: alphas.into_iter().map(MultiIndex::new).collect(),
            };
            SparsePce::new(b.clone(), basis, c).unwrap()
        };
        let s = mk(vec![vec![0, 0], vec![1, 0]], vec![1.0, 2.0]).sobol_indices().unwrap();
        assert_eq!((s.first[0], s.first[1], s.total[0]), (1.0, 0.0, 1.0));
        let s = mk(vec![vec![1, 0], vec![0, 1]], vec![0.7, 0.7]).sobol_indices().unwrap();
        assert!((s.first[0] - 0.5).abs() < 1e-15 && s.interaction == 0.0);
        let s = mk(vec![vec![1, 1]], vec![1.3]).sobol_indices().unwrap();
        assert_eq!((s.first[0], s.total[1]), (0.0, 1.0));
    }

    #[test]
    fn pure_noise_selects_intercept() {
        let mut hits = 0;
        for seed in 0..50 {
            let mut rng = crate::rng::seeded(seed);
            let x: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let y: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
            let set = generate_hyperbolic(2, 3, 0.95).unwrap();
            let theta = basis_matrix(&x, &set).unwrap();
            let yv = DVector::from_vec(y);
            let order = lar_path(&theta, &yv).unwrap();
            let scores = nested_bic(&theta, &yv, &order);
            let k = scores.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &s)| if s < a.1 { (i, s) } else { a }).0;
            if k == 0 {
                hits += 1;
            }
        }
        assert!(hits > 40, "{hits}/50");
    }
}
