//! Universal Kriging with a sparse chaos-expansion trend (PC-Kriging).

mod ga;

pub use ga::{ga_optimize, GaConfig, GaResult};

use web_time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Bounds;
use crate::error::{Error, Result};
use crate::pce::{basis_matrix, BasisScratch, PceConfig, PceReport, SparsePce};

pub const DEFAULT_NUGGET: f64 = 1e-10;
pub const NUGGET_CAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrigingConfig {
    pub nugget: f64,
    pub nugget_cap: f64,
    /// Search interval for `log10(theta)` on every axis.
    pub log10_theta: (f64, f64),
    pub ga: GaConfig,
    pub pce: PceConfig,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            nugget: DEFAULT_NUGGET,
            nugget_cap: NUGGET_CAP,
            log10_theta: (-3.0, 3.0),
            ga: GaConfig::default(),
            pce: PceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub theta: Vec<f64>,
    pub sigma2: f64,
}

/// Anisotropic Gaussian correlation `prod_l exp(-theta_l (u_l - v_l)^2)`.
pub fn gaussian_corr(u: &[f64], v: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), t) in u.iter().zip(v).zip(theta) {
        let d = a - b;
        s += t * d * d;
    }
    (-s).exp()
}

/// Cholesky factor of `R + nugget I` together with the nugget that made it succeed.
#[derive(Clone, Debug)]
pub struct CorrFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub nugget: f64,
}

impl CorrFactor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.l_dirty().solve_lower_triangular(b).expect("non-zero pivots")
    }
}

/// Pairwise squared coordinate differences, the only geometry `R` depends on.
#[derive(Clone, Debug)]
pub(crate) struct PairGeometry {
    n: usize,
    m: usize,
    sq: Vec<f64>,
}

impl PairGeometry {
    pub(crate) fn new(u: &[Vec<f64>]) -> Self {
        let n = u.len();
        let m = u.first().map_or(0, Vec::len);
        let mut sq = Vec::with_capacity(n * n.saturating_sub(1) / 2 * m);
        for i in 0..n {
            for j in 0..i {
                for k in 0..m {
                    let d = u[i][k] - u[j][k];
                    sq.push(d * d);
                }
            }
        }
        Self { n, m, sq }
    }

    fn matrix(&self, theta: &[f64], nugget: f64) -> DMatrix<f64> {
        let n = self.n;
        let mut r = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in 0..i {
                let mut s = 0.0;
                for k in 0..self.m {
                    s += theta[k] * self.sq[idx + k];
                }
                idx += self.m;
                let v = (-s).exp();
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
            r[(i, i)] = 1.0 + nugget;
        }
        r
    }

    /// Factorizes `R + nugget I`, multiplying the nugget by ten on failure
    /// (starting from the default when it is zero) until `cap` is exceeded.
    pub(crate) fn factor(&self, theta: &[f64], nugget: f64, cap: f64) -> Result<CorrFactor> {
        let mut nug = nugget.max(0.0);
        loop {
            if let Some(chol) = Cholesky::new(self.matrix(theta, nug)) {
                let l = chol.l_dirty();
                if (0..self.n).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                    return Ok(CorrFactor { chol, nugget: nug });
                }
            }
            let next = if nug == 0.0 { DEFAULT_NUGGET.min(cap) } else { nug * 10.0 };
            if next > cap * (1.0 + 1e-9) || next == nug {
                return Err(Error::NotPositiveDefinite { nugget: nug });
            }
            nug = next;
        }
    }
}

/// Factor of the correlation matrix of standardized points.
pub fn corr_matrix(u: &[Vec<f64>], theta: &[f64], nugget: f64) -> Result<CorrFactor> {
    check_theta(theta, u.first().map_or(theta.len(), Vec::len))?;
    PairGeometry::new(u).factor(theta, nugget, NUGGET_CAP)
}

fn check_theta(theta: &[f64], m: usize) -> Result<()> {
    if theta.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: theta.len() });
    }
    if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument(format!("correlation parameters must be positive, got {theta:?}")));
    }
    Ok(())
}

/// Generalised least squares pieces for one `theta`.
#[derive(Clone, Debug)]
pub struct Blue {
    pub coeffs: DVector<f64>,
    pub sigma2: f64,
    pub log_det: f64,
}

impl Blue {
    /// `sigma^2 (det R)^{1/N}`.
    pub fn objective(&self, n: usize) -> f64 {
        self.sigma2 * (self.log_det / n as f64).exp()
    }
}

fn gls(factor: &CorrFactor, basis: &DMatrix<f64>, y: &DVector<f64>) -> Result<Blue> {
    let n = y.len();
    let f = factor.whiten(basis);
    let z = factor.whiten(&DMatrix::from_column_slice(n, 1, y.as_slice())).column(0).into_owned();
    let p = f.ncols();
    let coeffs = if p == 0 {
        DVector::zeros(0)
    } else {
        let qr = f.clone().qr();
        let r = qr.r();
        let dmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let dmin = (0..p).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(dmin > 1e-13 * dmax) {
            return Err(Error::RankDeficient { cond: if dmin > 0.0 { dmax / dmin } else { f64::INFINITY } });
        }
        let qtz = qr.q().transpose() * &z;
        r.solve_upper_triangular(&qtz).ok_or(Error::RankDeficient { cond: f64::INFINITY })?
    };
    let e = &z - &f * &coeffs;
    Ok(Blue { coeffs, sigma2: e.norm_squared() / n as f64, log_det: factor.log_det() })
}

/// BLUE trend coefficients and process variance for standardized points.
pub fn blue(theta: &[f64], u: &[Vec<f64>], basis: &DMatrix<f64>, y: &[f64], nugget: f64) -> Result<Blue> {
    let factor = corr_matrix(u, theta, nugget)?;
    gls(&factor, basis, &DVector::from_column_slice(y))
}

/// Concentrated likelihood objective `sigma^2(theta) (det R)^{1/N}`.
pub fn ml_objective(theta: &[f64], u: &[Vec<f64>], basis: &DMatrix<f64>, y: &[f64], nugget: f64) -> Result<f64> {
    Ok(blue(theta, u, basis, y, nugget)?.objective(y.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub pce: PceReport,
    pub objective: f64,
    pub ga_evaluations: usize,
    pub nugget: f64,
    pub fit_seconds: f64,
}

/// Serialized state of a fitted model; the factor is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckData {
    pub bounds: Bounds,
    /// Trend with generalised-least-squares coefficients.
    pub trend: SparsePce,
    pub hyper: Hyperparams,
    pub nugget: f64,
    /// Standardized design inputs.
    pub design: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PckModel {
    data: PckData,
    factor: CorrFactor,
    weights: Vec<f64>,
    flat: Vec<f64>,
}

/// Reusable buffers for repeated predictions.
#[derive(Debug, Default, Clone)]
pub struct PredictScratch {
    u: Vec<f64>,
    row: Vec<f64>,
    basis: BasisScratch,
}

impl Serialize for PckModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.data.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PckModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = PckData::deserialize(d)?;
        PckModel::from_data(data).map_err(serde::de::Error::custom)
    }
}

impl PckModel {
    /// Fits trend (LAR + BIC), then correlation lengths by maximum likelihood
    /// with the genetic algorithm, then BLUE coefficients.
    pub fn fit<R: Rng + ?Sized>(
        bounds: &Bounds,
        x: &[Vec<f64>],
        y: &[f64],
        cfg: &KrigingConfig,
        rng: &mut R,
    ) -> Result<(Self, PckReport)> {
        let start = Instant::now();
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let u: Vec<Vec<f64>> = x.iter().map(|p| bounds.standardize(p)).collect::<Result<_>>()?;
        let (trend, pce_report) = SparsePce::fit_standardized(bounds.clone(), &u, y, &cfg.pce)?;
        let basis = basis_matrix(&u, &trend.basis)?;
        let yv = DVector::from_column_slice(y);
        let geo = PairGeometry::new(&u);
        let m = bounds.dim();

        let objective = |log_theta: &[f64]| -> f64 {
            let theta: Vec<f64> = log_theta.iter().map(|v| 10f64.powf(*v)).collect();
            match geo.factor(&theta, cfg.nugget, cfg.nugget_cap).and_then(|f| gls(&f, &basis, &yv)) {
                Ok(b) => b.objective(y.len()),
                Err(_) => f64::INFINITY,
            }
        };
        let ga = ga_optimize(objective, &vec![cfg.log10_theta; m], &cfg.ga, rng)?;
        let theta: Vec<f64> = ga.best.iter().map(|v| 10f64.powf(*v)).collect();
        let factor = geo.factor(&theta, cfg.nugget, cfg.nugget_cap)?;
        let b = gls(&factor, &basis, &yv)?;
        let trend = SparsePce::new(bounds.clone(), trend.basis, b.coeffs.iter().copied().collect())?;
        let data = PckData {
            bounds: bounds.clone(),
            trend,
            hyper: Hyperparams { theta, sigma2: b.sigma2 },
            nugget: factor.nugget,
            design: u,
            outputs: y.to_vec(),
        };
        let model = Self::with_factor(data, factor, &basis)?;
        let report = PckReport {
            pce: pce_report,
            objective: ga.value,
            ga_evaluations: ga.evaluations,
            nugget: model.data.nugget,
            fit_seconds: start.elapsed().as_secs_f64(),
        };
        Ok((model, report))
    }

    /// Rebuilds the cached factor and weights from serialized state.
    pub fn from_data(data: PckData) -> Result<Self> {
        if data.design.len() != data.outputs.len() {
            return Err(Error::DimensionMismatch { expected: data.design.len(), got: data.outputs.len() });
        }
        check_theta(&data.hyper.theta, data.bounds.dim())?;
        let factor = PairGeometry::new(&data.design).factor(&data.hyper.theta, data.nugget, data.nugget.max(NUGGET_CAP))?;
        if factor.nugget != data.nugget {
            return Err(Error::NotPositiveDefinite { nugget: data.nugget });
        }
        let basis = basis_matrix(&data.design, &data.trend.basis)?;
        Self::with_factor(data, factor, &basis)
    }

    fn with_factor(data: PckData, factor: CorrFactor, basis: &DMatrix<f64>) -> Result<Self> {
        let a = DVector::from_column_slice(&data.trend.coeffs);
        let resid = DVector::from_column_slice(&data.outputs) - basis * a;
        let weights = factor.solve(&resid).iter().copied().collect();
        let flat = data.design.iter().flatten().copied().collect();
        Ok(Self { data, factor, weights, flat })
    }

    pub fn data(&self) -> &PckData {
        &self.data
    }

    pub fn bounds(&self) -> &Bounds {
        &self.data.bounds
    }

    pub fn trend(&self) -> &SparsePce {
        &self.data.trend
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.data.hyper
    }

    pub fn nugget(&self) -> f64 {
        self.data.nugget
    }

    pub fn design_len(&self) -> usize {
        self.data.outputs.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.predict_with(x, &mut PredictScratch::default())
    }

    /// `trend(x) + r(x)^T R^{-1} (y - Theta a)`.
    pub fn predict_with(&self, x: &[f64], s: &mut PredictScratch) -> Result<f64> {
        let m = self.data.bounds.dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: x.len() });
        }
        self.data.bounds.standardize_into(x, &mut s.u);
        if s.u.iter().any(|v| !(v.abs() <= 1.0 + 1e-9)) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        let theta = &self.data.hyper.theta;
        let mut acc = 0.0;
        for (pt, w) in self.flat.chunks_exact(m).zip(&self.weights) {
            let mut e = 0.0;
            for k in 0..m {
                let d = s.u[k] - pt[k];
                e += theta[k] * d * d;
            }
            acc += w * (-e).exp();
        }
        let trend = &self.data.trend;
        s.row.resize(trend.len(), 0.0);
        trend.basis_row(&s.u, &mut s.basis, &mut s.row);
        let t: f64 = s.row.iter().zip(&trend.coeffs).map(|(a, b)| a * b).sum();
        Ok(t + acc)
    }

    fn cross_corr(&self, u: &[f64]) -> DVector<f64> {
        let m = u.len();
        DVector::from_iterator(
            self.design_len(),
            self.flat.chunks_exact(m).map(|pt| gaussian_corr(u, pt, &self.data.hyper.theta)),
        )
    }

    /// The predictor written as
    /// `r^T R^-1 y - (Theta^T R^-1 r - psi(x))^T (Theta^T R^-1 Theta)^-1 Theta^T R^-1 y`,
    /// computed independently of the cached weights.
    pub fn predict_blup_form(&self, x: &[f64]) -> Result<f64> {
        let u = self.data.bounds.standardize(x)?;
        let r = self.cross_corr(&u);
        let y = DVector::from_column_slice(&self.data.outputs);
        let theta_m = basis_matrix(&self.data.design, &self.data.trend.basis)?;
        let rinv_y = self.factor.solve(&y);
        let rinv_r = self.factor.solve(&r);
        let mut rinv_t = theta_m.clone();
        self.factor.chol.solve_mut(&mut rinv_t);
        let g = theta_m.transpose() * &rinv_t;
        let mut psi = vec![0.0; self.data.trend.len()];
        self.data.trend.basis_row(&u, &mut BasisScratch::default(), &mut psi);
        let lhs = theta_m.transpose() * &rinv_r - DVector::from_vec(psi);
        let rhs = theta_m.transpose() * &rinv_y;
        let sol = g.lu().solve(&rhs).ok_or(Error::RankDeficient { cond: f64::INFINITY })?;
        Ok(r.dot(&rinv_y) - lhs.dot(&sol))
    }

    /// `sqrt(max(0, 1 - r^T R^-1 r))`.
    pub fn power_function(&self, x: &[f64]) -> Result<f64> {
        let u = self.data.bounds.standardize(x)?;
        let r = self.cross_corr(&u);
        let s = self.factor.chol.l_dirty().solve_lower_triangular(&r).expect("non-zero pivots");
        Ok((1.0 - s.norm_squared()).max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::generate_hyperbolic;
    use crate::rng::seeded;

    #[test]
    fn correlation_values() {
        assert_eq!(gaussian_corr(&[0.3, 0.1], &[0.3, 0.1], &[5.0, 2.0]), 1.0);
        assert!((gaussian_corr(&[0.0], &[1.0], &[1.0]) - (-1f64).exp()).abs() < 1e-15);
        assert!((gaussian_corr(&[0.0, 0.0], &[1.0, 1.0], &[2.0, 3.0]) - (-5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn nugget_escalation() {
        let one = corr_matrix(&[vec![0.2]], &[1.0], 0.0).unwrap();
        assert_eq!(one.l()[(0, 0)], 1.0);
        let dup = corr_matrix(&[vec![0.2], vec![0.2]], &[1.0], 0.0).unwrap();
        assert!(dup.nugget > 0.0 && dup.nugget <= NUGGET_CAP);
        let sep = corr_matrix(&[vec![-0.9], vec![0.0], vec![0.9]], &[10.0], DEFAULT_NUGGET).unwrap();
        assert_eq!(sep.nugget, DEFAULT_NUGGET);
        assert!((0..3).all(|i| sep.l()[(i, i)] > 0.5));
    }

    #[test]
    fn objective_zero_cases() {
        let set = generate_hyperbolic(1, 1, 1.0).unwrap();
        let u = vec![vec![-0.5], vec![0.1], vec![0.7]];
        let basis = basis_matrix(&u, &set).unwrap();
        let y: Vec<f64> = u.iter().map(|p| 1.0 + 2.0 * p[0]).collect();
        assert!(ml_objective(&[1.0], &u, &basis, &y, DEFAULT_NUGGET).unwrap() < 1e-20);
        let set0 = generate_hyperbolic(1, 0, 1.0).unwrap();
        let b0 = basis_matrix(&[vec![0.3]], &set0).unwrap();
        assert_eq!(ml_objective(&[0.5], &[vec![0.3]], &b0, &[4.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_predicts_constant() {
        let b = Bounds::cube(2, 0.0, 1.0).unwrap();
        let mut rng = seeded(9);
        let x: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random(), rng.random()]).collect();
        let y = vec![3.25; 15];
        let cfg = KrigingConfig { ga: GaConfig { population: 6, generations: 2, ..GaConfig::default() }, ..Default::default() };
        let (m, _) = PckModel::fit(&b, &x, &y, &cfg, &mut rng).unwrap();
        for p in [[0.5, 0.5], [0.0, 1.0], [0.91, 0.07]] {
            assert!((m.predict(&p).unwrap() - 3.25).abs() < 1e-8);
        }
    }
}
