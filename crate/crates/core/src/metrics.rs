//! Validation-set error metrics.
//!
//! `sigma` below is the sample standard deviation of the truth with a `K - 1`
//! denominator. `R2` is the squared correlation between truth and prediction,
//! so an anti-correlated predictor also scores high; the sign is reported
//! separately in [`ValidationReport::anti_correlated`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if truth.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 validation points, got {}", truth.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn sigma(truth: &[f64]) -> Result<f64> {
    let s = (sum_sq_dev(truth) / (truth.len() - 1) as f64).sqrt();
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::InvalidArgument("validation truth is constant".into()))
    }
}

/// `sum (pred - truth)^2 / sum (mean - truth)^2`.
pub fn nrmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let den = sum_sq_dev(truth);
    if !(den > 0.0) {
        return Err(Error::InvalidArgument("validation truth is constant".into()));
    }
    Ok(truth.iter().zip(pred).map(|(t, p)| (p - t) * (p - t)).sum::<f64>() / den)
}

/// `sum |pred - truth| / (K sigma)`.
pub fn naae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let s = sigma(truth)?;
    Ok(truth.iter().zip(pred).map(|(t, p)| (p - t).abs()).sum::<f64>() / (truth.len() as f64 * s))
}

/// `max |pred - truth| / (K sigma)`.
pub fn nmae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let s = sigma(truth)?;
    Ok(max_abs_error(truth, pred) / (truth.len() as f64 * s))
}

pub fn max_abs_error(truth: &[f64], pred: &[f64]) -> f64 {
    truth.iter().zip(pred).map(|(t, p)| (p - t).abs()).fold(0.0, f64::max)
}

/// Squared Pearson correlation of truth and prediction.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(correlation(truth, pred)?.powi(2))
}

fn correlation(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let (mt, mp) = (mean(truth), mean(pred));
    let mut sxy = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        sxy += (t - mt) * (p - mp);
    }
    let (stt, spp) = (sum_sq_dev(truth), sum_sq_dev(pred));
    if !(stt > 0.0) {
        return Err(Error::InvalidArgument("validation truth is constant".into()));
    }
    if !(spp > 0.0) {
        return Err(Error::InvalidArgument("prediction is constant; R2 undefined".into()));
    }
    Ok((sxy / (stt.sqrt() * spp.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub k: usize,
    pub nrmse: f64,
    pub naae: f64,
    pub nmae: f64,
    pub r2: f64,
    pub one_minus_nrmse: f64,
    pub max_abs_error: f64,
    pub anti_correlated: bool,
    /// Construction time in seconds.
    pub t_c: Option<f64>,
    /// Mean evaluation time per point in seconds.
    pub t_e: Option<f64>,
    /// Evaluation time of the whole validation set in seconds.
    pub t_e_vs: Option<f64>,
}

pub const REPORT_HEADER: &str = "model,K,NAAE,NMAE,NRMSE,R2,one_minus_NRMSE,max_abs_error,t_c,t_e,t_e_VS";

impl ValidationReport {
    pub fn csv_row(&self, model: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{model},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            self.k,
            self.naae,
            self.nmae,
            self.nrmse,
            self.r2,
            self.one_minus_nrmse,
            self.max_abs_error,
            opt(self.t_c),
            opt(self.t_e),
            opt(self.t_e_vs)
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "K={}  R2={:.6}  1-NRMSE={:.6}  NRMSE={:.4e}  NAAE={:.4e}  NMAE={:.4e}  max|e|={:.4e}{}",
            self.k,
            self.r2,
            self.one_minus_nrmse,
            self.nrmse,
            self.naae,
            self.nmae,
            self.max_abs_error,
            if self.anti_correlated { "  (anti-correlated)" } else { "" }
        )
    }
}

/// All metrics at once; fails on constant truth or constant prediction.
pub fn compute_metrics(truth: &[f64], pred: &[f64]) -> Result<ValidationReport> {
    let rho = correlation(truth, pred)?;
    let nr = nrmse(truth, pred)?;
    Ok(ValidationReport {
        k: truth.len(),
        nrmse: nr,
        naae: naae(truth, pred)?,
        nmae: nmae(truth, pred)?,
        r2: rho * rho,
        one_minus_nrmse: 1.0 - nr,
        max_abs_error: max_abs_error(truth, pred),
        anti_correlated: rho < 0.0,
        t_c: None,
        t_e: None,
        t_e_vs: None,
    })
}
