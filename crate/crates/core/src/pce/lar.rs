use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which a least-squares system is rejected.
pub const OLS_MAX_COND: f64 = 1e12;
const RSS_FLOOR: f64 = 1e-300;

/// Least-squares coefficients via SVD.
pub fn ols_fit(theta: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = theta.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    if n < p {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let svd = theta.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= OLS_MAX_COND) {
        return Err(Error::RankDeficient { cond });
    }
    svd.solve(y, 0.0).map_err(|e| Error::Solver(e.to_string()))
}

pub fn bic(n: usize, rss: f64, k: usize) -> f64 {
    let nf = n as f64;
    nf * (rss.max(RSS_FLOOR) / nf).ln() + k as f64 * nf.ln()
}

/// LAR entry order of the columns of `theta`.
///
/// The first constant column is treated as the intercept and placed first;
/// further constant columns never enter. Remaining columns are centred and
/// scaled to unit norm before the equiangular steps. At most `min(N-1, P)`
/// columns are returned in total; the path stops early once the residual is
/// fully explained.
pub fn lar_path(theta: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<usize>> {
    let (n, p) = theta.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 || p == 0 {
        return Ok(Vec::new());
    }
    let max_total = (n - 1).min(p).max(1);

    let mut intercept = None;
    let mut cols: Vec<usize> = Vec::new();
    let mut x: Vec<f64> = Vec::new();
    for j in 0..p {
        let c = theta.column(j);
        let mean = c.mean();
        let scale = c.amax().max(1.0);
        let mut v: Vec<f64> = c.iter().map(|e| e - mean).collect();
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale * (n as f64).sqrt() {
            if intercept.is_none() {
                intercept = Some(j);
            }
            continue;
        }
        v.iter_mut().for_each(|e| *e /= norm);
        cols.push(j);
        x.extend_from_slice(&v);
    }

    let mut order: Vec<usize> = intercept.into_iter().collect();
    let max_steps = max_total.saturating_sub(order.len()).min(cols.len());
    if max_steps == 0 {
        if order.is_empty() {
            order.push(0);
        }
        return Ok(order);
    }

    let m = cols.len();
    let col = |j: usize| &x[j * n..(j + 1) * n];
    let ybar = y.mean();
    let r: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut c: Vec<f64> = (0..m).map(|j| dot(col(j), &r)).collect();
    let c0 = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if c0 == 0.0 {
        if order.is_empty() {
            order.push(cols[0]);
        }
        return Ok(order);
    }

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Free,
        Active,
        Dropped,
    }
    let mut state = vec![State::Free; m];
    let mut active: Vec<usize> = Vec::new();
    let mut sign: Vec<f64> = Vec::new();
    // Lower Cholesky factor of the signed Gram matrix of the active set, row-major.
    let mut chol: Vec<f64> = Vec::new();
    let mut u = vec![0.0; n];
    let mut a = vec![0.0; m];

    let mut next = argmax_abs(&c, &state, |s| *s == State::Free);
    while active.len() < max_steps {
        let Some(j) = next else { break };
        let s = if c[j] >= 0.0 { 1.0 } else { -1.0 };
        // Extend the factor; a near-zero pivot means the column is collinear.
        let k = active.len();
        let g: Vec<f64> = active.iter().zip(&sign).map(|(&i, &si)| si * s * dot(col(i), col(j))).collect();
        let l = forward_sub(&chol, k, &g);
        let d = 1.0 - l.iter().map(|v| v * v).sum::<f64>();
        if d <= 1e-10 {
            state[j] = State::Dropped;
            next = argmax_abs(&c, &state, |s| *s == State::Free);
            continue;
        }
        let mut grown = vec![0.0; (k + 1) * (k + 1)];
        for row in 0..k {
            grown[row * (k + 1)..row * (k + 1) + row + 1].copy_from_slice(&chol[row * k..row * k + row + 1]);
        }
        grown[k * (k + 1)..k * (k + 1) + k].copy_from_slice(&l);
        grown[k * (k + 1) + k] = d.sqrt();
        chol = grown;
        active.push(j);
        sign.push(s);
        state[j] = State::Active;
        order.push(cols[j]);
        if active.len() == max_steps {
            break;
        }

        let kk = active.len();
        let ones = vec![1.0; kk];
        let w = back_sub(&chol, kk, &forward_sub(&chol, kk, &ones));
        let aa = 1.0 / w.iter().sum::<f64>().sqrt();
        u.iter_mut().for_each(|e| *e = 0.0);
        for (t, &i) in active.iter().enumerate() {
            let coef = aa * w[t] * sign[t];
            for (ue, xe) in u.iter_mut().zip(col(i)) {
                *ue += coef * xe;
            }
        }
        let big_c = c[active[0]].abs();
        let mut gamma = f64::INFINITY;
        let mut pick = None;
        for jj in 0..m {
            if state[jj] != State::Free {
                continue;
            }
            a[jj] = dot(col(jj), &u);
            for cand in [(big_c - c[jj]) / (aa - a[jj]), (big_c + c[jj]) / (aa + a[jj])] {
                if cand > 1e-14 * big_c.max(1e-300) && cand < gamma * (1.0 - 1e-12) {
                    gamma = cand;
                    pick = Some(jj);
                }
            }
        }
        let Some(p_next) = pick else { break };
        let gamma = gamma.min(big_c / aa);
        for (&i, &si) in active.iter().zip(&sign) {
            c[i] -= gamma * aa * si;
        }
        for jj in 0..m {
            if state[jj] == State::Free {
                c[jj] -= gamma * a[jj];
            }
        }
        if big_c - gamma * aa <= 1e-12 * c0 {
            break;
        }
        next = Some(p_next);
    }
    Ok(order)
}

fn argmax_abs<S>(c: &[f64], state: &[S], ok: impl Fn(&S) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for j in 0..c.len() {
        if !ok(&state[j]) {
            continue;
        }
        match best {
            // Earlier columns win near-ties.
            Some(b) if c[j].abs() <= c[b].abs() * (1.0 + 1e-12) => {}
            _ => best = Some(j),
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn forward_sub(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..k {
        let mut s = x[i];
        for j in 0..i {
            s -= l[i * k + j] * x[j];
        }
        x[i] = s / l[i * k + i];
    }
    x
}

fn back_sub(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..k).rev() {
        let mut s = x[i];
        for j in i + 1..k {
            s -= l[j * k + i] * x[j];
        }
        x[i] = s / l[i * k + i];
    }
    x
}

/// BIC of every prefix of `order`, using an OLS refit of each prefix.
///
/// Prefix residuals come from incremental Gram-Schmidt with one
/// re-orthogonalisation pass; prefixes containing a numerically dependent
/// column get an infinite score.
pub fn nested_bic(theta: &DMatrix<f64>, y: &DVector<f64>, order: &[usize]) -> Vec<f64> {
    let n = theta.nrows();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut res: Vec<f64> = y.iter().copied().collect();
    let mut out = Vec::with_capacity(order.len());
    let mut broken = false;
    for (k, &j) in order.iter().enumerate() {
        let orig: Vec<f64> = theta.column(j).iter().copied().collect();
        let onorm = orig.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = orig;
        for _ in 0..2 {
            for qi in &q {
                let h = dot(qi, &v);
                for (ve, qe) in v.iter_mut().zip(qi) {
                    *ve -= h * qe;
                }
            }
        }
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm <= 1e-10 * onorm.max(1e-300) {
            broken = true;
        } else {
            v.iter_mut().for_each(|e| *e /= norm);
            let h = dot(&v, &res);
            for (re, ve) in res.iter_mut().zip(&v) {
                *re -= h * ve;
            }
            q.push(v);
        }
        let rss = res.iter().map(|e| e * e).sum::<f64>();
        out.push(if broken { f64::INFINITY } else { bic(n, rss, k + 1) });
    }
    out
}

/// Selected subset and its refit coefficients.
#[derive(Debug, Clone)]
pub struct BicChoice {
    pub subset: Vec<usize>,
    pub coeffs: DVector<f64>,
    pub bic: f64,
    pub rss: f64,
}

/// Picks the candidate subset of columns with the smallest BIC.
pub fn bic_select(subsets: &[Vec<usize>], theta: &DMatrix<f64>, y: &DVector<f64>) -> Result<BicChoice> {
    if subsets.is_empty() {
        return Err(Error::InvalidArgument("bic_select needs at least one candidate subset".into()));
    }
    let n = theta.nrows();
    let mut best: Option<BicChoice> = None;
    for s in subsets {
        let sub = theta.select_columns(s.iter());
        let a = ols_fit(&sub, y)?;
        let rss = (y - &sub * &a).norm_squared();
        let score = bic(n, rss, s.len());
        if best.as_ref().is_none_or(|b| score < b.bic) {
            best = Some(BicChoice { subset: s.clone(), coeffs: a, bic: score, rss });
        }
    }
    Ok(best.expect("non-empty"))
}
