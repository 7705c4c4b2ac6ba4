use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 512;

/// Gaussian kernel density estimate tabulated on a uniform grid spanning the
/// sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least two samples for a bandwidth".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Degenerate("samples have zero spread".into()));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        let h = silverman_bandwidth(samples)?;
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|k| lo + step * k as f64).collect();

        // bin onto a fine histogram first, then convolve; exact kernel sums on
        // 10^5 samples would cost 5e7 exponentials per dimension
        let fine = 8 * GRID_POINTS;
        let fstep = (hi - lo) / fine as f64;
        let mut counts = vec![0.0; fine];
        for &x in samples {
            let b = (((x - lo) / fstep) as usize).min(fine - 1);
            counts[b] += 1.0;
        }
        let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        let reach = 8.0 * h;
        let density = grid
            .iter()
            .map(|&g| {
                let b0 = (((g - reach - lo) / fstep).floor().max(0.0)) as usize;
                let b1 = ((((g + reach - lo) / fstep).ceil()) as usize).min(fine);
                let mut s = 0.0;
                for (b, &c) in counts.iter().enumerate().take(b1).skip(b0) {
                    if c > 0.0 {
                        let z = (g - (lo + (b as f64 + 0.5) * fstep)) / h;
                        s += c * (-0.5 * z * z).exp();
                    }
                }
                s * norm
            })
            .collect();
        Ok(Self { grid, density, bandwidth: h })
    }

    /// Grid location of the density maximum.
    pub fn mode(&self) -> f64 {
        let mut k = 0;
        for i in 1..self.density.len() {
            if self.density[i] > self.density[k] {
                k = i;
            }
        }
        self.grid[k]
    }

    /// Local maxima of the density above `rel * max`, strongest first.
    pub fn modes(&self, rel: f64) -> Vec<f64> {
        let d = &self.density;
        let top = d.iter().copied().fold(0.0, f64::max);
        let mut peaks: Vec<(f64, f64)> = (0..d.len())
            .filter(|&i| {
                let left = i == 0 || d[i] > d[i - 1];
                let right = i + 1 == d.len() || d[i] >= d[i + 1];
                left && right && d[i] >= rel * top
            })
            .map(|i| (d[i], self.grid[i]))
            .collect();
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        peaks.into_iter().map(|p| p.1).collect()
    }
}

/// One connected piece of a highest-density region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdrInterval {
    pub lo: f64,
    pub hi: f64,
    /// Probability mass of the grid cells above the threshold inside `[lo, hi]`.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hdr {
    pub level: f64,
    pub threshold: f64,
    pub intervals: Vec<HdrInterval>,
    /// Total length of the grid cells above the threshold.
    pub measure: f64,
}

/// Highest-density region of the samples at probability `level`.
///
/// Grid runs above the density threshold become intervals, with end points
/// placed where the linear interpolant crosses the threshold. Neighbouring
/// runs are merged when the density between them never drops more than three
/// KDE standard errors below the threshold: on flat stretches sampling noise
/// would otherwise shred a single region into slivers.
pub fn hdr(samples: &[f64], level: f64) -> Result<Hdr> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("HDR level must lie in (0,1), got {level}")));
    }
    let kde = Kde::new(samples)?;
    let d = &kde.density;
    let step = kde.grid[1] - kde.grid[0];
    let total: f64 = d.iter().sum();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut acc = 0.0;
    let mut threshold = d[order[0]];
    for &i in &order {
        acc += d[i];
        threshold = d[i];
        if acc >= level * total {
            break;
        }
    }

    let above: Vec<bool> = d.iter().map(|&v| v >= threshold).collect();
    let cross = |i: usize, j: usize| -> f64 {
        // point between grid nodes i (below) and j (above) where density hits the threshold
        let (a, b) = (d[i], d[j]);
        let t = if b != a { (threshold - a) / (b - a) } else { 0.5 };
        kde.grid[i] + t * (kde.grid[j] - kde.grid[i])
    };
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < d.len() {
        if !above[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < d.len() && above[k + 1] {
            k += 1;
        }
        runs.push((start, k));
        k += 1;
    }
    // pointwise sd of a Gaussian KDE is about sqrt(f / (2 sqrt(pi) n h))
    let se = (threshold / (2.0 * std::f64::consts::PI.sqrt() * samples.len() as f64 * kde.bandwidth)).sqrt();
    let floor = threshold - 3.0 * se;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if d[last.1 + 1..r.0].iter().all(|&v| v >= floor) => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    let intervals = merged
        .into_iter()
        .map(|(a, b)| HdrInterval {
            lo: if a == 0 { kde.grid[0] } else { cross(a - 1, a) },
            hi: if b + 1 == d.len() { kde.grid[b] } else { cross(b + 1, b) },
            mass: (a..=b).filter(|&i| above[i]).map(|i| d[i]).sum::<f64>() / total,
        })
        .collect();
    let measure = above.iter().filter(|a| **a).count() as f64 * step;
    Ok(Hdr { level, threshold, intervals, measure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn normal_half_hdr_matches_quartiles() {
        let h = hdr(&normals(20_000, 1), 0.5).unwrap();
        assert_eq!(h.intervals.len(), 1);
        let iv = h.intervals[0];
        assert!((iv.lo + 0.674).abs() < 0.05 && (iv.hi - 0.674).abs() < 0.05, "{iv:?}");
    }

    #[test]
    fn uniform_hdr_is_one_piece_of_right_size() {
        let mut rng = seeded(2);
        let s: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let h = hdr(&s, 0.8).unwrap();
        assert_eq!(h.intervals.len(), 1, "{:?}", h.intervals);
        assert!((h.measure - 0.8).abs() < 0.05, "{}", h.measure);
    }

    #[test]
    fn separated_modes_give_two_intervals() {
        let mut s = normals(10_000, 3);
        for (i, v) in s.iter_mut().enumerate() {
            *v += if i % 2 == 0 { -5.0 } else { 5.0 };
        }
        let h = hdr(&s, 0.5).unwrap();
        assert_eq!(h.intervals.len(), 2);
        assert!(h.intervals[0].hi < 0.0 && h.intervals[1].lo > 0.0);
        let kde = Kde::new(&s).unwrap();
        let m = kde.modes(0.5);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn kde_integrates_to_one_and_degenerate_fails() {
        let kde = Kde::new(&normals(5_000, 4)).unwrap();
        let step = kde.grid[1] - kde.grid[0];
        let mass: f64 = kde.density.iter().sum::<f64>() * step;
        assert!((mass - 1.0).abs() < 0.01, "{mass}");
        assert!(Kde::new(&[2.0; 100]).is_err());
        assert!(hdr(&[2.0; 100], 0.5).is_err());
    }
}
