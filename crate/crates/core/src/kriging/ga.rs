use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each search interval.
    pub mutation_scale: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 60,
            tournament: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_scale: 0.1,
            elitism: 2,
        }
    }
}

impl GaConfig {
    pub fn budget(&self) -> usize {
        self.population * (self.generations + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::InvalidArgument(format!("GA population must be even and >= 2, got {}", self.population)));
        }
        if self.tournament == 0 || self.elitism > self.population {
            return Err(Error::InvalidArgument("GA tournament must be >= 1 and elitism <= population".into()));
        }
        let rates = [self.crossover_rate, self.mutation_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || !(self.mutation_scale >= 0.0) {
            return Err(Error::InvalidArgument("GA rates must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `objective` over the box `bounds` with a real-coded genetic algorithm.
///
/// Non-finite objective values count as `+inf`. Every generation, elites
/// included, is evaluated in full, so the evaluation count is exactly
/// `population * (generations + 1)`. The best individual ever seen is returned.
pub fn ga_optimize<R, F>(objective: F, bounds: &[(f64, f64)], cfg: &GaConfig, rng: &mut R) -> Result<GaResult>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::InvalidArgument("GA bounds must be finite with lo <= hi".into()));
    }
    let d = bounds.len();
    let np = cfg.population;
    let sigma: Vec<f64> = bounds.iter().map(|(lo, hi)| cfg.mutation_scale * (hi - lo)).collect();

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect())
        .collect();
    let mut fit = evaluate(&objective, &pop);
    let mut evaluations = np;

    let mut best_i = argmin(&fit);
    let mut best = (pop[best_i].clone(), fit[best_i]);

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..cfg.generations {
        let mut rank: Vec<usize> = (0..np).collect();
        rank.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));
        let mut next: Vec<Vec<f64>> = rank.iter().take(cfg.elitism).map(|&i| pop[i].clone()).collect();

        while next.len() < np {
            let pa = tournament(&fit, cfg.tournament, rng);
            let pb = tournament(&fit, cfg.tournament, rng);
            let (mut c1, mut c2) = (pop[pa].clone(), pop[pb].clone());
            if rng.random::<f64>() < cfg.crossover_rate {
                for k in 0..d {
                    if rng.random::<bool>() {
                        std::mem::swap(&mut c1[k], &mut c2[k]);
                    }
                }
            }
            for child in [&mut c1, &mut c2] {
                for k in 0..d {
                    if rng.random::<f64>() < cfg.mutation_rate {
                        child[k] = (child[k] + sigma[k] * std_normal.sample(rng)).clamp(bounds[k].0, bounds[k].1);
                    }
                }
            }
            next.push(c1);
            if next.len() < np {
                next.push(c2);
            }
        }
        pop = next;
        fit = evaluate(&objective, &pop);
        evaluations += np;
        best_i = argmin(&fit);
        if fit[best_i] < best.1 {
            best = (pop[best_i].clone(), fit[best_i]);
        }
    }
    Ok(GaResult { best: best.0, value: best.1, evaluations })
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[cfg(feature = "parallel")]
fn evaluate<F: Fn(&[f64]) -> f64 + Sync>(f: &F, pop: &[Vec<f64>]) -> Vec<f64> {
    use rayon::prelude::*;
    pop.par_iter().map(|x| sanitize(f(x))).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate<F: Fn(&[f64]) -> f64 + Sync>(f: &F, pop: &[Vec<f64>]) -> Vec<f64> {
    pop.iter().map(|x| sanitize(f(x))).collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut b = 0;
    for i in 1..v.len() {
        if v[i] < v[b] {
            b = i;
        }
    }
    b
}

fn tournament<R: Rng + ?Sized>(fit: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..size {
        let c = rng.random_range(0..fit.len());
        if fit[c] < fit[best] {
            best = c;
        }
    }
    best
}
