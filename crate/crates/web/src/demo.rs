//! Plain-Rust core of the browser demo, kept free of JS types so it runs in native tests.

use mepck::dram::{dram_sample, hdr, DramConfig, FnTarget};
use mepck::metrics::compute_metrics;
use mepck::models::tds::solve_at;
use mepck::models::{dropwave, DropWave, SolverOptions, TdsConfig, TrapSet};
use mepck::rng::seeded;
use mepck::sampling::uniform_design;
use mepck::{Bounds, BuildConfig, MultielementPck, Result};

pub const DROPWAVE_HALF_WIDTH: f64 = 10.0;

/// Values on an `n x n` grid over `[-10, 10]^2`, first coordinate fastest.
pub fn grid<F: FnMut(f64, f64) -> Result<f64>>(n: usize, mut f: F) -> Result<Vec<f64>> {
    let step = 2.0 * DROPWAVE_HALF_WIDTH / (n.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(f(-DROPWAVE_HALF_WIDTH + i as f64 * step, -DROPWAVE_HALF_WIDTH + j as f64 * step)?);
        }
    }
    Ok(out)
}

pub fn dropwave_grid(n: usize) -> Vec<f64> {
    grid(n, |a, b| Ok(dropwave(a, b))).expect("closed form never fails")
}

pub struct DropWaveFit {
    pub model: MultielementPck,
    /// Design points as `x1, x2` pairs.
    pub points: Vec<f64>,
    pub r2: f64,
    pub nrmse: f64,
}

/// Small-budget surrogate, sized to fit interactively in a browser tab.
pub fn fit_dropwave(divisions: usize, per_cell_n: usize, seed: u64) -> Result<DropWaveFit> {
    let domain = Bounds::cube(2, -DROPWAVE_HALF_WIDTH, DROPWAVE_HALF_WIDTH)?;
    let mut cfg = BuildConfig::new(vec![divisions, divisions], per_cell_n);
    cfg.seed = seed;
    cfg.n_candidates = 5000;
    cfg.kriging.ga.population = 16;
    cfg.kriging.ga.generations = 10;
    let (model, designs) = MultielementPck::build(&DropWave, &domain, &cfg)?;
    let points = designs.iter().flat_map(|d| d.inputs.iter().flatten().copied()).collect();
    let probes = uniform_design(&domain, 2000, &mut seeded(seed ^ 0x9e37_79b9));
    let truth: Vec<f64> = probes.iter().map(|x| dropwave(x[0], x[1])).collect();
    let report = compute_metrics(&truth, &model.predict_many(&probes)?)?;
    Ok(DropWaveFit { model, points, r2: report.r2, nrmse: report.nrmse })
}

/// Two-trap desorption spectrum as `T_bar, J_bar` pairs on `points` evenly spaced temperatures.
pub fn tds_spectrum(traps: [f64; 4], points: usize) -> Result<Vec<f64>> {
    let options = SolverOptions::default();
    let n = points.max(2);
    let t: Vec<f64> = (0..n).map(|i| 1.0 + (options.t_bar_max - 1.0) * i as f64 / (n - 1) as f64).collect();
    let curve = solve_at(&TdsConfig::default(), &TrapSet::two(traps)?, &options, &t)?;
    Ok(t.iter().zip(&curve.j_bar).flat_map(|(a, b)| [*a, *b]).collect())
}

pub struct MixtureRun {
    pub samples: Vec<f64>,
    /// HDR intervals as `lo, hi` pairs.
    pub intervals: Vec<f64>,
    pub acceptance_rate: f64,
}

/// DRAM on the equal-weight mixture of `N(-s, 1)` and `N(s, 1)`.
pub fn mixture_run(separation: f64, t: usize, level: f64, seed: u64) -> Result<MixtureRun> {
    let s = separation.abs();
    let support = Bounds::new(vec![-s - 8.0], vec![s + 8.0])?;
    let target = FnTarget::new(support, move |x: &[f64]| {
        let a = -0.5 * (x[0] + s).powi(2);
        let b = -0.5 * (x[0] - s).powi(2);
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    });
    let mut cfg = DramConfig::new(t, t / 5, vec![0.0]);
    cfg.seed = seed;
    cfg.n0 = (t / 10).max(100).min(t);
    let chain = dram_sample(&target, &cfg)?;
    let samples = chain.marginal(0);
    let region = hdr(&samples, level)?;
    let intervals = region.intervals.iter().flat_map(|iv| [iv.lo, iv.hi]).collect();
    Ok(MixtureRun { samples, intervals, acceptance_rate: chain.acceptance().rate() })
}
