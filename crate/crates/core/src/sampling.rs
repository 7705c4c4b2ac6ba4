//! Experimental designs and Monte-Carlo intersite (MIPT) enrichment.
//!
//! Each new sample is the candidate, out of a batch of uniform random draws,
//! whose distance to the nearest existing design point is largest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Bounds;
use crate::error::{Error, Result};
use crate::models::ForwardModel;

/// Default number of Monte-Carlo candidates drawn per MIPT step.
pub const DEFAULT_CANDIDATES: usize = 25_000;

/// Paired inputs and forward-model outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalDesign {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_tag: Option<Vec<usize>>,
}

impl ExperimentalDesign {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: outputs.len() });
        }
        if let Some(first) = inputs.first() {
            let m = first.len();
            if let Some(bad) = inputs.iter().find(|x| x.len() != m) {
                return Err(Error::DimensionMismatch { expected: m, got: bad.len() });
            }
        }
        Ok(Self { inputs, outputs, cell_tag: None })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.inputs.push(x);
        self.outputs.push(y);
    }

    /// Rows whose input lies in `bounds` (closed box).
    pub fn restrict(&self, bounds: &Bounds) -> ExperimentalDesign {
        let mut out = ExperimentalDesign::default();
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            if bounds.contains_unchecked(x) {
                out.push(x.clone(), *y);
            }
        }
        out
    }

    pub fn count_in(&self, bounds: &Bounds) -> usize {
        self.inputs.iter().filter(|x| bounds.contains_unchecked(x)).count()
    }

    /// Smallest Euclidean distance between two rows (`inf` for fewer than two rows).
    pub fn min_pairwise_distance(&self) -> f64 {
        min_pairwise_distance(&self.inputs)
    }
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(sq_dist(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform draw strictly inside `bounds`.
pub fn uniform_in<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    let mut x = Vec::with_capacity(bounds.dim());
    push_uniform(bounds, rng, &mut x);
    x
}

fn push_uniform<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R, out: &mut Vec<f64>) {
    for (lo, hi) in bounds.lower().iter().zip(bounds.upper()) {
        let v = loop {
            let v = lo + (hi - lo) * rng.random::<f64>();
            if v > *lo && v < *hi {
                break v;
            }
        };
        out.push(v);
    }
}

/// Pick the candidate maximizing the distance to its nearest neighbour in `existing`.
/// Ties keep the first candidate. With no existing points the first candidate wins.
pub fn select_farthest(existing: &[Vec<f64>], candidates: &[Vec<f64>]) -> usize {
    let m = candidates.first().map_or(0, Vec::len);
    let flat_existing: Vec<f64> = existing.iter().flatten().copied().collect();
    let flat_cands: Vec<f64> = candidates.iter().flatten().copied().collect();
    select_farthest_flat(&flat_existing, &flat_cands, m)
}

/// Flat-buffer version of [`select_farthest`]; both slices hold rows of length `m`.
///
/// Existing points are bucketed on a coarse grid over the candidate bounding
/// box. A candidate's own bucket gives a cheap upper bound on its nearest
/// distance, which rejects most candidates before the full scan. The result is
/// identical to a brute-force search.
fn select_farthest_flat(existing: &[f64], candidates: &[f64], m: usize) -> usize {
    if existing.is_empty() || m == 0 {
        return 0;
    }
    let grid = Grid::new(existing, candidates, m);
    let mut best_idx = 0;
    let mut best = f64::NEG_INFINITY;
    'cand: for (c, cand) in candidates.chunks_exact(m).enumerate() {
        let mut nearest = f64::INFINITY;
        for &i in &grid.buckets[grid.bucket(cand)] {
            let p = &existing[i as usize * m..(i as usize + 1) * m];
            nearest = nearest.min(sq_dist(cand, p));
            if nearest <= best {
                continue 'cand;
            }
        }
        // newest points first: they are the likeliest to be close
        for p in existing.chunks_exact(m).rev() {
            let d = sq_dist(cand, p);
            if d < nearest {
                nearest = d;
                if nearest <= best {
                    continue 'cand;
                }
            }
        }
        if nearest > best {
            best = nearest;
            best_idx = c;
        }
    }
    best_idx
}

struct Grid {
    lo: Vec<f64>,
    scale: Vec<f64>,
    g: usize,
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn new(existing: &[f64], candidates: &[f64], m: usize) -> Self {
        let n = existing.len() / m;
        let g = ((n as f64 / 2.0).powf(1.0 / m as f64).floor() as usize).clamp(1, 64);
        let g = if g.pow(m as u32) > 1 << 16 { 1 } else { g };
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for row in candidates.chunks_exact(m) {
            for k in 0..m {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        let scale = lo.iter().zip(&hi).map(|(l, h)| if h > l { g as f64 / (h - l) } else { 0.0 }).collect();
        let mut grid = Grid { lo, scale, g, buckets: vec![Vec::new(); g.pow(m as u32)] };
        for (i, p) in existing.chunks_exact(m).enumerate() {
            let b = grid.bucket(p);
            grid.buckets[b].push(i as u32);
        }
        grid
    }

    fn bucket(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for k in 0..x.len() {
            let c = ((x[k] - self.lo[k]) * self.scale[k]).max(0.0) as usize;
            idx = idx * self.g + c.min(self.g - 1);
        }
        idx
    }
}

fn fill_candidates<R: Rng + ?Sized>(bounds: &Bounds, n: usize, rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    for _ in 0..n {
        push_uniform(bounds, rng, out);
    }
}

/// One MIPT step: draw `n_candidates` points inside `bounds` and return the
/// one farthest from the design points already in `bounds`.
pub fn mipt_next<R: Rng + ?Sized>(
    ed: &ExperimentalDesign,
    bounds: &Bounds,
    n_candidates: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_candidates == 0 {
        return Err(Error::InvalidArgument("n_candidates must be at least 1".into()));
    }
    if let Some(m) = ed.dim() {
        if m != bounds.dim() {
            return Err(Error::DimensionMismatch { expected: bounds.dim(), got: m });
        }
    }
    let m = bounds.dim();
    let existing: Vec<f64> =
        ed.inputs.iter().filter(|x| bounds.contains_unchecked(x)).flatten().copied().collect();
    let mut cands = Vec::with_capacity(n_candidates * m);
    fill_candidates(bounds, n_candidates, rng, &mut cands);
    let k = select_farthest_flat(&existing, &cands, m);
    Ok(cands[k * m..(k + 1) * m].to_vec())
}

/// Grow the design inside `bounds` until it holds `target_n` points, running
/// the forward model at each new point. Existing rows are kept untouched.
pub fn mipt_fill<R: Rng + ?Sized>(
    mut ed: ExperimentalDesign,
    bounds: &Bounds,
    target_n: usize,
    n_candidates: usize,
    rng: &mut R,
    forward: &dyn ForwardModel,
) -> Result<ExperimentalDesign> {
    if n_candidates == 0 {
        return Err(Error::InvalidArgument("n_candidates must be at least 1".into()));
    }
    if forward.dim() != bounds.dim() {
        return Err(Error::DimensionMismatch { expected: bounds.dim(), got: forward.dim() });
    }
    let m = bounds.dim();
    let mut existing: Vec<f64> =
        ed.inputs.iter().filter(|x| bounds.contains_unchecked(x)).flatten().copied().collect();
    let mut count = existing.len() / m;
    if count > target_n {
        return Err(Error::InvalidArgument(format!(
            "box already holds {count} points, more than the target {target_n}"
        )));
    }
    let mut cands = Vec::with_capacity(n_candidates * m);
    while count < target_n {
        fill_candidates(bounds, n_candidates, rng, &mut cands);
        let k = select_farthest_flat(&existing, &cands, m);
        let x = cands[k * m..(k + 1) * m].to_vec();
        let y = forward.evaluate(&x).map_err(|e| match e {
            e @ Error::Forward { .. } => e,
            other => Error::Forward { point: x.clone(), reason: other.to_string() },
        })?;
        existing.extend_from_slice(&x);
        count += 1;
        ed.push(x, y);
    }
    Ok(ed)
}

/// `n` independent uniform points in `bounds` (used for validation sets and baselines).
pub fn uniform_design<R: Rng + ?Sized>(bounds: &Bounds, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| uniform_in(bounds, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FnModel;
    use crate::rng::seeded;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn unit_square() -> Bounds {
        Bounds::cube(2, 0.0, 1.0).unwrap()
    }

    #[test]
    fn farthest_from_center_is_a_corner() {
        let existing = vec![vec![0.5, 0.5]];
        let corners = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        // all four corners are equidistant; first one wins
        assert_eq!(select_farthest(&existing, &corners), 0);
        let mixed = vec![vec![0.5, 0.6], vec![1.0, 1.0], vec![0.4, 0.5]];
        assert_eq!(select_farthest(&existing, &mixed), 1);
    }

    #[test]
    fn empty_design_returns_first_candidate() {
        let mut rng = seeded(3);
        let x = mipt_next(&ExperimentalDesign::default(), &unit_square(), 50, &mut rng).unwrap();
        let mut rng2 = seeded(3);
        let first = uniform_in(&unit_square(), &mut rng2);
        assert_eq!(x, first);
    }

    #[test]
    fn hand_computed_min_distances() {
        // min-distances: 0.707 for the centre, 0.141 for (0.1, 0.1)
        let existing = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let cands = vec![vec![0.5, 0.5], vec![0.1, 0.1]];
        assert_eq!(select_farthest(&existing, &cands), 0);
        let cands = vec![vec![0.1, 0.1], vec![0.5, 0.5]];
        assert_eq!(select_farthest(&existing, &cands), 1);
    }

    #[test]
    fn fill_counts_forward_calls() {
        let calls = AtomicUsize::new(0);
        let f = FnModel::new(2, |x: &[f64]| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(x[0] + x[1])
        });
        let mut rng = seeded(5);
        let ed = mipt_fill(ExperimentalDesign::default(), &unit_square(), 7, 200, &mut rng, &f)
            .unwrap();
        assert_eq!(ed.len(), 7);
        assert_eq!(calls.load(Ordering::SeqCst), 7);

        let before = ed.clone();
        let ed = mipt_fill(ed, &unit_square(), 7, 200, &mut rng, &f).unwrap();
        assert_eq!(ed, before);
        assert_eq!(calls.load(Ordering::SeqCst), 7);

        let ed = mipt_fill(ed, &unit_square(), 12, 200, &mut rng, &f).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 12);
        assert_eq!(&ed.inputs[..7], &before.inputs[..]);
        for (x, y) in ed.inputs.iter().zip(&ed.outputs) {
            assert!(x.iter().all(|v| *v > 0.0 && *v < 1.0));
            assert_eq!(*y, x[0] + x[1]);
        }
    }

    #[test]
    fn forward_failure_carries_point() {
        let f = FnModel::new(2, |_x: &[f64]| Err(Error::Solver("boom".into())));
        let mut rng = seeded(1);
        let err = mipt_fill(ExperimentalDesign::default(), &unit_square(), 3, 10, &mut rng, &f)
            .unwrap_err();
        match err {
            Error::Forward { point, reason } => {
                assert_eq!(point.len(), 2);
                assert!(reason.contains("boom"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let f = FnModel::new(2, |x: &[f64]| Ok(x[0]));
        let a = mipt_fill(ExperimentalDesign::default(), &unit_square(), 20, 500, &mut seeded(9), &f)
            .unwrap();
        let b = mipt_fill(ExperimentalDesign::default(), &unit_square(), 20, 500, &mut seeded(9), &f)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn appended_point_keeps_dispersion_consistent() {
        let f = FnModel::new(2, |x: &[f64]| Ok(x[1]));
        let mut rng = seeded(21);
        let mut ed = mipt_fill(ExperimentalDesign::default(), &unit_square(), 10, 1000, &mut rng, &f)
            .unwrap();
        for _ in 0..10 {
            let before = ed.min_pairwise_distance();
            let x = mipt_next(&ed, &unit_square(), 1000, &mut rng).unwrap();
            let d_new = ed.inputs.iter().map(|p| sq_dist(p, &x)).fold(f64::INFINITY, f64::min).sqrt();
            ed.push(x, 0.0);
            let after = ed.min_pairwise_distance();
            assert!((after - before.min(d_new)).abs() < 1e-15);
        }
    }
}
