//! Piecewise assembly of local PC-Kriging models over a block partition.
//!
//! The global prediction at `x` is the prediction of the local model of the
//! unique cell holding `x`. Nothing is blended across faces, so the surrogate
//! can jump there; [`MultielementPck::face_jumps`] measures by how much.

use web_time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{Bounds, Partition};
use crate::error::{Error, Result};
use crate::kriging::{KrigingConfig, PckModel, PckReport, PredictScratch};
use crate::metrics::nrmse;
use crate::models::ForwardModel;
use crate::pce::SparsePce;
use crate::rng::{derive_seed, seeded};
use crate::sampling::{mipt_fill, ExperimentalDesign, DEFAULT_CANDIDATES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Divisions per axis.
    pub counts: Vec<usize>,
    pub per_cell_n: usize,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default)]
    pub kriging: KrigingConfig,
    #[serde(default)]
    pub seed: u64,
    /// Fit cells concurrently (needs the `parallel` feature).
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_candidates() -> usize {
    DEFAULT_CANDIDATES
}

fn default_true() -> bool {
    true
}

impl BuildConfig {
    pub fn new(counts: Vec<usize>, per_cell_n: usize) -> Self {
        Self {
            counts,
            per_cell_n,
            n_candidates: DEFAULT_CANDIDATES,
            kriging: KrigingConfig::default(),
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    pub n_points: usize,
    /// Forward-model runs spent on this cell.
    pub evaluations: usize,
    pub sampling_seconds: f64,
    pub pck: PckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BuildReport {
    pub cells: Vec<CellReport>,
    pub forward_evaluations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct MultielementPck {
    partition: Partition,
    locals: Vec<PckModel>,
    report: BuildReport,
}

#[derive(Deserialize)]
struct RawModel {
    partition: Partition,
    locals: Vec<PckModel>,
    #[serde(default)]
    report: BuildReport,
}

impl TryFrom<RawModel> for MultielementPck {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        MultielementPck::from_parts(r.partition, r.locals, r.report)
    }
}

/// Result of fitting one cell.
struct CellFit {
    design: ExperimentalDesign,
    model: PckModel,
    report: CellReport,
}

/// Shared read-only inputs of a batch of cell fits.
struct CellJob<'a> {
    forward: Option<&'a dyn ForwardModel>,
    target: usize,
    cfg: &'a BuildConfig,
    stream: u64,
}

impl CellJob<'_> {
    fn run(&self, j: usize, bounds: &Bounds, ed: ExperimentalDesign) -> Result<CellFit> {
        let wrap = |e: Error| Error::Cell { cell: j, source: Box::new(e) };
        let mut rng = seeded(derive_seed(self.cfg.seed, (self.stream << 32) | j as u64));
        let before = ed.len();
        let t0 = Instant::now();
        let design = match self.forward {
            Some(f) => {
                let target = self.target.max(before);
                mipt_fill(ed, bounds, target, self.cfg.n_candidates, &mut rng, f).map_err(wrap)?
            }
            None => ed,
        };
        let sampling_seconds = t0.elapsed().as_secs_f64();
        if let Some(bad) = design.inputs.iter().find(|x| !bounds.contains_unchecked(x)) {
            return Err(wrap(Error::OutOfDomain(bad.clone())));
        }
        let (model, pck) =
            PckModel::fit(bounds, &design.inputs, &design.outputs, &self.cfg.kriging, &mut rng).map_err(wrap)?;
        let report = CellReport {
            cell: j,
            n_points: design.len(),
            evaluations: design.len() - before,
            sampling_seconds,
            pck,
        };
        Ok(CellFit { design, model, report })
    }
}

fn run_cells(partition: &Partition, seeds: Vec<ExperimentalDesign>, job: &CellJob) -> Result<Vec<CellFit>> {
    let cells: Vec<(usize, Bounds, ExperimentalDesign)> =
        seeds.into_iter().enumerate().map(|(j, ed)| (j, partition.cell(j).bounds, ed)).collect();
    #[cfg(feature = "parallel")]
    if job.cfg.parallel {
        use rayon::prelude::*;
        let results: Vec<Result<CellFit>> = cells.into_par_iter().map(|(j, b, ed)| job.run(j, &b, ed)).collect();
        return results.into_iter().collect();
    }
    cells.into_iter().map(|(j, b, ed)| job.run(j, &b, ed)).collect()
}

impl MultielementPck {
    /// Checks that there is one local model per cell with matching box.
    pub fn from_parts(partition: Partition, locals: Vec<PckModel>, report: BuildReport) -> Result<Self> {
        if locals.len() != partition.len() {
            return Err(Error::DimensionMismatch { expected: partition.len(), got: locals.len() });
        }
        for (j, m) in locals.iter().enumerate() {
            if *m.bounds() != partition.cell(j).bounds {
                return Err(Error::InvalidDomain(format!("local model {j} does not match its cell")));
            }
        }
        Ok(Self { partition, locals, report })
    }

    /// Partitions `domain`, grows an MIPT design of `per_cell_n` points in
    /// every cell and fits one PC-Kriging model per cell. Returns the model
    /// and the per-cell designs.
    pub fn build(
        forward: &dyn ForwardModel,
        domain: &Bounds,
        cfg: &BuildConfig,
    ) -> Result<(Self, Vec<ExperimentalDesign>)> {
        if forward.dim() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: forward.dim() });
        }
        if cfg.per_cell_n < 2 {
            return Err(Error::InvalidArgument(format!("per_cell_n must be at least 2, got {}", cfg.per_cell_n)));
        }
        let partition = Partition::split_regular(domain, &cfg.counts)?;
        let empty = vec![ExperimentalDesign::default(); partition.len()];
        let job = CellJob { forward: Some(forward), target: cfg.per_cell_n, cfg, stream: 0 };
        Self::assemble(partition, empty, &job)
    }

    /// The per-cell designs [`build`](Self::build) would sample with the same
    /// configuration, without fitting anything.
    pub fn sample_designs(
        forward: &dyn ForwardModel,
        domain: &Bounds,
        cfg: &BuildConfig,
    ) -> Result<(Partition, Vec<ExperimentalDesign>)> {
        if forward.dim() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: forward.dim() });
        }
        let partition = Partition::split_regular(domain, &cfg.counts)?;
        let sample = |j: usize| -> Result<ExperimentalDesign> {
            let mut rng = seeded(derive_seed(cfg.seed, j as u64));
            let b = partition.cell(j).bounds;
            mipt_fill(ExperimentalDesign::default(), &b, cfg.per_cell_n, cfg.n_candidates, &mut rng, forward)
                .map_err(|e| Error::Cell { cell: j, source: Box::new(e) })
        };
        #[cfg(feature = "parallel")]
        if cfg.parallel {
            use rayon::prelude::*;
            let eds = (0..partition.len()).into_par_iter().map(sample).collect::<Result<Vec<_>>>()?;
            return Ok((partition, eds));
        }
        let eds = (0..partition.len()).map(sample).collect::<Result<Vec<_>>>()?;
        Ok((partition, eds))
    }

    /// Fits local models on given per-cell designs without running any
    /// forward model (table-driven workflows).
    pub fn from_designs(
        partition: Partition,
        designs: Vec<ExperimentalDesign>,
        cfg: &BuildConfig,
    ) -> Result<(Self, Vec<ExperimentalDesign>)> {
        if designs.len() != partition.len() {
            return Err(Error::DimensionMismatch { expected: partition.len(), got: designs.len() });
        }
        let job = CellJob { forward: None, target: 0, cfg, stream: 0 };
        Self::assemble(partition, designs, &job)
    }

    fn assemble(
        partition: Partition,
        seeds: Vec<ExperimentalDesign>,
        job: &CellJob,
    ) -> Result<(Self, Vec<ExperimentalDesign>)> {
        let t0 = Instant::now();
        let fits = run_cells(&partition, seeds, job)?;
        let mut locals = Vec::with_capacity(fits.len());
        let mut designs = Vec::with_capacity(fits.len());
        let mut cells = Vec::with_capacity(fits.len());
        for f in fits {
            locals.push(f.model);
            designs.push(f.design);
            cells.push(f.report);
        }
        let report = BuildReport {
            forward_evaluations: cells.iter().map(|c| c.evaluations).sum(),
            cells,
            seconds: t0.elapsed().as_secs_f64(),
        };
        Ok((Self::from_parts(partition, locals, report)?, designs))
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn locals(&self) -> &[PckModel] {
        &self.locals
    }

    pub fn report(&self) -> &BuildReport {
        &self.report
    }

    pub fn dim(&self) -> usize {
        self.partition.parent().dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let j = self.partition.locate(x)?;
        self.locals[j].predict(x)
    }

    pub fn predict_with(&self, x: &[f64], scratch: &mut PredictScratch) -> Result<f64> {
        let j = self.partition.locate(x)?;
        self.locals[j].predict_with(x, scratch)
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut s = PredictScratch::default();
        xs.iter().map(|x| self.predict_with(x, &mut s)).collect()
    }

    /// Prediction discontinuities across interior faces at random face points.
    pub fn face_jumps<R: Rng + ?Sized>(&self, probes_per_face: usize, rng: &mut R) -> Result<FaceJumps> {
        let parent = self.partition.parent();
        let mut jumps = Vec::new();
        let mut scratch = PredictScratch::default();
        for (axis, b) in self.partition.breaks().iter().enumerate() {
            for k in 1..b.len() - 1 {
                for _ in 0..probes_per_face {
                    let mut x: Vec<f64> = parent
                        .lower()
                        .iter()
                        .zip(parent.upper())
                        .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                        .collect();
                    x[axis] = b[k];
                    let upper = self.partition.locate(&x)?;
                    let mut inside = x.clone();
                    inside[axis] = 0.5 * (b[k - 1] + b[k]);
                    let lower = self.partition.locate(&inside)?;
                    let a = self.locals[upper].predict_with(&x, &mut scratch)?;
                    let c = self.locals[lower].predict_with(&x, &mut scratch)?;
                    jumps.push((a - c).abs());
                }
            }
        }
        let n = jumps.len();
        let max = jumps.iter().copied().fold(0.0, f64::max);
        let mean = if n > 0 { jumps.iter().sum::<f64>() / n as f64 } else { 0.0 };
        Ok(FaceJumps { probes: n, max, mean })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceJumps {
    pub probes: usize,
    pub max: f64,
    pub mean: f64,
}

/// Axes ordered by decreasing total Sobol index of `pilot`; ties keep the
/// lower axis first.
pub fn rank_split_directions(pilot: &SparsePce) -> Result<Vec<usize>> {
    let s = pilot.sobol_indices()?;
    let mut axes: Vec<usize> = (0..pilot.dim()).collect();
    axes.sort_by(|&a, &b| s.total[b].total_cmp(&s.total[a]));
    Ok(axes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Target validation NRMSE.
    pub goal: f64,
    pub min_per_cell: usize,
    pub max_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// The lowest-NRMSE model seen.
    pub model: MultielementPck,
    pub designs: Vec<ExperimentalDesign>,
    /// Validation NRMSE of the starting model and after each round.
    pub trace: Vec<f64>,
    /// Split axis of every round, in order.
    pub axes: Vec<usize>,
    pub converged: bool,
}

/// Accuracy-driven refinement. Each round bisects every cell at its midpoint
/// along the next axis of `ranking` (cycling when all axes are used), keeps
/// the parent's design points that fall in each child, tops every child up to
/// `min_per_cell` with MIPT and refits. Children that already hold more
/// points keep them all.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    model: MultielementPck,
    designs: Vec<ExperimentalDesign>,
    forward: &dyn ForwardModel,
    ranking: &[usize],
    validation: (&[Vec<f64>], &[f64]),
    rc: &RefineConfig,
    cfg: &BuildConfig,
) -> Result<RefineOutcome> {
    let m = model.dim();
    if ranking.is_empty() || ranking.iter().any(|&a| a >= m) {
        return Err(Error::InvalidArgument(format!("ranking {ranking:?} is not a list of axes below {m}")));
    }
    if designs.len() != model.partition.len() {
        return Err(Error::DimensionMismatch { expected: model.partition.len(), got: designs.len() });
    }
    let (vx, vy) = validation;
    let score = |mdl: &MultielementPck| -> Result<f64> { nrmse(vy, &mdl.predict_many(vx)?) };

    let first = score(&model)?;
    let mut trace = vec![first];
    let mut axes = Vec::new();
    let mut best = (first, model.clone(), designs.clone());
    let (mut current, mut current_designs) = (model, designs);
    let mut converged = first <= rc.goal;
    for round in 0..rc.max_rounds {
        if converged {
            break;
        }
        let axis = ranking[round % ranking.len()];
        let partition = current.partition.bisect(axis)?;
        let pool = ExperimentalDesign {
            inputs: current_designs.iter().flat_map(|d| d.inputs.iter().cloned()).collect(),
            outputs: current_designs.iter().flat_map(|d| d.outputs.iter().copied()).collect(),
            cell_tag: None,
        };
        let seeds: Vec<ExperimentalDesign> = (0..partition.len())
            .map(|j| {
                let cell = partition.cell(j);
                let mut ed = ExperimentalDesign::default();
                for (x, y) in pool.inputs.iter().zip(&pool.outputs) {
                    if cell.contains(x) {
                        ed.push(x.clone(), *y);
                    }
                }
                ed
            })
            .collect();
        let job = CellJob { forward: Some(forward), target: rc.min_per_cell, cfg, stream: round as u64 + 1 };
        let (next, next_designs) = MultielementPck::assemble(partition, seeds, &job)?;
        let e = score(&next)?;
        trace.push(e);
        axes.push(axis);
        if e < best.0 {
            best = (e, next.clone(), next_designs.clone());
        }
        current = next;
        current_designs = next_designs;
        converged = e <= rc.goal;
    }
    Ok(RefineOutcome { model: best.1, designs: best.2, trace, axes, converged })
}
