use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mepck::design::Partition;
use mepck::dram::{chain_diagnostics, dram_sample, hdr, InferenceProblem, Kde, Sweep};
use mepck::io::{self, BuildMeta, ModelFile};
use mepck::metrics::{compute_metrics, ValidationReport, REPORT_HEADER};
use mepck::models::tds::add_noise;
use mepck::models::{tds_solve, DropWave, ForwardModel, TdsPointModel, TrapSet};
use mepck::multielement::{rank_split_directions, refine, MultielementPck};
use mepck::pce::SparsePce;
use mepck::rng::{derive_seed, seeded};
use mepck::sampling::{uniform_design, ExperimentalDesign};
use mepck::Bounds;

use crate::config::{ForwardSpec, RunConfig};
use crate::failure::{CliResult, Failure};
use crate::plots;

/// Seed streams for the auxiliary random draws of each command.
const VALIDATION_STREAM: u64 = 0x5641_4c49_4400;
const PILOT_STREAM: u64 = 0x5049_4c4f_5400;
const NOISE_STREAM: u64 = 0x4e4f_4953_4500;

pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.path("model.json"))
    }

    fn forward(&self) -> CliResult<Option<Box<dyn ForwardModel>>> {
        Ok(match &self.cfg.forward {
            ForwardSpec::Dropwave => Some(Box::new(DropWave)),
            ForwardSpec::Tds { n_traps, config, solver } => {
                config.validate()?;
                Some(Box::new(TdsPointModel::new(config.clone(), *solver, *n_traps)))
            }
            ForwardSpec::ExternalTable { .. } => None,
        })
    }

    fn forward_label(&self) -> &'static str {
        match self.cfg.forward {
            ForwardSpec::Dropwave => "dropwave",
            ForwardSpec::Tds { .. } => "tds",
            ForwardSpec::ExternalTable { .. } => "external-table",
        }
    }

    /// Validation inputs and truth: `--data`, the external validation table,
    /// or fresh uniform draws run through the forward model.
    fn validation_set(&self, domain: &Bounds) -> CliResult<ExperimentalDesign> {
        if let Some(p) = &self.data {
            return Ok(io::read_design(p)?);
        }
        match (&self.cfg.forward, self.forward()?) {
            (_, Some(f)) => {
                let mut rng = seeded(derive_seed(self.seed, VALIDATION_STREAM));
                let xs = uniform_design(domain, self.cfg.validation_size, &mut rng);
                let ys = xs.iter().map(|x| f.evaluate(x)).collect::<mepck::Result<Vec<_>>>()?;
                Ok(ExperimentalDesign::new(xs, ys)?)
            }
            (ForwardSpec::ExternalTable { validation_path: Some(p), .. }, None) => Ok(io::read_design(p)?),
            _ => Err(Failure::cli("no validation data: pass --data or set forward.validation_path")),
        }
    }
}

fn split_table(partition: &Partition, table: &ExperimentalDesign) -> Vec<ExperimentalDesign> {
    let cells = partition.cells();
    cells
        .iter()
        .map(|c| {
            let mut ed = ExperimentalDesign::default();
            for (x, y) in table.inputs.iter().zip(&table.outputs) {
                if c.contains(x) {
                    ed.push(x.clone(), *y);
                }
            }
            ed
        })
        .collect()
}

fn table_designs(ctx: &Ctx, domain: &Bounds) -> CliResult<(Partition, Vec<ExperimentalDesign>)> {
    let ForwardSpec::ExternalTable { path, .. } = &ctx.cfg.forward else {
        unreachable!("caller checked the forward kind")
    };
    let table = io::read_design(path)?;
    if table.dim() != Some(domain.dim()) {
        return Err(Failure::cli(format!("table {} does not have {} input columns", path.display(), domain.dim())));
    }
    let partition = Partition::split_regular(domain, &ctx.cfg.counts()?)?;
    Ok((partition.clone(), split_table(&partition, &table)))
}

fn write_designs(ctx: &Ctx, designs: &[ExperimentalDesign]) -> CliResult<()> {
    for (j, ed) in designs.iter().enumerate() {
        io::write_design(&ctx.path(&format!("ed_cell_{j:03}.csv")), ed)?;
    }
    Ok(())
}

pub fn sample(ctx: &Ctx) -> CliResult<()> {
    let domain = ctx.cfg.domain()?;
    let bc = ctx.cfg.build_config(ctx.seed)?;
    let (partition, designs) = match ctx.forward()? {
        Some(f) => MultielementPck::sample_designs(f.as_ref(), &domain, &bc)?,
        None => table_designs(ctx, &domain)?,
    };
    write_designs(ctx, &designs)?;
    io::write_atomic(&ctx.path("partition.json"), serde_json::to_string_pretty(&partition)?.as_bytes())?;
    println!("wrote {} designs ({} points) to {}", designs.len(), designs.iter().map(|d| d.len()).sum::<usize>(), ctx.out.display());
    Ok(())
}

pub fn build(ctx: &Ctx) -> CliResult<()> {
    let domain = ctx.cfg.domain()?;
    let bc = ctx.cfg.build_config(ctx.seed)?;
    let t0 = Instant::now();
    let forward = ctx.forward()?;
    let (mut model, mut designs) = match &forward {
        Some(f) => MultielementPck::build(f.as_ref(), &domain, &bc)?,
        None => {
            let (partition, eds) = table_designs(ctx, &domain)?;
            MultielementPck::from_designs(partition, eds, &bc)?
        }
    };
    if let Some(rc) = &ctx.cfg.refine {
        let f = forward.as_ref().ok_or_else(|| Failure::cli("refinement needs a forward model"))?;
        let vs = ctx.validation_set(&domain)?;
        let pool: Vec<Vec<f64>> = designs.iter().flat_map(|d| d.inputs.iter().cloned()).collect();
        let ys: Vec<f64> = designs.iter().flat_map(|d| d.outputs.iter().copied()).collect();
        let (pilot, _) = SparsePce::fit(&domain, &pool, &ys, &bc.kriging.pce)?;
        let ranking = rank_split_directions(&pilot)?;
        let outcome = refine(model, designs, f.as_ref(), &ranking, (&vs.inputs, &vs.outputs), rc, &bc)?;
        let header: Vec<String> = ["round", "axis", "cells", "NRMSE"].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        let mut cells = 1usize;
        for (r, e) in outcome.trace.iter().enumerate() {
            let axis = if r == 0 { 0.0 } else { (outcome.axes[r - 1] + 1) as f64 };
            if r > 0 {
                cells *= 2;
            }
            rows.push(vec![r as f64, axis, (cells * bc.counts.iter().product::<usize>()) as f64, *e]);
        }
        io::write_csv(&ctx.path("refine_trace.csv"), &header, rows)?;
        println!("refinement converged: {}  trace: {:?}", outcome.converged, outcome.trace);
        model = outcome.model;
        designs = outcome.designs;
    }
    let seconds = t0.elapsed().as_secs_f64();
    write_designs(ctx, &designs)?;
    let report = model.report().clone();
    io::write_atomic(&ctx.path("build_report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;

    let mut header: Vec<String> =
        ["cell", "n_points", "evaluations", "degree", "n_terms", "bic", "objective", "nugget", "fit_seconds"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend(io::numbered("theta", domain.dim()));
    let rows = report.cells.iter().map(|c| {
        let mut r = vec![
            c.cell as f64,
            c.n_points as f64,
            c.evaluations as f64,
            c.pck.pce.degree as f64,
            c.pck.pce.n_terms as f64,
            c.pck.pce.bic,
            c.pck.objective,
            c.pck.nugget,
            c.pck.fit_seconds,
        ];
        r.extend(&model.locals()[c.cell].hyper().theta);
        r
    });
    io::write_csv(&ctx.path("build_cells.csv"), &header, rows)?;

    let meta = BuildMeta {
        seed: ctx.seed,
        forward: ctx.forward_label().into(),
        construction_seconds: seconds,
        extra: serde_json::json!({ "counts": model.partition().counts(), "per_cell_n": bc.per_cell_n }),
    };
    let path = ctx.model_path();
    io::save_model(&path, &ModelFile::new(model, meta))?;
    println!(
        "built {} cells, {} forward evaluations, {:.2} s -> {}",
        report.cells.len(),
        report.forward_evaluations,
        seconds,
        path.display()
    );
    Ok(())
}

/// Predicts the validation set and times it.
fn validate_model(model: &MultielementPck, vs: &ExperimentalDesign) -> CliResult<(ValidationReport, Vec<f64>)> {
    let t0 = Instant::now();
    let pred = model.predict_many(&vs.inputs)?;
    let total = t0.elapsed().as_secs_f64();
    let mut report = compute_metrics(&vs.outputs, &pred)?;
    report.t_e_vs = Some(total);
    report.t_e = Some(total / vs.len() as f64);
    Ok((report, pred))
}

pub fn validate(ctx: &Ctx) -> CliResult<()> {
    let file = io::load_model(&ctx.model_path())?;
    let vs = ctx.validation_set(&file.domain)?;
    let (mut report, pred) = validate_model(&file.model, &vs)?;
    report.t_c = Some(file.meta.construction_seconds);
    let csv = format!("{REPORT_HEADER}\n{}\n", report.csv_row("model"));
    io::write_atomic(&ctx.path("validation.csv"), csv.as_bytes())?;
    io::write_atomic(&ctx.path("validation_summary.txt"), format!("{}\n", report.summary()).as_bytes())?;
    let header = vec!["truth".to_string(), "prediction".to_string()];
    io::write_csv(&ctx.path("validation_scatter.csv"), &header, vs.outputs.iter().zip(&pred).map(|(a, b)| vec![*a, *b]))?;
    plots::write(&ctx.out, "validation_scatter.gp", &plots::scatter("validation_scatter.csv"))?;
    println!("{}", report.summary());
    Ok(())
}

pub fn sobol(ctx: &Ctx) -> CliResult<()> {
    let header: Vec<String>;
    let mut rows = Vec::new();
    if ctx.model.is_some() {
        let file = io::load_model(&ctx.model_path())?;
        header = ["cell", "axis", "first", "total"].iter().map(|s| s.to_string()).collect();
        for (j, local) in file.model.locals().iter().enumerate() {
            match local.trend().sobol_indices() {
                Ok(s) => {
                    for k in 0..s.first.len() {
                        rows.push(vec![j as f64, (k + 1) as f64, s.first[k], s.total[k]]);
                    }
                }
                Err(mepck::Error::ConstantSurrogate) => log::warn!("cell {j}: constant trend, no Sobol indices"),
                Err(e) => return Err(e.into()),
            }
        }
    } else {
        let domain = ctx.cfg.domain()?;
        let pilot_ed = match ctx.forward()? {
            Some(f) => {
                let mut bc = ctx.cfg.build_config(derive_seed(ctx.seed, PILOT_STREAM))?;
                bc.counts = vec![1; domain.dim()];
                MultielementPck::sample_designs(f.as_ref(), &domain, &bc)?.1.remove(0)
            }
            None => table_designs(ctx, &domain)?.1.into_iter().fold(ExperimentalDesign::default(), |mut acc, d| {
                for (x, y) in d.inputs.into_iter().zip(d.outputs) {
                    acc.push(x, y);
                }
                acc
            }),
        };
        let (pilot, _) = SparsePce::fit(&domain, &pilot_ed.inputs, &pilot_ed.outputs, &ctx.cfg.kriging.pce)?;
        let s = pilot.sobol_indices()?;
        let ranking = rank_split_directions(&pilot)?;
        header = ["axis", "first", "total", "rank"].iter().map(|s| s.to_string()).collect();
        for k in 0..s.first.len() {
            let rank = ranking.iter().position(|&a| a == k).expect("every axis ranked") + 1;
            rows.push(vec![(k + 1) as f64, s.first[k], s.total[k], rank as f64]);
        }
        println!("split priority (1-based axes): {:?}", ranking.iter().map(|a| a + 1).collect::<Vec<_>>());
    }
    io::write_csv(&ctx.path("sobol.csv"), &header, rows)?;
    println!("wrote {}", ctx.path("sobol.csv").display());
    Ok(())
}

pub fn tds(ctx: &Ctx) -> CliResult<()> {
    let ForwardSpec::Tds { n_traps, config, solver } = &ctx.cfg.forward else {
        return Err(Failure::cli("the tds command needs forward.kind = \"tds\""));
    };
    let run = ctx.cfg.tds.as_ref().ok_or_else(|| Failure::cli("the tds command needs a \"tds\" section with trap parameters"))?;
    let point = TdsPointModel::new(config.clone(), *solver, *n_traps);
    let traps: TrapSet = point.traps_from(&run.traps)?;
    let curve = tds_solve(config, &traps, solver)?;
    io::write_flux(&ctx.path("flux.csv"), &curve)?;
    let mut files = vec!["flux.csv"];
    if let Some(level) = run.noise {
        let noisy = add_noise(&curve.j_bar, level, &mut seeded(derive_seed(ctx.seed, NOISE_STREAM)));
        io::write_flux_values(&ctx.path("flux_noisy.csv"), &curve.t_bar, &noisy)?;
        files.push("flux_noisy.csv");
    }
    let (tp, jp) = curve.peak();
    let summary = serde_json::json!({
        "peak_t_bar": tp,
        "peak_j_bar": jp,
        "peaks": curve.count_peaks(1e-3),
        "mass_defect": curve.mass_defect(),
        "initial_inventory": curve.initial_inventory,
        "steps": curve.steps,
    });
    io::write_atomic(&ctx.path("tds_summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    plots::write(&ctx.out, "flux.gp", &plots::flux(&files))?;
    println!("peak J_bar {jp:e} at T_bar {tp:.4}; {} peak(s); mass defect {:.2e}", curve.count_peaks(1e-3), curve.mass_defect());
    Ok(())
}

pub fn infer(ctx: &Ctx) -> CliResult<()> {
    let spec = ctx.cfg.infer.as_ref().ok_or_else(|| Failure::cli("the infer command needs an \"infer\" section"))?;
    let file = io::load_model(&ctx.model_path())?;
    let data = ctx.data.as_ref().ok_or_else(|| Failure::cli("the infer command needs --data <flux csv>"))?;
    let (t_bar, j_bar) = io::read_flux(data)?;
    let domain = &file.domain;
    let prior = match &spec.prior {
        Some(p) => p.clone(),
        None => Bounds::new(domain.lower()[1..].to_vec(), domain.upper()[1..].to_vec())?,
    };
    let sweep = Sweep { model: &file.model, sweep: t_bar };
    let problem = InferenceProblem::new(sweep, j_bar, spec.sigma_eps, prior)?;
    let t0 = Instant::now();
    let chain = dram_sample(&problem, &spec.dram(ctx.seed))?;
    let secs = t0.elapsed().as_secs_f64();
    io::write_chain(&ctx.path("chain.csv"), &chain)?;
    let diag = chain_diagnostics(&chain)?;
    io::write_atomic(&ctx.path("diagnostics.txt"), diag.to_text().as_bytes())?;

    let mut hdr_rows = Vec::new();
    let mut kde_rows = Vec::new();
    for k in 0..chain.dim() {
        let m = chain.marginal(k);
        for &level in &spec.hdr_levels {
            match hdr(&m, level) {
                Ok(h) => {
                    for (i, iv) in h.intervals.iter().enumerate() {
                        hdr_rows.push(vec![level, (k + 1) as f64, (i + 1) as f64, iv.lo, iv.hi, iv.mass]);
                    }
                }
                Err(mepck::Error::Degenerate(msg)) => log::warn!("theta_{}: {msg}", k + 1),
                Err(e) => return Err(e.into()),
            }
        }
        if let Ok(kde) = Kde::new(&m) {
            kde_rows.extend(kde.grid.iter().zip(&kde.density).map(|(x, d)| vec![(k + 1) as f64, *x, *d]));
        }
    }
    let header: Vec<String> = ["level", "axis", "interval", "lo", "hi", "mass"].iter().map(|s| s.to_string()).collect();
    io::write_csv(&ctx.path("hdr.csv"), &header, hdr_rows)?;
    let header: Vec<String> = ["axis", "theta", "density"].iter().map(|s| s.to_string()).collect();
    io::write_csv(&ctx.path("marginals.csv"), &header, kde_rows)?;
    plots::write(&ctx.out, "infer.gp", &plots::marginals(chain.dim()))?;
    print!("{}", diag.to_text());
    println!("chain of {} iterations in {secs:.1} s", chain.len());
    Ok(())
}

pub fn bench_dropwave(ctx: &Ctx) -> CliResult<()> {
    if !matches!(ctx.cfg.forward, ForwardSpec::Dropwave) {
        return Err(Failure::cli("bench-dropwave needs forward.kind = \"dropwave\""));
    }
    let domain = ctx.cfg.domain()?;
    let vs = ctx.validation_set(&domain)?;
    let mut lines = vec![format!("model,cells,ED,{}", &REPORT_HEADER["model,".len()..])];
    for (j, &div) in ctx.cfg.bench.divisions.iter().enumerate() {
        for (i, &ed) in ctx.cfg.bench.ed_sizes.iter().enumerate() {
            let cells = div * div;
            let mut bc = ctx.cfg.build_config(derive_seed(ctx.seed, (j * 64 + i) as u64))?;
            bc.counts = vec![div, div];
            bc.per_cell_n = ed / cells;
            let t0 = Instant::now();
            let (model, _) = MultielementPck::build(&DropWave, &domain, &bc)?;
            let tc = t0.elapsed().as_secs_f64();
            let (mut report, _) = validate_model(&model, &vs)?;
            report.t_c = Some(tc);
            let label = format!("M_{}^{}", i + 1, j + 1);
            println!("{label}: {} cells x {} points  {}", cells, bc.per_cell_n, report.summary());
            lines.push(report.csv_row(&format!("{label},{cells},{}", bc.per_cell_n * cells)));
        }
    }
    io::write_atomic(&ctx.path("bench.csv"), (lines.join("\n") + "\n").as_bytes())?;
    println!("wrote {}", ctx.path("bench.csv").display());
    Ok(())
}

pub fn ensure_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::cli(format!("cannot create {}: {e}", dir.display())))
}
