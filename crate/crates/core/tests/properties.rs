mod common;

use mepck::design::Partition;
use mepck::dram::{dram_sample, DramConfig, FnTarget, LogTarget};
use mepck::kriging::{blue, corr_matrix, ml_objective, Hyperparams, PckData, PckModel};
use mepck::models::{dropwave, FnModel};
use mepck::pce::{basis_matrix, generate_hyperbolic, lar_path, legendre_eval, SparsePce};
use mepck::rng::{derive_seed, seeded};
use mepck::sampling::{mipt_fill, select_farthest, uniform_design, ExperimentalDesign};
use mepck::{Bounds, BuildConfig, KrigingConfig, MultielementPck};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use common::{gauss_legendre, rel_err, DenseKriging};

#[test]
fn legendre_orthonormal_under_quadrature() {
    let (x, w) = gauss_legendre(64);
    for i in 0..=10 {
        for j in 0..=10 {
            let q: f64 = x
                .iter()
                .zip(&w)
                .map(|(u, wt)| 0.5 * wt * legendre_eval(i, *u).unwrap() * legendre_eval(j, *u).unwrap())
                .sum();
            let delta = if i == j { 1.0 } else { 0.0 };
            assert!((q - delta).abs() <= 1e-10, "<psi_{i}, psi_{j}> = {q}");
        }
    }
}

fn brute_farthest(existing: &[Vec<f64>], cands: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in cands.iter().enumerate() {
        let d = existing
            .iter()
            .map(|p| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bucketed_search_matches_brute_force(m in 1usize..5, n in 1usize..300, k in 1usize..400, seed in any::<u64>()) {
        let b = Bounds::cube(m, -1.0, 1.0).unwrap();
        let mut rng = seeded(seed);
        let existing = uniform_design(&b, n, &mut rng);
        let cands = uniform_design(&b, k, &mut rng);
        prop_assert_eq!(select_farthest(&existing, &cands), brute_farthest(&existing, &cands));
    }

    #[test]
    fn mipt_points_stay_inside_their_box(
        lo in prop::collection::vec(-50.0..50.0f64, 1..4),
        w in 1e-3..20.0f64,
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let hi: Vec<f64> = lo.iter().map(|l| l + w).collect();
        let b = Bounds::new(lo.clone(), hi.clone()).unwrap();
        let f = FnModel::new(lo.len(), |x: &[f64]| Ok(x.iter().sum()));
        let ed = mipt_fill(ExperimentalDesign::default(), &b, n, 200, &mut seeded(seed), &f).unwrap();
        prop_assert_eq!(ed.len(), n);
        for x in &ed.inputs {
            for k in 0..x.len() {
                prop_assert!(x[k] > lo[k] && x[k] < hi[k]);
            }
        }
    }

    #[test]
    fn sobol_shares_add_up(m in 1usize..5, p in 1u32..5, seed in any::<u64>()) {
        let set = generate_hyperbolic(m, p, 0.75).unwrap();
        let mut rng = seeded(seed);
        let coeffs: Vec<f64> = (0..set.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pce = SparsePce::new(Bounds::cube(m, 0.0, 1.0).unwrap(), set, coeffs).unwrap();
        let s = pce.sobol_indices().unwrap();
        let first: f64 = s.first.iter().sum();
        prop_assert!((first + s.interaction - 1.0).abs() <= 1e-12);
        for k in 0..m {
            prop_assert!(s.first[k] <= s.total[k] + 1e-15);
        }
    }

    #[test]
    fn lar_path_is_strictly_nested(n in 15usize..60, cols in 2usize..12, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let theta = DMatrix::from_fn(n, cols, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let order = lar_path(&theta, &y).unwrap();
        let mut seen = std::collections::HashSet::new();
        for c in &order {
            prop_assert!(*c < cols);
            prop_assert!(seen.insert(*c), "column {} entered twice", c);
        }
        prop_assert!(!order.is_empty() && order.len() <= cols.min(n));
    }

    #[test]
    fn dropwave_radial_symmetry(a in -10.0..10.0f64, b in -10.0..10.0f64) {
        prop_assert_eq!(dropwave(a, b), dropwave(b, a));
        prop_assert_eq!(dropwave(a, b), dropwave(-a, -b));
    }
}

/// Random well-conditioned kriging instance on standardized inputs.
struct Instance {
    u: Vec<Vec<f64>>,
    basis: mepck::pce::MultiIndexSet,
    f: DMatrix<f64>,
    y: Vec<f64>,
    theta: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = seeded(seed);
    let m = rng.random_range(1..=3);
    let n = rng.random_range(8..=30);
    let b = Bounds::cube(m, -1.0, 1.0).unwrap();
    let u = uniform_design(&b, n, &mut rng);
    let mut theta: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(0.5..1.5))).collect();
    // Stiffen the correlation until R has condition number below 1e6, so a
    // 1e-10 comparison measures the algebra and not round-off amplification.
    loop {
        let r = DMatrix::from_fn(n, n, |i, j| common::corr(&u[i], &u[j], &theta));
        let sv = r.singular_values();
        if sv.max() / sv.min() < 1e6 {
            break;
        }
        theta.iter_mut().for_each(|t| *t *= 2.0);
    }
    let basis = generate_hyperbolic(m, rng.random_range(1..=2), 1.0).unwrap();
    let f = basis_matrix(&u, &basis).unwrap();
    let y = u.iter().map(|x| x.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + rng.random_range(-0.1..0.1)).collect();
    Instance { u, basis, f, y, theta }
}

fn model_of(inst: &Instance, nugget: f64) -> (PckModel, DenseKriging) {
    let m = inst.u[0].len();
    let bounds = Bounds::cube(m, -1.0, 1.0).unwrap();
    let b = blue(&inst.theta, &inst.u, &inst.f, &inst.y, nugget).unwrap();
    let data = PckData {
        bounds: bounds.clone(),
        trend: SparsePce::new(bounds, inst.basis.clone(), b.coeffs.iter().copied().collect()).unwrap(),
        hyper: Hyperparams { theta: inst.theta.clone(), sigma2: b.sigma2 },
        nugget,
        design: inst.u.clone(),
        outputs: inst.y.clone(),
    };
    (PckModel::from_data(data).unwrap(), DenseKriging::new(&inst.u, &inst.f, &inst.y, &inst.theta, nugget))
}

#[test]
fn blue_and_blup_match_dense_reference() {
    for seed in 0..50 {
        let inst = instance(seed);
        let nugget = corr_matrix(&inst.u, &inst.theta, 0.0).unwrap().nugget;
        let (model, dense) = model_of(&inst, nugget);
        for (a, b) in model.trend().coeffs.iter().zip(dense.beta.iter()) {
            assert!(rel_err(*a, *b) <= 1e-10, "seed {seed}: beta {a} vs {b}");
        }
        assert!(model.hyper().sigma2 >= 0.0);
        assert!(rel_err(model.hyper().sigma2, dense.sigma2) <= 1e-10, "seed {seed}: sigma2");
        let mut rng = seeded(seed + 1000);
        let probes = uniform_design(model.bounds(), 20, &mut rng);
        for x in &probes {
            let mut psi = vec![0.0; model.trend().len()];
            model.trend().basis_row(x, &mut Default::default(), &mut psi);
            let want = dense.predict(x, &psi);
            let got = model.predict(x).unwrap();
            assert!(rel_err(got, want) <= 1e-10, "seed {seed}: {got} vs {want}");
            assert!(rel_err(model.predict_blup_form(x).unwrap(), got) <= 1e-10);
        }
    }
}

#[test]
fn interpolates_design_sites() {
    for seed in 0..20 {
        let inst = instance(seed);
        let nugget = corr_matrix(&inst.u, &inst.theta, KrigingConfig::default().nugget).unwrap().nugget;
        let (model, _) = model_of(&inst, nugget);
        for (x, y) in inst.u.iter().zip(&inst.y) {
            let p = model.predict(x).unwrap();
            assert!((p - y).abs() / (1.0 + y.abs()) <= 1e-6, "seed {seed}: {p} vs {y}");
        }
    }
}

#[test]
fn objective_scales_with_output_squared() {
    for seed in 0..10 {
        let inst = instance(seed);
        let c = 7.5;
        let ys: Vec<f64> = inst.y.iter().map(|v| c * v).collect();
        let m = inst.theta.len();
        let grid: Vec<Vec<f64>> = (0..9usize.pow(m as u32))
            .map(|mut i| {
                (0..m)
                    .map(|_| {
                        let t = 10f64.powf(-1.0 + 0.375 * (i % 9) as f64);
                        i /= 9;
                        t
                    })
                    .collect()
            })
            .collect();
        let mut best = (0, f64::INFINITY, 0, f64::INFINITY);
        for (g, th) in grid.iter().enumerate() {
            let (Ok(a), Ok(b)) = (
                ml_objective(th, &inst.u, &inst.f, &inst.y, 1e-10),
                ml_objective(th, &inst.u, &inst.f, &ys, 1e-10),
            ) else {
                continue;
            };
            assert!(rel_err(b, c * c * a) <= 1e-9 * (1.0 + c * c * a), "seed {seed}: {b} vs {}", c * c * a);
            if a < best.1 {
                best.0 = g;
                best.1 = a;
            }
            if b < best.3 {
                best.2 = g;
                best.3 = b;
            }
        }
        assert_eq!(best.0, best.2);
    }
}

fn small_build(counts: Vec<usize>, n: usize, seed: u64) -> (MultielementPck, Vec<ExperimentalDesign>) {
    let mut cfg = BuildConfig::new(counts, n);
    cfg.seed = seed;
    cfg.n_candidates = 2000;
    cfg.kriging.ga.population = 8;
    cfg.kriging.ga.generations = 4;
    let f = FnModel::new(2, |x: &[f64]| Ok(dropwave(x[0], x[1])));
    MultielementPck::build(&f, &Bounds::cube(2, -10.0, 10.0).unwrap(), &cfg).unwrap()
}

#[test]
fn global_prediction_is_the_owning_cell() {
    let (model, designs) = small_build(vec![3, 2], 25, 4);
    let p = model.partition();
    for (j, ed) in designs.iter().enumerate() {
        let cell = p.cell(j);
        assert!(ed.inputs.iter().all(|x| cell.contains(x)), "cell {j}");
    }
    let probes = uniform_design(p.parent(), 10_000, &mut seeded(9));
    for x in &probes {
        let j = p.locate(x).unwrap();
        assert_eq!(model.predict(x).unwrap().to_bits(), model.locals()[j].predict(x).unwrap().to_bits());
    }
    let corners = [[-10.0, -10.0], [10.0, 10.0], [-10.0, 10.0], [0.0, 0.0], [10.0 / 3.0, 0.0]];
    for x in corners {
        assert!(model.predict(&x).unwrap().is_finite());
    }
}

#[test]
fn single_cell_build_is_plain_pck() {
    let seed = 21;
    let (model, designs) = small_build(vec![1, 1], 30, seed);
    let b = Bounds::cube(2, -10.0, 10.0).unwrap();
    let mut rng = seeded(derive_seed(seed, 0));
    let f = FnModel::new(2, |x: &[f64]| Ok(dropwave(x[0], x[1])));
    let ed = mipt_fill(ExperimentalDesign::default(), &b, 30, 2000, &mut rng, &f).unwrap();
    assert_eq!(ed, designs[0]);
    let mut kc = KrigingConfig::default();
    kc.ga.population = 8;
    kc.ga.generations = 4;
    let (plain, _) = PckModel::fit(&b, &ed.inputs, &ed.outputs, &kc, &mut rng).unwrap();
    for x in uniform_design(&b, 200, &mut seeded(2)) {
        assert_eq!(plain.predict(&x).unwrap(), model.predict(&x).unwrap());
    }
}

#[test]
fn partition_of_all_ones_is_the_parent() {
    let b = Bounds::new(vec![1.0, -40.0, -7.0], vec![6.0, -10.0, -2.0]).unwrap();
    let p = Partition::split_regular(&b, &[1, 1, 1]).unwrap();
    assert_eq!(p.cell(0).bounds, b);
}

/// Mirrored wells on a discretized line: the chain should split its time evenly.
#[test]
fn mirrored_target_occupancy_is_balanced() {
    let support = Bounds::new(vec![-4.0], vec![4.0]).unwrap();
    let target = FnTarget::new(support, |x: &[f64]| {
        let v = (x[0] * 4.0).round() / 4.0;
        -2.0 * (v.abs() - 1.5).powi(2)
    });
    let mut cfg = DramConfig::new(60_000, 5_000, vec![0.3]);
    cfg.seed = 8;
    cfg.sigma0 = Some(vec![vec![1.0]]);
    let chain = dram_sample(&target, &cfg).unwrap();
    let xs = chain.marginal(0);
    assert!(xs.iter().all(|x| target.support().contains(&[*x]).unwrap()));
    // Batch means give a standard error that accounts for autocorrelation.
    let batches = 50;
    let len = xs.len() / batches;
    let shares: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().filter(|x| **x > 0.0).count() as f64 / len as f64)
        .collect();
    let mean = shares.iter().sum::<f64>() / batches as f64;
    let sd = (shares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (batches - 1) as f64).sqrt();
    let se = sd / (batches as f64).sqrt();
    assert!((mean - 0.5).abs() <= 3.0 * se.max(1e-3), "right share {mean} +- {se}");
}
