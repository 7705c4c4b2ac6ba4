//! Thermal desorption of hydrogen from a plate with Oriani-equilibrium traps.
//!
//! The solver integrates the conservative form `dc/dt = D(T) d2(theta)/dx2` where
//! `c(theta, T) = theta + sum_i N_i K_i theta / (1 + K_i theta0 theta)` is the total
//! (lattice plus trapped) hydrogen content scaled by the initial lattice occupancy.
//! Space is discretised by central differences, time by variable-step BDF2 with
//! Newton iterations; the lattice occupancy is recovered from `c` node by node.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ForwardModel;

pub const GAS_CONSTANT: f64 = 8.314;
pub const DH_RANGE: (f64, f64) = (-40.0, -10.0);
pub const LOG_N_RANGE: (f64, f64) = (-7.0, -2.0);
/// Fluxes below this magnitude are reported as zero.
pub const FLUX_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdsConfig {
    /// Lattice activation energy, J/mol.
    pub q: f64,
    /// Pre-exponential diffusivity, m^2/s.
    pub d_o: f64,
    /// Initial temperature, K.
    pub t_o: f64,
    /// Heating rate in K/s. Ignored when `phi_bar` is set.
    #[serde(default)]
    pub phi: Option<f64>,
    /// Nondimensional heating rate.
    #[serde(default)]
    pub phi_bar: Option<f64>,
    /// Specimen thickness, m.
    pub l: f64,
    pub theta_l0: f64,
    /// Lattice site density, 1/m^3.
    pub n_l: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TdsConfig {
    fn default() -> Self {
        Self {
            q: 6700.0,
            d_o: 2e-7,
            t_o: 293.0,
            phi: None,
            phi_bar: Some(0.1),
            l: 5e-3,
            theta_l0: 1e-6,
            n_l: 8.46e28,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl TdsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q", self.q),
            ("d_o", self.d_o),
            ("t_o", self.t_o),
            ("l", self.l),
            ("n_l", self.n_l),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("tds config: {name} must be > 0, got {v}")));
            }
        }
        if !(self.theta_l0 > 0.0 && self.theta_l0 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tds config: theta_l0 must lie in (0,1), got {}",
                self.theta_l0
            )));
        }
        match (self.phi, self.phi_bar) {
            (_, Some(p)) | (Some(p), None) if p.is_finite() && p > 0.0 => Ok(()),
            (None, None) => Err(Error::InvalidArgument("tds config: one of phi, phi_bar is required".into())),
            _ => Err(Error::InvalidArgument("tds config: heating rate must be > 0".into())),
        }
    }
}

/// Nondimensional parameter pack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimParams {
    pub q_bar: f64,
    pub phi_bar: f64,
    pub theta_l0: f64,
    /// Time scale `L^2 / D_o` in seconds.
    pub time_scale: f64,
    pub t_o: f64,
}

impl NondimParams {
    /// Lattice diffusivity `exp(-Q/T)`.
    pub fn d_lattice(&self, t_bar: f64) -> f64 {
        (-self.q_bar / t_bar).exp()
    }

    pub fn temperature(&self, time_bar: f64) -> f64 {
        1.0 + self.phi_bar * time_bar
    }

    pub fn time_at(&self, t_bar: f64) -> f64 {
        (t_bar - 1.0) / self.phi_bar
    }
}

pub fn nondimensionalize(config: &TdsConfig) -> Result<NondimParams> {
    config.validate()?;
    let phi_bar = match config.phi_bar {
        Some(p) => p,
        None => config.phi.unwrap_or_default() * config.l * config.l / (config.t_o * config.d_o),
    };
    Ok(NondimParams {
        q_bar: config.q / (GAS_CONSTANT * config.t_o),
        phi_bar,
        theta_l0: config.theta_l0,
        time_scale: config.l * config.l / config.d_o,
        t_o: config.t_o,
    })
}

/// Oriani equilibrium trap occupancy.
pub fn trap_occupancy(theta_l: f64, k: f64) -> f64 {
    let kt = k * theta_l;
    if kt.is_infinite() {
        return 1.0;
    }
    kt / (1.0 + kt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub dh_bar: f64,
    pub log_n_bar: f64,
}

impl Trap {
    pub fn n_bar(&self) -> f64 {
        10f64.powf(self.log_n_bar)
    }

    pub fn equilibrium_constant(&self, t_bar: f64) -> f64 {
        (-self.dh_bar / t_bar).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Trap>", into = "Vec<Trap>")]
pub struct TrapSet {
    traps: Vec<Trap>,
}

impl TryFrom<Vec<Trap>> for TrapSet {
    type Error = Error;
    fn try_from(traps: Vec<Trap>) -> Result<Self> {
        TrapSet::new(traps)
    }
}

impl From<TrapSet> for Vec<Trap> {
    fn from(t: TrapSet) -> Self {
        t.traps
    }
}

impl TrapSet {
    pub fn new(traps: Vec<Trap>) -> Result<Self> {
        for t in &traps {
            let ok_h = t.dh_bar >= DH_RANGE.0 && t.dh_bar <= DH_RANGE.1;
            let ok_n = t.log_n_bar >= LOG_N_RANGE.0 && t.log_n_bar <= LOG_N_RANGE.1;
            if !(ok_h && ok_n) {
                return Err(Error::InvalidArgument(format!(
                    "trap (dH={}, logN={}) outside [-40,-10] x [-7,-2]",
                    t.dh_bar, t.log_n_bar
                )));
            }
        }
        Ok(Self { traps })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Two traps from `[dH1, dH2, logN1, logN2]`.
    pub fn two(p: [f64; 4]) -> Result<Self> {
        Self::new(vec![
            Trap { dh_bar: p[0], log_n_bar: p[2] },
            Trap { dh_bar: p[1], log_n_bar: p[3] },
        ])
    }

    pub fn traps(&self) -> &[Trap] {
        &self.traps
    }

    pub fn len(&self) -> usize {
        self.traps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub nodes: usize,
    pub t_bar_max: f64,
    pub output_points: usize,
    /// Relative tolerance of the local error estimate.
    pub rtol: f64,
    /// Absolute tolerance on the content `c`, relative to the initial maximum.
    pub atol: f64,
    /// Cap on the time step, as a fraction of the full heating span. Kept
    /// independent of `output_points` so pointwise solves match full curves.
    pub max_step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nodes: 201,
            t_bar_max: 6.0,
            output_points: 200,
            rtol: 1e-4,
            atol: 1e-7,
            max_step_fraction: 1.0 / 400.0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.nodes < 51 || self.nodes % 2 == 0 {
            return Err(Error::InvalidArgument(format!("grid nodes must be odd and >= 51, got {}", self.nodes)));
        }
        if !(self.t_bar_max > 1.0) {
            return Err(Error::InvalidArgument(format!("T_bar_max must exceed 1, got {}", self.t_bar_max)));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_step_fraction > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Desorption spectrum with mass bookkeeping, all in units of the initial
/// lattice occupancy times specimen thickness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxCurve {
    pub t_bar: Vec<f64>,
    /// Flux through the right face.
    pub j_bar: Vec<f64>,
    pub j_left: Vec<f64>,
    /// Hydrogen remaining in the specimen (lattice plus traps).
    pub inventory: Vec<f64>,
    /// Cumulative hydrogen released through both faces.
    pub desorbed: Vec<f64>,
    pub initial_inventory: f64,
    /// Lattice occupancy profile at the final output time, boundary nodes included.
    pub final_profile: Vec<f64>,
    pub steps: usize,
}

impl FluxCurve {
    /// Worst relative mass-balance defect over all output times.
    pub fn mass_defect(&self) -> f64 {
        self.inventory
            .iter()
            .zip(&self.desorbed)
            .map(|(r, d)| ((r + d) - self.initial_inventory).abs() / self.initial_inventory)
            .fold(0.0, f64::max)
    }

    pub fn peak(&self) -> (f64, f64) {
        let mut best = (self.t_bar[0], self.j_bar[0]);
        for (&t, &j) in self.t_bar.iter().zip(&self.j_bar) {
            if j > best.1 {
                best = (t, j);
            }
        }
        best
    }

    /// Number of interior local maxima after values below `rel * max` are set
    /// to zero. The initial instant is skipped, so the decaying start-up
    /// transient of lattice hydrogen does not count as a peak.
    pub fn count_peaks(&self, rel: f64) -> usize {
        let start = self.t_bar.iter().position(|&t| t > 1.0).unwrap_or(self.t_bar.len());
        count_peaks(&self.j_bar[start..], rel)
    }
}

pub fn count_peaks(values: &[f64], rel: f64) -> usize {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let v: Vec<f64> = values.iter().map(|&j| if j < rel * max { 0.0 } else { j }).collect();
    let mut peaks = 0;
    let mut i = 0;
    while i < v.len() {
        // Treat plateaus of equal values as a single candidate.
        let mut k = i;
        while k + 1 < v.len() && v[k + 1] == v[i] {
            k += 1;
        }
        let left_lower = i == 0 || v[i - 1] < v[i];
        let right_lower = k + 1 == v.len() || v[k + 1] < v[i];
        if v[i] > 0.0 && left_lower && right_lower && i > 0 && k + 1 < v.len() {
            peaks += 1;
        }
        i = k + 1;
    }
    peaks
}

/// Solve over `[1, t_bar_max]` and report on a uniform grid of `output_points`.
pub fn tds_solve(config: &TdsConfig, traps: &TrapSet, options: &SolverOptions) -> Result<FluxCurve> {
    options.validate()?;
    if options.output_points < 2 {
        return Err(Error::InvalidArgument("need at least two output points".into()));
    }
    let n = options.output_points;
    let span = options.t_bar_max - 1.0;
    let grid: Vec<f64> = (0..n).map(|i| 1.0 + span * i as f64 / (n - 1) as f64).collect();
    solve_at(config, traps, options, &grid)
}

/// Solve and report at the given increasing temperatures, each within `[1, t_bar_max]`.
pub fn solve_at(config: &TdsConfig, traps: &TrapSet, options: &SolverOptions, t_out: &[f64]) -> Result<FluxCurve> {
    options.validate()?;
    let p = nondimensionalize(config)?;
    if t_out.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("output temperatures must be non-decreasing".into()));
    }
    if let Some(&t) = t_out.iter().find(|&&t| !(1.0..=options.t_bar_max + 1e-12).contains(&t)) {
        return Err(Error::InvalidArgument(format!("output temperature {t} outside [1, {}]", options.t_bar_max)));
    }
    Solver::new(p, traps, options).run(t_out)
}

struct Solver<'a> {
    p: NondimParams,
    traps: &'a [Trap],
    opts: SolverOptions,
    m: usize,
    h: f64,
    /// Per-trap `N_i K_i` and `K_i theta0` at the current stage temperature.
    a: Vec<f64>,
    b: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(p: NondimParams, traps: &'a TrapSet, opts: &SolverOptions) -> Self {
        let m = opts.nodes - 2;
        Self {
            p,
            traps: traps.traps(),
            opts: *opts,
            m,
            h: 1.0 / (opts.nodes - 1) as f64,
            a: vec![0.0; traps.len()],
            b: vec![0.0; traps.len()],
        }
    }

    fn set_temperature(&mut self, t_bar: f64) {
        for (i, t) in self.traps.iter().enumerate() {
            let k = t.equilibrium_constant(t_bar);
            self.a[i] = t.n_bar() * k;
            self.b[i] = k * self.p.theta_l0;
        }
    }

    fn content(&self, theta: f64) -> f64 {
        let mut c = theta;
        for (a, b) in self.a.iter().zip(&self.b) {
            c += a * theta / (1.0 + b * theta);
        }
        c
    }

    /// Returns `(theta, dc/dtheta)` with `c(theta) = c`.
    fn invert(&self, c: f64, guess: f64) -> (f64, f64) {
        if c <= 0.0 {
            return (0.0, self.capacity(0.0));
        }
        if self.a.is_empty() {
            return (c, 1.0);
        }
        let g = |th: f64| -> (f64, f64) {
            let mut v = th - c;
            let mut d = 1.0;
            for (a, b) in self.a.iter().zip(&self.b) {
                let den = 1.0 + b * th;
                v += a * th / den;
                d += a / (den * den);
            }
            (v, d)
        };
        // c(theta) is increasing and concave, so Newton from the left of the
        // root converges monotonically.
        let mut th = guess.clamp(0.0, c);
        let (mut v, mut d) = g(th);
        if v > 0.0 {
            th = (th - v / d).max(0.0);
            (v, d) = g(th);
        }
        let tol = 4.0 * f64::EPSILON * c;
        for _ in 0..200 {
            if v.abs() <= tol {
                break;
            }
            let next = (th - v / d).min(c);
            if next == th {
                break;
            }
            th = next;
            (v, d) = g(th);
        }
        (th, d)
    }

    fn capacity(&self, theta: f64) -> f64 {
        let mut d = 1.0;
        for (a, b) in self.a.iter().zip(&self.b) {
            let den = 1.0 + b * theta;
            d += a / (den * den);
        }
        d
    }

    fn fluxes(&self, theta: &[f64], d: f64) -> (f64, f64) {
        let m = self.m;
        let s = d * self.p.theta_l0 / (2.0 * self.h);
        let left = s * (4.0 * theta[0] - theta[1]);
        let right = s * (4.0 * theta[m - 1] - theta[m - 2]);
        (floor(left), floor(right))
    }

    fn inventory(&self, c: &[f64]) -> f64 {
        self.p.theta_l0 * self.h * c.iter().sum::<f64>()
    }

    fn run(mut self, t_out: &[f64]) -> Result<FluxCurve> {
        let m = self.m;
        let h2 = self.h * self.h;
        let dt_max = self.p.time_at(self.opts.t_bar_max) * self.opts.max_step_fraction;

        self.set_temperature(1.0);
        let mut theta = vec![1.0; m];
        let c0 = self.content(1.0);
        let mut c = vec![c0; m];
        let initial_inventory = self.inventory(&c);
        let c_scale = c0;

        let mut out = FluxCurve {
            t_bar: Vec::with_capacity(t_out.len()),
            j_bar: Vec::with_capacity(t_out.len()),
            j_left: Vec::with_capacity(t_out.len()),
            inventory: Vec::with_capacity(t_out.len()),
            desorbed: Vec::with_capacity(t_out.len()),
            initial_inventory,
            final_profile: Vec::new(),
            steps: 0,
        };
        let mut out_idx = 0;
        while out_idx < t_out.len() && t_out[out_idx] <= 1.0 {
            // Flux at the initial instant is the excluded boundary-layer limit.
            out.t_bar.push(t_out[out_idx]);
            out.j_bar.push(0.0);
            out.j_left.push(0.0);
            out.inventory.push(initial_inventory);
            out.desorbed.push(0.0);
            out_idx += 1;
        }

        let mut t = 0.0;
        let mut dt = 1e-9_f64.min(dt_max);
        let mut c_prev: Vec<f64> = Vec::new();
        let mut c_prev2: Vec<f64> = Vec::new();
        let mut dt_prev = 0.0;
        let mut dt_prev2 = 0.0;
        let mut desorbed = 0.0;
        let mut j_last = (0.0, 0.0);
        let mut first = true;
        let mut trace: Vec<(f64, f64)> = Vec::new();

        let mut rhs = vec![0.0; m];
        let mut c_new = vec![0.0; m];
        let mut th_new = vec![0.0; m];
        let mut cap = vec![0.0; m];
        let mut res = vec![0.0; m];
        let mut lo = vec![0.0; m];
        let mut di = vec![0.0; m];
        let mut up = vec![0.0; m];
        let mut work = vec![0.0; m];

        while out_idx < t_out.len() {
            let target = self.p.time_at(t_out[out_idx]);
            let mut hit = false;
            if t + dt >= target - 1e-12 * target.max(1.0) {
                dt = target - t;
                hit = true;
            }
            if dt <= 0.0 {
                // Duplicate output temperature.
                self.record(&mut out, t_out[out_idx], &theta, &c, desorbed, j_last);
                out_idx += 1;
                continue;
            }
            let t_new = t + dt;
            let temp_new = self.p.temperature(t_new);
            self.set_temperature(temp_new);
            let dl = self.p.d_lattice(temp_new);

            // BDF coefficients: a0 c_{n+1} - hist = dt * f(c_{n+1}).
            let bdf2 = !first && !c_prev.is_empty();
            let (a0, a1, a2) = if bdf2 {
                let w = dt / dt_prev;
                ((1.0 + 2.0 * w) / (1.0 + w), -(1.0 + w), w * w / (1.0 + w))
            } else {
                (1.0, -1.0, 0.0)
            };
            for i in 0..m {
                rhs[i] = -a1 * c[i] - if bdf2 { a2 * c_prev[i] } else { 0.0 };
            }

            // Predictor: polynomial extrapolation through available history.
            predict(&c, &c_prev, &c_prev2, dt, dt_prev, dt_prev2, &mut c_new);
            for v in c_new.iter_mut() {
                *v = v.max(0.0);
            }
            let pred = c_new.clone();

            let k = dt * dl / h2;
            let mut converged = false;
            for _ in 0..25 {
                for i in 0..m {
                    let (th, cp) = self.invert(c_new[i], th_new_or(&th_new, &theta, i, first));
                    th_new[i] = th;
                    cap[i] = cp;
                }
                for i in 0..m {
                    let l = if i > 0 { th_new[i - 1] } else { 0.0 };
                    let r = if i + 1 < m { th_new[i + 1] } else { 0.0 };
                    res[i] = -(a0 * c_new[i] - rhs[i] - k * (l - 2.0 * th_new[i] + r));
                    di[i] = a0 + 2.0 * k / cap[i];
                    lo[i] = if i > 0 { -k / cap[i - 1] } else { 0.0 };
                    up[i] = if i + 1 < m { -k / cap[i + 1] } else { 0.0 };
                }
                thomas(&lo, &di, &up, &mut res, &mut work);
                let mut worst: f64 = 0.0;
                for i in 0..m {
                    c_new[i] += res[i];
                    worst = worst.max(res[i].abs() / (1e-10 * c_scale * 1e-3 + 1e-10 * c_new[i].abs()));
                }
                if !worst.is_finite() {
                    break;
                }
                if worst <= 1.0 {
                    converged = true;
                    break;
                }
            }
            if converged {
                for i in 0..m {
                    let (th, cp) = self.invert(c_new[i], th_new[i]);
                    th_new[i] = th;
                    cap[i] = cp;
                }
            }

            let err = if converged && !first {
                let kappa = if bdf2 && !c_prev2.is_empty() { 2.0 / 11.0 } else { 0.5 };
                let mut e: f64 = 0.0;
                for i in 0..m {
                    let w = self.opts.atol * c_scale + self.opts.rtol * c_new[i].abs();
                    e = e.max(kappa * (c_new[i] - pred[i]).abs() / w);
                }
                e
            } else {
                0.0
            };

            if !converged || err > 1.0 {
                trace.push((t, dt));
                let factor = if converged { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 0.9) } else { 0.25 };
                dt *= factor;
                if dt < 1e-16 * t.max(1e-3) || trace.len() > 5000 {
                    return Err(Error::Solver(format!(
                        "Newton/step-size failure at T_bar={:.6}; last steps (t, dt): {:?}",
                        self.p.temperature(t),
                        &trace[trace.len().saturating_sub(8)..]
                    )));
                }
                continue;
            }

            // Accept.
            let (jl, jr) = self.fluxes(&th_new, dl);
            desorbed += 0.5 * dt * (j_last.0 + j_last.1 + jl + jr);
            j_last = (jl, jr);
            c_prev2 = std::mem::take(&mut c_prev);
            c_prev = std::mem::replace(&mut c, c_new.clone());
            theta.copy_from_slice(&th_new);
            dt_prev2 = dt_prev;
            dt_prev = dt;
            t = t_new;
            out.steps += 1;
            first = false;

            if hit {
                t = target;
                while out_idx < t_out.len() && self.p.time_at(t_out[out_idx]) <= t + 1e-12 * t.max(1.0) {
                    self.record(&mut out, t_out[out_idx], &theta, &c, desorbed, j_last);
                    out_idx += 1;
                }
            }
            let growth = if err > 0.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 2.0) } else { 2.0 };
            dt = (dt * growth).min(dt_max);
            if hit && out_idx < t_out.len() {
                dt = dt.min(self.p.time_at(t_out[out_idx]) - t).max(dt_prev * 0.2);
            }
        }

        let mut profile = Vec::with_capacity(m + 2);
        profile.push(0.0);
        profile.extend_from_slice(&theta);
        profile.push(0.0);
        out.final_profile = profile;
        Ok(out)
    }

    fn record(&self, out: &mut FluxCurve, t_bar: f64, _theta: &[f64], c: &[f64], desorbed: f64, j: (f64, f64)) {
        out.t_bar.push(t_bar);
        out.j_bar.push(j.1);
        out.j_left.push(j.0);
        out.inventory.push(self.inventory(c));
        out.desorbed.push(desorbed);
    }
}

fn th_new_or(th_new: &[f64], theta: &[f64], i: usize, first: bool) -> f64 {
    if first {
        theta[i]
    } else {
        th_new[i].max(0.0).min(theta[i].max(th_new[i]))
    }
}

fn floor(j: f64) -> f64 {
    if j.abs() < FLUX_FLOOR {
        0.0
    } else {
        j
    }
}

fn predict(c: &[f64], c1: &[f64], c2: &[f64], dt: f64, dt1: f64, dt2: f64, out: &mut [f64]) {
    if c1.is_empty() {
        out.copy_from_slice(c);
    } else if c2.is_empty() {
        let w = dt / dt1;
        for i in 0..c.len() {
            out[i] = c[i] + w * (c[i] - c1[i]);
        }
    } else {
        // Lagrange through (0, c), (-dt1, c1), (-dt1-dt2, c2) evaluated at dt.
        let (x0, x1, x2) = (0.0, -dt1, -dt1 - dt2);
        let l0 = (dt - x1) * (dt - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (dt - x0) * (dt - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (dt - x0) * (dt - x1) / ((x2 - x0) * (x2 - x1));
        for i in 0..c.len() {
            out[i] = l0 * c[i] + l1 * c1[i] + l2 * c2[i];
        }
    }
}

/// Tridiagonal solve in place on `d`; `lo[0]` and `up[n-1]` are ignored.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], d: &mut [f64], work: &mut [f64]) {
    let n = d.len();
    work[0] = up[0] / di[0];
    d[0] /= di[0];
    for i in 1..n {
        let den = di[i] - lo[i] * work[i - 1];
        work[i] = if i + 1 < n { up[i] / den } else { 0.0 };
        d[i] = (d[i] - lo[i] * d[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        d[i] -= work[i] * d[i + 1];
    }
}

/// Pointwise flux model over `[T_bar, dH_1.., logN_1..]` with a fixed number of traps.
#[derive(Debug, Clone)]
pub struct TdsPointModel {
    pub config: TdsConfig,
    pub options: SolverOptions,
    pub n_traps: usize,
}

impl TdsPointModel {
    pub fn new(config: TdsConfig, options: SolverOptions, n_traps: usize) -> Self {
        Self { config, options, n_traps }
    }

    pub fn traps_from(&self, params: &[f64]) -> Result<TrapSet> {
        let n = self.n_traps;
        if params.len() != 2 * n {
            return Err(Error::DimensionMismatch { expected: 2 * n, got: params.len() });
        }
        TrapSet::new((0..n).map(|i| Trap { dh_bar: params[i], log_n_bar: params[n + i] }).collect())
    }

    /// Right-face flux at each temperature for the given trap parameters.
    pub fn curve(&self, params: &[f64], t_bar: &[f64]) -> Result<Vec<f64>> {
        let traps = self.traps_from(params)?;
        Ok(solve_at(&self.config, &traps, &self.options, t_bar)?.j_bar)
    }
}

impl ForwardModel for TdsPointModel {
    fn dim(&self) -> usize {
        1 + 2 * self.n_traps
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let flux = self.curve(&x[1..], &[x[0]])?;
        Ok(flux[0])
    }
}

/// Synthetic measurement: flux plus zero-mean Gaussian noise of sd `rel * mean(flux)`.
pub fn add_noise<R: Rng + ?Sized>(flux: &[f64], rel: f64, rng: &mut R) -> Vec<f64> {
    let mean = flux.iter().sum::<f64>() / flux.len().max(1) as f64;
    let sd = rel * mean.abs();
    if sd <= 0.0 {
        return flux.to_vec();
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    flux.iter().map(|&j| j + normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn nondim_reference() {
        let p = nondimensionalize(&TdsConfig::default()).unwrap();
        assert!((p.q_bar - 6700.0 / (8.314 * 293.0)).abs() < 1e-12);
        assert!((p.q_bar - 2.7504).abs() < 1e-4);
        assert!((p.d_lattice(1.0) - 0.0639).abs() < 1e-4);
        assert_eq!(p.phi_bar, 0.1);
    }

    #[test]
    fn phi_converted_when_bar_absent() {
        let cfg = TdsConfig { phi: Some(0.05), phi_bar: None, ..TdsConfig::default() };
        let p = nondimensionalize(&cfg).unwrap();
        assert!((p.phi_bar - 0.05 * 25e-6 / (293.0 * 2e-7)).abs() < 1e-12);
    }

    #[test]
    fn occupancy_values() {
        assert_eq!(trap_occupancy(0.0, 5.0), 0.0);
        assert_eq!(trap_occupancy(1.0, 1.0), 0.5);
        assert!((trap_occupancy(1e3, 1.0) - 0.999001).abs() < 1e-6);
    }

    #[test]
    fn trap_ranges_enforced() {
        assert!(TrapSet::two([-25.0, -35.0, -3.0, -2.5]).is_ok());
        assert!(TrapSet::two([-5.0, -35.0, -3.0, -2.5]).is_err());
        assert!(TrapSet::two([-25.0, -35.0, -1.0, -2.5]).is_err());
    }

    #[test]
    fn inversion_round_trip() {
        let traps = TrapSet::two([-25.0, -35.0, -3.0, -2.5]).unwrap();
        let p = nondimensionalize(&TdsConfig::default()).unwrap();
        let o = opts();
        let mut s = Solver::new(p, &traps, &o);
        for &tb in &[1.0, 1.7, 2.9] {
            s.set_temperature(tb);
            for &th in &[0.0, 1e-12, 1e-6, 0.3, 1.0] {
                let c = s.content(th);
                for &g in &[0.0, 0.5, 1.0] {
                    let (back, _) = s.invert(c, g);
                    assert!((back - th).abs() <= 1e-14 * c.max(1.0), "{tb} {th} {g} {back}");
                }
            }
        }
    }

    #[test]
    fn thomas_matches_dense() {
        let lo = [0.0, -1.0, -0.5, -0.2];
        let di = [4.0, 3.0, 5.0, 2.0];
        let up = [-1.0, -0.3, -0.7, 0.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = di[i] * x[i] + if i > 0 { lo[i] * x[i - 1] } else { 0.0 } + if i < 3 { up[i] * x[i + 1] } else { 0.0 };
        }
        let mut w = [0.0; 4];
        thomas(&lo, &di, &up, &mut b, &mut w);
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fickian_release_conserves_mass() {
        let cfg = TdsConfig::default();
        let o = SolverOptions { t_bar_max: 3.0, ..opts() };
        let curve = tds_solve(&cfg, &TrapSet::empty(), &o).unwrap();
        assert!(curve.mass_defect() < 0.01, "defect {}", curve.mass_defect());
        let total = curve.desorbed.last().unwrap() + curve.inventory.last().unwrap();
        assert!((total - cfg.theta_l0).abs() / cfg.theta_l0 < 0.01);
    }

    #[test]
    fn peak_counting() {
        assert_eq!(count_peaks(&[0.0, 1.0, 0.0, 2.0, 0.0], 1e-3), 2);
        assert_eq!(count_peaks(&[0.0, 1.0, 1.0, 0.5], 1e-3), 1);
        assert_eq!(count_peaks(&[0.0, 1e-9, 0.0, 1.0, 0.0], 1e-3), 1);
        assert_eq!(count_peaks(&[0.0; 5], 1e-3), 0);
    }
}

