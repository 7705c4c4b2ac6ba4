use std::path::{Path, PathBuf};

use serde::Deserialize;

use mepck::dram::DramConfig;
use mepck::kriging::KrigingConfig;
use mepck::models::tds::{DH_RANGE, LOG_N_RANGE};
use mepck::models::{SolverOptions, TdsConfig};
use mepck::multielement::{BuildConfig, RefineConfig};
use mepck::sampling::DEFAULT_CANDIDATES;
use mepck::Bounds;

use crate::failure::{CliResult, Failure};

pub const CONFIG_VERSION: u32 = 1;

/// Forward model selector.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForwardSpec {
    Dropwave,
    /// Pointwise TDS flux over `[T_bar, dH_1.., logN_1..]`.
    Tds {
        #[serde(default = "two")]
        n_traps: usize,
        #[serde(default)]
        config: TdsConfig,
        #[serde(default)]
        solver: SolverOptions,
    },
    /// Precomputed design table `x_1..x_M,y`; no new forward runs are possible.
    ExternalTable {
        path: PathBuf,
        #[serde(default)]
        validation_path: Option<PathBuf>,
    },
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdsRun {
    /// `[dH_1.., logN_1..]`.
    pub traps: Vec<f64>,
    /// Relative noise level for a synthetic experiment (sd = level * mean flux).
    #[serde(default)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSpec {
    pub t: usize,
    pub burn_in: usize,
    pub theta0: Vec<f64>,
    pub sigma_eps: f64,
    #[serde(default)]
    pub sigma0: Option<Vec<Vec<f64>>>,
    #[serde(default = "n0")]
    pub n0: usize,
    #[serde(default)]
    pub s_d: Option<f64>,
    #[serde(default = "gamma")]
    pub dr_gamma: f64,
    #[serde(default = "eps")]
    pub adapt_epsilon: f64,
    /// Prior box; defaults to the model domain without the sweep axis.
    #[serde(default)]
    pub prior: Option<Bounds>,
    #[serde(default = "levels")]
    pub hdr_levels: Vec<f64>,
}

fn n0() -> usize {
    500
}
fn gamma() -> f64 {
    0.2
}
fn eps() -> f64 {
    1e-10
}
fn levels() -> Vec<f64> {
    vec![0.8, 0.5]
}

impl InferSpec {
    pub fn dram(&self, seed: u64) -> DramConfig {
        DramConfig {
            t: self.t,
            burn_in: self.burn_in,
            theta0: self.theta0.clone(),
            sigma0: self.sigma0.clone(),
            n0: self.n0,
            s_d: self.s_d,
            dr_gamma: self.dr_gamma,
            adapt_epsilon: self.adapt_epsilon,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    #[serde(default = "ed_sizes")]
    pub ed_sizes: Vec<usize>,
    /// Divisions per axis for each partition level.
    #[serde(default = "divisions")]
    pub divisions: Vec<usize>,
}

fn ed_sizes() -> Vec<usize> {
    vec![360, 720, 1440, 2880]
}
fn divisions() -> Vec<usize> {
    vec![1, 2, 3]
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { ed_sizes: ed_sizes(), divisions: divisions() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub forward: ForwardSpec,
    #[serde(default)]
    pub domain: Option<Bounds>,
    /// Divisions per axis; one cell when absent.
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    #[serde(default)]
    pub refine: Option<RefineConfig>,
    #[serde(default = "per_cell_n")]
    pub per_cell_n: usize,
    #[serde(default = "candidates")]
    pub n_candidates: usize,
    #[serde(default)]
    pub kriging: KrigingConfig,
    #[serde(default = "validation_size")]
    pub validation_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tds: Option<TdsRun>,
    #[serde(default)]
    pub infer: Option<InferSpec>,
    #[serde(default)]
    pub bench: BenchSpec,
}

fn per_cell_n() -> usize {
    320
}
fn candidates() -> usize {
    DEFAULT_CANDIDATES
}
fn validation_size() -> usize {
    1000
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::cli(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::cli(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(Failure::cli(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let dim = self.domain()?.dim();
        if let Some(c) = &self.counts {
            if c.len() != dim || c.contains(&0) {
                return Err(Failure::cli(format!("counts {c:?} must hold {dim} positive entries")));
            }
        }
        if self.per_cell_n < 2 || self.n_candidates == 0 {
            return Err(Failure::cli("per_cell_n must be >= 2 and n_candidates >= 1"));
        }
        if self.validation_size < 2 {
            return Err(Failure::cli("validation_size must be >= 2"));
        }
        Ok(())
    }

    /// Input dimension implied by the forward model.
    pub fn forward_dim(&self) -> Option<usize> {
        match &self.forward {
            ForwardSpec::Dropwave => Some(2),
            ForwardSpec::Tds { n_traps, .. } => Some(1 + 2 * n_traps),
            ForwardSpec::ExternalTable { .. } => None,
        }
    }

    pub fn domain(&self) -> CliResult<Bounds> {
        if let Some(d) = &self.domain {
            if let Some(m) = self.forward_dim() {
                if d.dim() != m {
                    return Err(Failure::cli(format!("domain has {} axes, the forward model needs {m}", d.dim())));
                }
            }
            return Ok(d.clone());
        }
        let b = match &self.forward {
            ForwardSpec::Dropwave => Bounds::cube(2, -10.0, 10.0),
            ForwardSpec::Tds { n_traps, solver, .. } => {
                let n = *n_traps;
                let mut lo = vec![1.0];
                let mut hi = vec![solver.t_bar_max];
                lo.extend(std::iter::repeat_n(DH_RANGE.0, n).chain(std::iter::repeat_n(LOG_N_RANGE.0, n)));
                hi.extend(std::iter::repeat_n(DH_RANGE.1, n).chain(std::iter::repeat_n(LOG_N_RANGE.1, n)));
                Bounds::new(lo, hi)
            }
            ForwardSpec::ExternalTable { .. } => {
                return Err(Failure::cli("an external-table forward model needs an explicit domain"))
            }
        };
        Ok(b?)
    }

    pub fn counts(&self) -> CliResult<Vec<usize>> {
        Ok(self.counts.clone().unwrap_or_else(|| vec![1; self.domain().map(|d| d.dim()).unwrap_or(1)]))
    }

    pub fn build_config(&self, seed: u64) -> CliResult<BuildConfig> {
        Ok(BuildConfig {
            counts: self.counts()?,
            per_cell_n: self.per_cell_n,
            n_candidates: self.n_candidates,
            kriging: self.kriging,
            seed,
            parallel: true,
        })
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> CliResult<RunConfig> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Failure::cli(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_configs() {
        let c = parse(r#"{"version":1,"forward":{"kind":"dropwave"}}"#).unwrap();
        assert_eq!(c.domain().unwrap(), Bounds::cube(2, -10.0, 10.0).unwrap());
        assert_eq!(c.counts().unwrap(), vec![1, 1]);
        let t = parse(r#"{"version":1,"forward":{"kind":"tds","n_traps":1}}"#).unwrap();
        assert_eq!(t.domain().unwrap().dim(), 3);
    }

    #[test]
    fn schema_violations() {
        assert!(parse(r#"{"version":1,"forward":{"kind":"dropwave"},"bogus":1}"#).is_err());
        assert!(parse(r#"{"version":2,"forward":{"kind":"dropwave"}}"#).is_err());
        assert!(parse(r#"{"version":1,"forward":{"kind":"dropwave"},"counts":[3]}"#).is_err());
        assert!(parse(r#"{"version":1,"forward":{"kind":"dropwave"},"kriging":{"ga":{"populaton":4}}}"#).is_err());
        assert!(parse(r#"{"version":1,"forward":{"kind":"nope"}}"#).is_err());
    }
}
