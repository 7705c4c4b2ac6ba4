//! Forward models: the Drop-Wave benchmark and the TDS hydrogen-diffusion solver.

mod dropwave;
pub mod tds;

pub use dropwave::{dropwave, DropWave};
pub use tds::{
    nondimensionalize, tds_solve, trap_occupancy, FluxCurve, NondimParams, SolverOptions,
    TdsConfig, TdsPointModel, Trap, TrapSet,
};

use crate::error::Result;

/// A scalar-valued model `y = M(x)` over an `M`-dimensional input.
pub trait ForwardModel: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<f64>;
}

/// Adapter turning a closure into a [`ForwardModel`].
pub struct FnModel<F> {
    dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        (self.f)(x)
    }
}
