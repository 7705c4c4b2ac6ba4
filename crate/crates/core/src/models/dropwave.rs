use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::ForwardModel;

/// Drop-Wave (Salomon) surface: `1 - cos(2 pi r) + 0.1 r` with `r = |x|`.
pub fn dropwave(x1: f64, x2: f64) -> f64 {
    let r = x1.hypot(x2);
    1.0 - (2.0 * PI * r).cos() + 0.1 * r
}

/// The Drop-Wave function as a two-input forward model.
#[derive(Debug, Clone, Copy, Default)]
pub struct DropWave;

impl ForwardModel for DropWave {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match x {
            [a, b] => Ok(dropwave(*a, *b)),
            _ => Err(Error::DimensionMismatch { expected: 2, got: x.len() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(dropwave(0.0, 0.0), 0.0);
        assert!((dropwave(10.0, 0.0) - 1.0).abs() < 1e-12);
        assert!((dropwave(0.5, 0.0) - 2.05).abs() < 1e-12);
    }

    #[test]
    fn radial_symmetry() {
        for &(a, b) in &[(1.3, -2.7), (0.0, 4.4), (-9.9, 9.9), (3.0, 4.0)] {
            assert_eq!(dropwave(a, b), dropwave(b, a));
            assert_eq!(dropwave(a, b), dropwave(-a, -b));
        }
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(DropWave.evaluate(&[1.0]).is_err());
    }
}
