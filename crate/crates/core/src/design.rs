//! Input domains, regular block partitions and the affine map to `[-1, 1]^M`.
//!
//! Cells of a [`Partition`] are half-open: every interior face belongs to the
//! cell above it (lower-inclusive, upper-exclusive), while the global upper
//! face of the parent domain stays closed so the cells cover it exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` with `lower[i] < upper[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// The full input space of a forward model.
pub type Domain = Bounds;

#[derive(Serialize, Deserialize)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBounds> for Bounds {
    type Error = Error;
    fn try_from(raw: RawBounds) -> Result<Self> {
        Bounds::new(raw.lower, raw.upper)
    }
}

impl From<Bounds> for RawBounds {
    fn from(b: Bounds) -> Self {
        RawBounds { lower: b.lower, upper: b.upper }
    }
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidDomain("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(Error::InvalidDomain(format!(
                    "axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The hypercube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Closed containment: `lower[i] <= x[i] <= upper[i]` for all `i`.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Affine map into `[-1, 1]^M`: `u = 2 (x - lo) / (hi - lo) - 1`.
    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.standardize_unchecked(x))
    }

    pub(crate) fn standardize_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(x.len());
        self.standardize_into(x, &mut u);
        u
    }

    pub(crate) fn standardize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0),
        );
    }

    /// Inverse of [`Bounds::standardize`].
    pub fn destandardize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        Ok(u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| lo + 0.5 * (v + 1.0) * (hi - lo))
            .collect())
    }
}

/// One block of a partition with its face convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub bounds: Bounds,
    /// `true` where the upper face along that axis is closed (it lies on the
    /// parent's upper face); interior upper faces are open.
    pub upper_closed: Vec<bool>,
}

impl Cell {
    /// Half-open membership test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| {
            let (lo, hi) = (self.bounds.lower[i], self.bounds.upper[i]);
            *v >= lo && (*v < hi || (self.upper_closed[i] && *v == hi))
        })
    }
}

/// Tensor-product block decomposition of a parent domain.
///
/// Stored as per-axis breakpoint lists; cell `j` is enumerated row-major
/// (last axis varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    parent: Bounds,
    breaks: Vec<Vec<f64>>,
}

impl Partition {
    /// `counts[i]` equal-width slabs along every axis.
    pub fn split_regular(domain: &Bounds, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: counts.len() });
        }
        let mut breaks = Vec::with_capacity(counts.len());
        for (axis, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::InvalidArgument(format!("axis {axis}: zero divisions")));
            }
            let (lo, hi) = (domain.lower[axis], domain.upper[axis]);
            let mut b: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
            // pin the end points exactly
            b[0] = lo;
            b[n] = hi;
            breaks.push(b);
        }
        Ok(Self { parent: domain.clone(), breaks })
    }

    /// Build from explicit breakpoints (each list strictly increasing and
    /// spanning the parent exactly).
    pub fn from_breaks(parent: Bounds, breaks: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.len() != parent.dim() {
            return Err(Error::DimensionMismatch { expected: parent.dim(), got: breaks.len() });
        }
        for (axis, b) in breaks.iter().enumerate() {
            let ok = b.len() >= 2
                && b[0] == parent.lower[axis]
                && b[b.len() - 1] == parent.upper[axis]
                && b.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(Error::InvalidDomain(format!("axis {axis}: bad breakpoints {b:?}")));
            }
        }
        Ok(Self { parent, breaks })
    }

    pub fn parent(&self) -> &Bounds {
        &self.parent
    }

    pub fn breaks(&self) -> &[Vec<f64>] {
        &self.breaks
    }

    /// Divisions per axis.
    pub fn counts(&self) -> Vec<usize> {
        self.breaks.iter().map(|b| b.len() - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn unflatten(&self, mut j: usize) -> Vec<usize> {
        let counts = self.counts();
        let mut idx = vec![0; counts.len()];
        for axis in (0..counts.len()).rev() {
            idx[axis] = j % counts[axis];
            j /= counts[axis];
        }
        idx
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.breaks.iter()).fold(0, |acc, (i, b)| acc * (b.len() - 1) + i)
    }

    pub fn cell(&self, j: usize) -> Cell {
        let idx = self.unflatten(j);
        let mut lower = Vec::with_capacity(idx.len());
        let mut upper = Vec::with_capacity(idx.len());
        let mut upper_closed = Vec::with_capacity(idx.len());
        for (axis, &k) in idx.iter().enumerate() {
            let b = &self.breaks[axis];
            lower.push(b[k]);
            upper.push(b[k + 1]);
            upper_closed.push(k + 2 == b.len());
        }
        Cell { bounds: Bounds { lower, upper }, upper_closed }
    }

    pub fn cells(&self) -> Vec<Cell> {
        (0..self.len()).map(|j| self.cell(j)).collect()
    }

    /// Index of the unique cell holding `x`.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if !self.parent.contains(x)? {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        let idx: Vec<usize> = self
            .breaks
            .iter()
            .zip(x)
            .map(|(b, v)| b[1..b.len() - 1].partition_point(|t| t <= v))
            .collect();
        Ok(self.flatten(&idx))
    }

    /// Split every cell at its midpoint along `axis`.
    pub fn bisect(&self, axis: usize) -> Result<Self> {
        if axis >= self.parent.dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        let mut breaks = self.breaks.clone();
        let old = &self.breaks[axis];
        let mut refined = Vec::with_capacity(2 * old.len() - 1);
        for w in old.windows(2) {
            refined.push(w[0]);
            refined.push(0.5 * (w[0] + w[1]));
        }
        refined.push(old[old.len() - 1]);
        breaks[axis] = refined;
        Ok(Self { parent: self.parent.clone(), breaks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn square() -> Bounds {
        Bounds::cube(2, -10.0, 10.0).unwrap()
    }

    #[test]
    fn contains_examples() {
        let d = square();
        assert!(d.contains(&[0.0, 0.0]).unwrap());
        assert!(d.contains(&[10.0, 10.0]).unwrap());
        assert!(!d.contains(&[10.1, 0.0]).unwrap());
        assert!(matches!(d.contains(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![2.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![], vec![]).is_err());
        assert!(Bounds::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn split_three_by_three_breakpoints() {
        let p = Partition::split_regular(&square(), &[3, 3]).unwrap();
        assert_eq!(p.len(), 9);
        for b in p.breaks() {
            assert_eq!(b.len(), 4);
            assert!((b[1] + 10.0 / 3.0).abs() < 1e-12);
            assert!((b[2] - 10.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_all_ones_is_parent() {
        let d = square();
        let p = Partition::split_regular(&d, &[1, 1]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.cell(0).bounds, d);
        assert_eq!(p.cell(0).upper_closed, vec![true, true]);
    }

    #[test]
    fn split_unit_interval_midpoint() {
        let d = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let p = Partition::split_regular(&d, &[2]).unwrap();
        let c0 = p.cell(0);
        let c1 = p.cell(1);
        assert_eq!((c0.bounds.lower()[0], c0.bounds.upper()[0]), (0.0, 0.5));
        assert_eq!((c1.bounds.lower()[0], c1.bounds.upper()[0]), (0.5, 1.0));
        assert!(!c0.contains(&[0.5]));
        assert!(c1.contains(&[0.5]));
        assert!(c1.contains(&[1.0]));
    }

    #[test]
    fn locate_examples() {
        let p2 = Partition::split_regular(&square(), &[2, 2]).unwrap();
        let c = p2.cell(p2.locate(&[0.0, 0.0]).unwrap());
        assert_eq!(c.bounds.lower(), &[0.0, 0.0]);
        assert_eq!(c.bounds.upper(), &[10.0, 10.0]);

        let c = p2.cell(p2.locate(&[-5.0, 5.0]).unwrap());
        assert_eq!(c.bounds.lower(), &[-10.0, 0.0]);
        assert_eq!(c.bounds.upper(), &[0.0, 10.0]);

        let p3 = Partition::split_regular(&square(), &[3, 3]).unwrap();
        let j = p3.locate(&[10.0, 10.0]).unwrap();
        assert_eq!(j, 8);
        let c = p3.cell(j);
        assert!((c.bounds.lower()[0] - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.bounds.upper(), &[10.0, 10.0]);

        assert!(matches!(p3.locate(&[10.5, 0.0]), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn locate_is_a_function_on_random_probes() {
        let d = Bounds::new(vec![-1.0, 0.0, 2.0], vec![1.0, 5.0, 3.0]).unwrap();
        let p = Partition::split_regular(&d, &[3, 2, 4]).unwrap();
        let cells = p.cells();
        let mut rng = crate::rng::seeded(11);
        for _ in 0..100_000 {
            let x: Vec<f64> =
                (0..3).map(|i| rng.random_range(d.lower()[i]..=d.upper()[i])).collect();
            let owners: Vec<usize> =
                cells.iter().enumerate().filter(|(_, c)| c.contains(&x)).map(|(j, _)| j).collect();
            assert_eq!(owners.len(), 1, "probe {x:?}");
            assert_eq!(owners[0], p.locate(&x).unwrap());
        }
        // faces and corners
        for x in [[1.0, 5.0, 3.0], [-1.0, 0.0, 2.0], [1.0 / 3.0, 2.5, 2.25]] {
            let n = cells.iter().filter(|c| c.contains(&x)).count();
            assert_eq!(n, 1);
        }
    }

    #[test]
    fn bisect_doubles_count() {
        let p = Partition::split_regular(&square(), &[1, 3]).unwrap().bisect(1).unwrap();
        assert_eq!(p.counts(), vec![1, 6]);
        assert_eq!(p.breaks()[1][1], -10.0 + 20.0 / 6.0);
    }

    #[test]
    fn standardize_examples() {
        let b = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        assert_eq!(b.standardize(&[5.0]).unwrap(), vec![0.0]);
        let b = Bounds::new(vec![-10.0], vec![10.0]).unwrap();
        assert_eq!(b.standardize(&[-10.0]).unwrap(), vec![-1.0]);
        let b = Bounds::new(vec![2.0], vec![4.0]).unwrap();
        assert_eq!(b.standardize(&[3.5]).unwrap(), vec![0.5]);
    }

    proptest! {
        #[test]
        fn standardize_round_trip(lo in -1e3f64..1e3, w in 1e-3f64..1e3, t in 0.0f64..=1.0) {
            let b = Bounds::new(vec![lo, -1.0], vec![lo + w, 7.0]).unwrap();
            let x = vec![lo + t * w, -1.0 + 8.0 * t];
            let back = b.destandardize(&b.standardize(&x).unwrap()).unwrap();
            for (a, c) in x.iter().zip(&back) {
                prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0) * (1.0 + (lo.abs() / w)));
            }
        }
    }
}
