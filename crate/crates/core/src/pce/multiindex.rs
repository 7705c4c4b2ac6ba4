use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        Self(alpha)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn q_norm(&self, q: f64) -> f64 {
        self.0.iter().map(|&a| (a as f64).powf(q)).sum::<f64>().powf(1.0 / q)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub dim: usize,
    pub p: u32,
    pub q: f64,
    pub indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Largest single-axis degree, which bounds the univariate tables needed.
    pub fn max_degree(&self) -> u32 {
        self.indices.iter().flat_map(|a| a.0.iter().copied()).max().unwrap_or(0)
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            dim: self.dim,
            p: self.p,
            q: self.q,
            indices: keep.iter().map(|&k| self.indices[k].clone()).collect(),
        }
    }
}

/// All multi-indices with `||alpha||_q <= p`, ordered by total degree and then
/// reverse-lexicographically, so `(1,0)` precedes `(0,1)`.
pub fn generate_hyperbolic(dim: usize, p: u32, q: f64) -> Result<MultiIndexSet> {
    if dim == 0 {
        return Err(Error::InvalidArgument("multi-index dimension must be >= 1".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("q-norm must lie in (0,1], got {q}")));
    }
    let limit = p as f64 + 1e-9;
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    // Depth-first over axes; partial sums of alpha_i^q prune the search.
    fn rec(axis: usize, acc: f64, cur: &mut Vec<u32>, p: u32, q: f64, lim_q: f64, out: &mut Vec<MultiIndex>) {
        if axis == cur.len() {
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for a in 0..=p {
            let s = acc + (a as f64).powf(q);
            if s > lim_q {
                break;
            }
            cur[axis] = a;
            rec(axis + 1, s, cur, p, q, lim_q, out);
        }
        cur[axis] = 0;
    }
    rec(0, 0.0, &mut cur, p, q, limit.powf(q), &mut out);
    out.sort_by(|a, b| a.total_degree().cmp(&b.total_degree()).then_with(|| b.0.cmp(&a.0)));
    Ok(MultiIndexSet { dim, p, q, indices: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinalities() {
        assert_eq!(generate_hyperbolic(2, 2, 1.0).unwrap().len(), 6);
        let s = generate_hyperbolic(2, 2, 0.5).unwrap();
        assert_eq!(s.len(), 5);
        assert!(!s.indices.contains(&MultiIndex::new(vec![1, 1])));
        for q in [0.3, 0.7, 1.0] {
            assert_eq!(generate_hyperbolic(1, 4, q).unwrap().len(), 5);
        }
        // Full total-degree set is binomial(M + p, p).
        assert_eq!(generate_hyperbolic(5, 4, 1.0).unwrap().len(), 126);
    }

    #[test]
    fn graded_order_and_zero_first() {
        let s = generate_hyperbolic(3, 3, 0.95).unwrap();
        assert!(s.indices[0].is_zero());
        for w in s.indices.windows(2) {
            assert!(w[0].total_degree() <= w[1].total_degree());
        }
        assert_eq!(s.indices[1].as_slice(), &[1, 0, 0]);
    }

    #[test]
    fn q_norm_respected() {
        let q = 0.95;
        let s = generate_hyperbolic(4, 5, q).unwrap();
        for a in &s.indices {
            assert!(a.q_norm(q) <= 5.0 + 1e-9);
        }
        let mut seen = std::collections::HashSet::new();
        assert!(s.indices.iter().all(|a| seen.insert(a.clone())));
    }
}
