use crate::error::{Error, Result};

const EDGE_TOL: f64 = 1e-12;

/// Legendre polynomial of degree `order`, orthonormal for the uniform density
/// on `[-1, 1]`: `sqrt(2n + 1) P_n(u)`.
pub fn legendre_eval(order: usize, u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0 + EDGE_TOL) {
        return Err(Error::OutOfDomain(vec![u]));
    }
    let mut out = vec![0.0; order + 1];
    legendre_all(u, &mut out);
    Ok(out[order])
}

/// Fills `out[n]` with the orthonormal polynomial of degree `n` for `n < out.len()`.
pub fn legendre_all(u: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    // Classical recurrence (n+1) P_{n+1} = (2n+1) u P_n - n P_{n-1}, scaled afterwards.
    let mut p_prev = 1.0;
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    let mut p = u;
    out[1] = 3f64.sqrt() * u;
    for n in 1..out.len() - 1 {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * u * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
        out[n + 1] = (2.0 * nf + 3.0).sqrt() * next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(legendre_eval(0, 0.3).unwrap(), 1.0);
        assert!((legendre_eval(1, 1.0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((legendre_eval(2, 0.0).unwrap() + 5f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(legendre_eval(2, 1.0 + 1e-6).is_err());
        assert!(legendre_eval(2, -1.0 - 1e-13).is_ok());
    }

    #[test]
    fn matches_closed_forms() {
        for &u in &[-1.0, -0.7, 0.0, 0.2, 0.93, 1.0] {
            let mut v = [0.0; 5];
            legendre_all(u, &mut v);
            let p3 = 0.5 * (5.0 * u * u * u - 3.0 * u);
            let p4 = (35.0 * u.powi(4) - 30.0 * u * u + 3.0) / 8.0;
            assert!((v[3] - 7f64.sqrt() * p3).abs() < 1e-13);
            assert!((v[4] - 3.0 * p4).abs() < 1e-13);
        }
    }
}
