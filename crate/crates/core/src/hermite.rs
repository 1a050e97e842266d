//! Normalized Hermite polynomials and their product structure constants.
//!
//! Normalization: `E[H_n(X)^2] = 1` for `X ~ N(0,1)` and `H_n' = sqrt(n) H_{n-1}`.
//! Combined with `x H_n = H_n' + (the creation term)` this yields the
//! three-term recurrence
//!
//! ```text
//! H_0 = 1,  H_1 = x,  H_{n+1} = (x H_n - sqrt(n) H_{n-1}) / sqrt(n+1).
//! ```

use std::sync::OnceLock;

use crate::space::MAX_DEGREE_CAP;

/// Fills `out[k] = H_k(x)` for `k = 0..out.len()`.
pub fn hermite_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (x * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
}

pub fn hermite(n: u32, x: f64) -> f64 {
    let mut buf = vec![0.0; n as usize + 1];
    hermite_values(x, &mut buf);
    buf[n as usize]
}

fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// `E[H_m H_n H_k]` for normalized Hermite polynomials.
///
/// With `s = (m+n+k)/2` and `a = s-m, b = s-n, c = s-k` the classical value
/// `sqrt(m! n! k!) / (a! b! c!)` squares to the integer
/// `C(m, b) * C(n, a) * C(k, a)`; that integer is formed exactly and the
/// square root is taken once.
pub fn triple_product(m: u32, n: u32, k: u32) -> f64 {
    let total = m + n + k;
    if total % 2 == 1 {
        return 0.0;
    }
    let s = total / 2;
    if s < m || s < n || s < k {
        return 0.0;
    }
    let (a, b) = (s - m, s - n);
    let squared = binomial(m, b) * binomial(n, a) * binomial(k, a);
    (squared as f64).sqrt()
}

/// Linearization `H_m H_n = sum_k L[m][n][k] H_k`, nonzero entries only.
pub struct Linearization {
    table: Vec<Vec<Vec<(u32, f64)>>>,
}

impl Linearization {
    fn build(max: u32) -> Self {
        let table = (0..=max)
            .map(|m| {
                (0..=max)
                    .map(|n| {
                        let lo = m.abs_diff(n);
                        (lo..=m + n)
                            .step_by(2)
                            .map(|k| (k, triple_product(m, n, k)))
                            .filter(|(_, c)| *c != 0.0)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { table }
    }

    pub fn global() -> &'static Self {
        static TABLE: OnceLock<Linearization> = OnceLock::new();
        TABLE.get_or_init(|| Self::build(MAX_DEGREE_CAP))
    }

    pub fn terms(&self, m: u32, n: u32) -> &[(u32, f64)] {
        &self.table[m as usize][n as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_closed_forms() {
        let x = 2.0_f64;
        assert_eq!(hermite(0, x), 1.0);
        assert_eq!(hermite(1, x), 2.0);
        assert!((hermite(2, x) - (x * x - 1.0) / 2f64.sqrt()).abs() < 1e-14);
        assert!((hermite(3, x) - 2.0 / 6f64.sqrt()).abs() < 1e-14);
        assert_eq!(hermite(2, 1.0), 0.0);
    }

    #[test]
    fn triple_products_match_hand_values() {
        assert_eq!(triple_product(1, 1, 0), 1.0);
        assert!((triple_product(1, 1, 2) - 2f64.sqrt()).abs() < 1e-15);
        assert!((triple_product(2, 1, 3) - 3f64.sqrt()).abs() < 1e-15);
        assert!((triple_product(2, 1, 1) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(triple_product(2, 1, 2), 0.0);
        assert_eq!(triple_product(3, 1, 0), 0.0);
        // orthonormality as a special case
        for n in 0..10 {
            assert_eq!(triple_product(n, n, 0), 1.0);
        }
    }

    #[test]
    fn binomials_exact() {
        assert_eq!(binomial(40, 20), 137_846_528_820);
        assert_eq!(binomial(5, 7), 0);
    }
}
