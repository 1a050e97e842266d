//! Gaussian sampling and Monte-Carlo estimators.
//!
//! Sample `i` of a seeded batch is drawn from its own ChaCha stream
//! `(seed, i)`, so any sample is addressable by index and results do not
//! depend on how work is split across threads. Reductions always run
//! sequentially over values collected in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::engine::FlowResult;

/// Fraction of non-finite pointwise values above which an estimate is flagged invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Independent RNG for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal vector number `index` of the `(seed)` batch.
pub fn gaussian_sample(dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample_gaussian(dim: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok((0..n as u64).into_par_iter().map(|i| gaussian_sample(dim, seed, i)).collect())
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: Option<u64>,
    /// Number of non-finite pointwise values excluded from the mean.
    pub failures: usize,
    pub valid: bool,
}

impl Estimate {
    /// Exact value with zero error, for quantities known in closed form.
    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_error: 0.0, n: 0, seed: None, failures: 0, valid: true }
    }

    pub fn from_values(values: &[f64], seed: Option<u64>) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let failures = values.len() - finite.len();
        let n = finite.len();
        let mean = if n == 0 { f64::NAN } else { finite.iter().sum::<f64>() / n as f64 };
        let std_error = if n < 2 {
            0.0
        } else {
            let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        let valid = n > 0 && (failures as f64) <= MAX_FAILURE_FRACTION * values.len() as f64;
        Self { mean, std_error, n: values.len(), seed, failures, valid }
    }

    /// `|mean - target| <= k * std_error + abs_slack`.
    pub fn within(&self, target: f64, k: f64, abs_slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + abs_slack
    }
}

/// Parallel pointwise evaluation followed by an index-ordered reduction.
pub fn estimate<F>(batch: &[Vec<f64>], seed: Option<u64>, f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = batch.par_iter().map(|x| f(x)).collect();
    Estimate::from_values(&values, seed)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_tail(lambda))
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2 k² λ²)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Both sides of the change-of-variables identity `E[f∘T] = E[f·Λ]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PushforwardPair {
    /// `E[f(T_{s,t} x)]` over the start points.
    pub transported: Estimate,
    /// `E[f(y) Λ_{s,t}(y)]` over the same points.
    pub weighted: Estimate,
    /// Paired difference of the two sides, carrying the combined error.
    pub difference: Estimate,
}

impl PushforwardPair {
    /// Sides agree within `k` combined standard errors.
    pub fn agree(&self, k: f64) -> bool {
        self.difference.valid && self.difference.within(0.0, k, 1e-12)
    }
}

/// Evaluates both sides on a flow result that carries densities.
pub fn pushforward_pair<F>(f: F, flow: &FlowResult) -> Result<PushforwardPair>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let logs = flow
        .log_density
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("flow result has no densities".into()))?;
    let pairs: Vec<(f64, f64)> = (0..flow.len())
        .into_par_iter()
        .map(|i| match flow.endpoint(i) {
            Some(end) => (f(end), f(&flow.sample_points[i]) * logs[i].exp()),
            None => (f64::NAN, f64::NAN),
        })
        .collect();
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(PushforwardPair {
        transported: Estimate::from_values(&lhs, None),
        weighted: Estimate::from_values(&rhs, None),
        difference: Estimate::from_values(&diff, None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_addressable() {
        let a = sample_gaussian(3, 50, 7).unwrap();
        let b = sample_gaussian(3, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[17], gaussian_sample(3, 7, 17));
        assert_ne!(a, sample_gaussian(3, 50, 8).unwrap());
        assert!(sample_gaussian(3, 0, 1).is_err());
    }

    #[test]
    fn constant_functional_has_zero_error() {
        let batch = sample_gaussian(2, 100, 1).unwrap();
        let e = estimate(&batch, Some(1), |_| 3.5);
        assert_eq!(e.mean, 3.5);
        assert_eq!(e.std_error, 0.0);
        assert!(e.valid);
    }

    #[test]
    fn failures_flag_invalid() {
        let vals: Vec<f64> = (0..100).map(|i| if i < 2 { f64::NAN } else { 1.0 }).collect();
        let e = Estimate::from_values(&vals, None);
        assert_eq!(e.failures, 2);
        assert!(!e.valid);
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = sample_gaussian(1, 2000, 3).unwrap().into_iter().map(|x| x[0]).collect();
        let b: Vec<f64> = sample_gaussian(1, 2000, 4).unwrap().into_iter().map(|x| x[0]).collect();
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample(&a, &b).1 > 1e-3);
        assert!(ks_two_sample(&a, &shifted).1 < 1e-6);
    }

    #[test]
    fn pushforward_zero_field() {
        use crate::flow::engine::{integrate_flow, FlowOptions};
        use crate::flow::field::{ClosedForm, VectorField};
        let f = VectorField::closed_form(ClosedForm::Zero { dim: 1 }).unwrap();
        let batch = sample_gaussian(1, 4000, 3).unwrap();
        let r = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions::default(), true).unwrap();
        let pp = pushforward_pair(|x| x[0] * x[0], &r).unwrap();
        assert!(pp.transported.within(1.0, 4.0, 0.0) && pp.weighted.within(1.0, 4.0, 0.0));
        assert!(pp.agree(4.0) && pp.difference.mean == 0.0);
        let bare = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        assert!(pushforward_pair(|x| x[0], &bare).is_err());
    }

    #[test]
    fn pushforward_tanh_square() {
        use crate::flow::engine::{integrate_flow, FlowOptions};
        use crate::flow::field::{ClosedForm, VectorField};
        use crate::quadrature::gauss_hermite;
        let f = VectorField::closed_form(ClosedForm::Tanh { dim: 1, rate: 1.0 }).unwrap();
        let batch = sample_gaussian(1, 20_000, 8).unwrap();
        let r = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions { grid: 1, ..Default::default() }, true).unwrap();
        let pp = pushforward_pair(|x| x[0] * x[0], &r).unwrap();
        let se = pp.transported.std_error.hypot(pp.weighted.std_error);
        assert!((pp.transported.mean - pp.weighted.mean).abs() <= 4.0 * se);
        let oracle = gauss_hermite(100).integrate(|x| (1f64.exp() * x.sinh()).asinh().powi(2));
        assert!(pp.transported.within(oracle, 4.0, 0.0), "{:?} vs {oracle}", pp.transported);
    }
}
