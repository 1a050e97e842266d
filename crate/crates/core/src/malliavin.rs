//! Gradient, divergence and the Ornstein–Uhlenbeck spectral calculus in
//! chaos form.
//!
//! On `H_α` the gradient acts as the annihilation ladder
//! `∂_i H_α = sqrt(α_i) H_{α-e_i}` and the divergence of `H_α e_i` as the
//! creation ladder `sqrt(α_i+1) H_{α+e_i}`. The number operator is diagonal
//! with eigenvalue `|α|`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly, HermiteTable, TruncationPolicy};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate, stream_rng, Estimate};
use crate::quadrature::composite_legendre;
use crate::space::{GaussianSpace, MultiIndex};

/// `∇Φ`, component `i` is `∂_i Φ`.
pub fn gradient(phi: &ChaosPoly) -> ChaosField {
    let space = phi.space();
    let comps = (0..space.dim()).map(|i| partial(phi, i)).collect();
    ChaosField::new(space, comps).expect("components share the space")
}

/// `∂_i Φ` alone.
pub fn partial(phi: &ChaosPoly, dir: usize) -> ChaosPoly {
    let mut out = BTreeMap::new();
    for (alpha, c) in phi.terms() {
        if let Some(lower) = alpha.lowered(dir) {
            *out.entry(lower).or_insert(0.0) += (alpha.get(dir) as f64).sqrt() * c;
        }
    }
    ChaosPoly::from_map(phi.space(), out)
}

/// `δ(Φ e_i)`: creation ladder in direction `dir`.
pub fn creation(phi: &ChaosPoly, dir: usize, policy: TruncationPolicy) -> Result<ChaosPoly> {
    let cap = phi.space().cap();
    let mut out = BTreeMap::new();
    for (alpha, c) in phi.terms() {
        let raised = alpha.raised(dir);
        if raised.degree() > cap {
            match policy {
                TruncationPolicy::ErrorOnOverflow => {
                    return Err(Error::DegreeOverflow { degree: raised.degree(), cap })
                }
                TruncationPolicy::TruncateToCap => continue,
            }
        }
        let k = (alpha.get(dir) + 1) as f64;
        *out.entry(raised).or_insert(0.0) += k.sqrt() * c;
    }
    Ok(ChaosPoly::from_map(phi.space(), out))
}

/// `δv = Σ_i δ(v_i e_i)`. Always mean zero.
pub fn divergence(v: &ChaosField, policy: TruncationPolicy) -> Result<ChaosPoly> {
    let space = v.space();
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for (i, comp) in v.components().iter().enumerate() {
        for (a, c) in creation(comp, i, policy)?.terms() {
            *out.entry(a.clone()).or_insert(0.0) += c;
        }
    }
    Ok(ChaosPoly::from_map(space, out))
}

/// Jacobian of a field, entry `(i, j) = ∂_j v_i`.
pub fn jacobian(v: &ChaosField) -> ChaosMatrix {
    let space = v.space();
    let rows = v.components().iter().map(|c| gradient(c).into_components()).collect();
    ChaosMatrix::from_rows(space, rows).expect("square by construction")
}

/// Functions of the number operator `𝓛`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralFunction {
    /// `𝓛` itself, eigenvalue `k`.
    NumberOp,
    /// `𝓛^{-1}` on mean-zero inputs, eigenvalue `1/k`.
    InverseL,
    /// `(1+𝓛)^{-β}`, `β > 0`.
    ResolventPower { beta: f64 },
    /// Ornstein–Uhlenbeck semigroup `T_t = e^{-t𝓛}`, `t ≥ 0`.
    OuSemigroup { t: f64 },
}

impl SpectralFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ResolventPower { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::InvalidArgument(format!("resolvent power needs beta > 0, got {beta}")))
            }
            Self::OuSemigroup { t } if !(t >= 0.0) => {
                Err(Error::InvalidArgument(format!("semigroup time must be >= 0, got {t}")))
            }
            _ => Ok(()),
        }
    }

    /// Eigenvalue on the degree-`k` chaos.
    pub fn multiplier(&self, k: u32) -> f64 {
        let kf = k as f64;
        match *self {
            Self::NumberOp => kf,
            Self::InverseL => {
                if k == 0 {
                    0.0
                } else {
                    1.0 / kf
                }
            }
            Self::ResolventPower { beta } => (1.0 + kf).powf(-beta),
            Self::OuSemigroup { t } => (-kf * t).exp(),
        }
    }
}

pub fn spectral_apply(p: &ChaosPoly, f: SpectralFunction) -> Result<ChaosPoly> {
    f.validate()?;
    if f == SpectralFunction::InverseL && p.expectation() != 0.0 {
        return Err(Error::Domain(format!(
            "inverse of the number operator needs a mean-zero input, got mean {}",
            p.expectation()
        )));
    }
    Ok(p.map_coeffs(|a, c| c * f.multiplier(a.degree())))
}

/// Component-wise action on a field: each scalar component is weighted by
/// the multiplier of its own chaos degree.
pub fn spectral_apply_field(v: &ChaosField, f: SpectralFunction) -> Result<ChaosField> {
    v.try_map(|c| spectral_apply(c, f))
}

/// `(1+𝓛)^{-β}` expressed through the semigroup,
/// `Γ(β)^{-1} ∫_0^∞ t^{β-1} e^{-t} e^{-kt} dt`, evaluated by quadrature in
/// `t = e^s`.
pub fn resolvent_power_by_quadrature(k: u32, beta: f64) -> f64 {
    let rate = 1.0 + k as f64;
    // integrand in s: exp(βs - rate e^s); left tail ~ e^{βs}, right tail double-exponential
    let lo = -45.0 / beta;
    let hi = (60.0 / rate).ln().max(1.0);
    let rule = composite_legendre(lo, hi, 600, 12);
    let integral = rule.integrate(|s| (beta * s - rate * s.exp()).exp());
    integral / statrs::function::gamma::gamma(beta)
}

/// Mehler estimate of `T_t p(ω)` with its standard error at one point.
///
/// Uses `n` antithetic pairs `(ω̃, -ω̃)`, each pair contributing the mean
/// of the two evaluations. The pair stream is `(seed, point_id)`.
pub fn ou_mehler_point(
    p: &ChaosPoly,
    t: f64,
    omega: &[f64],
    n: usize,
    seed: u64,
    point_id: u64,
) -> Result<Estimate> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    if n < 2 {
        return Err(Error::InvalidArgument("Mehler estimate needs at least 2 samples".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("semigroup time must be >= 0, got {t}")));
    }
    let dim = p.space().dim();
    if omega.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: omega.len() });
    }
    let a = (-t).exp();
    let b = (1.0 - (-2.0 * t).exp()).sqrt();
    if b == 0.0 {
        return Ok(Estimate { seed: Some(seed), ..Estimate::exact(p.evaluate(omega)) });
    }
    let mut rng = stream_rng(seed, point_id);
    let mut table = HermiteTable::new(dim, p.degree());
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            plus[i] = a * omega[i] + b * z;
            minus[i] = a * omega[i] - b * z;
        }
        table.fill(&plus);
        let fp = p.evaluate_with(&table);
        table.fill(&minus);
        let fm = p.evaluate_with(&table);
        values.push(0.5 * (fp + fm));
    }
    Ok(Estimate::from_values(&values, Some(seed)))
}

/// Mehler estimates at a batch of points, parallel over points.
pub fn ou_mehler_mc(
    p: &ChaosPoly,
    t: f64,
    points: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    points
        .par_iter()
        .enumerate()
        .map(|(k, w)| ou_mehler_point(p, t, w, n, seed, k as u64))
        .collect()
}

/// `E[· | 𝓕_m]` with `𝓕_m` generated by the first `m` coordinates.
pub fn conditional_project(p: &ChaosPoly, m: usize) -> Result<ChaosPoly> {
    check_level(p.space(), m)?;
    Ok(p.retain(|a| a.supported_below(m)))
}

/// `E[π_m v | 𝓕_m]`: components past `m` are zeroed as well.
pub fn conditional_project_field(v: &ChaosField, m: usize) -> Result<ChaosField> {
    check_level(v.space(), m)?;
    let comps = v
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| if i < m { c.retain(|a| a.supported_below(m)) } else { ChaosPoly::zero(v.space()) })
        .collect();
    ChaosField::new(v.space(), comps)
}

/// Entry-wise conditional expectation of a random matrix (no row/column cut).
pub fn conditional_project_matrix(k: &ChaosMatrix, m: usize) -> Result<ChaosMatrix> {
    check_level(k.space(), m)?;
    Ok(k.map(|e| e.retain(|a| a.supported_below(m))))
}

fn check_level(space: &Arc<GaussianSpace>, m: usize) -> Result<()> {
    if m == 0 || m > space.dim() {
        return Err(Error::InvalidArgument(format!(
            "projection level must lie in 1..={}, got {m}",
            space.dim()
        )));
    }
    Ok(())
}

/// Norm on gradients used by the Sobolev diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Euclidean (Cameron–Martin) norm.
    H,
    /// `||Q ·||` with the space's weights.
    WeightedW,
}

/// Monte-Carlo estimate of `(E|Φ|^p + E||∇Φ||^p)^{1/p}` over a sample batch.
/// The standard error is propagated through the `1/p` power by the delta method.
pub fn sobolev_norm(
    phi: &ChaosPoly,
    p: f64,
    mode: NormMode,
    batch: &[Vec<f64>],
    seed: Option<u64>,
) -> Result<Estimate> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent must be >= 1, got {p}")));
    }
    let space = phi.space();
    if mode == NormMode::WeightedW && space.weights().is_none() {
        return Err(Error::InvalidArgument("weighted norm requested but no weights configured".into()));
    }
    let grad = gradient(phi);
    let deg = phi.degree();
    let dim = space.dim();
    let inner = estimate(batch, seed, |x| {
        let mut table = HermiteTable::new(dim, deg);
        table.fill(x);
        let val = phi.evaluate_with(&table);
        let g = grad.evaluate_with(&table);
        let gn = match mode {
            NormMode::H => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormMode::WeightedW => space.weighted_norm(&g),
        };
        val.abs().powf(p) + gn.powf(p)
    });
    let mean = inner.mean.powf(1.0 / p);
    let se = if inner.mean > 0.0 { inner.std_error * mean / (p * inner.mean) } else { 0.0 };
    Ok(Estimate { mean, std_error: se, ..inner })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleRow {
    pub m: usize,
    /// `E||∇a_m||_H^2`
    pub h_norm_sq: f64,
    /// `E||Q ∇a_m||^2`
    pub weighted_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleTable {
    pub rows: Vec<CounterexampleRow>,
    /// Increment of the weighted column between `m_max - 1` and `m_max`.
    pub weighted_tail_increment: f64,
    /// Increment of the H column between `m_max - 1` and `m_max`.
    pub h_tail_increment: f64,
}

/// Squared gradient coefficient of direction `n` in
/// `a_m = Σ_{n≥2} H_{2n}(x_n) / (sqrt(n) log n)`: the ladder gives
/// `∂_n a_m = sqrt(2n) / (sqrt(n) log n) H_{2n-1}(x_n)`.
fn counterexample_gradient_coeff(n: usize) -> f64 {
    let nf = n as f64;
    (2.0 * nf).sqrt() / (nf.sqrt() * nf.ln())
}

/// The scalar `a_m` itself as a chaos poly on `m` directions (cap `2m`),
/// direction `n-1` carrying `H_{2n}`.
pub fn counterexample_poly(m: usize, weights: Option<Vec<f64>>) -> Result<ChaosPoly> {
    if m < 2 {
        return Err(Error::InvalidArgument("counterexample needs m >= 2".into()));
    }
    let space = GaussianSpace::build(m, 2 * m as u32, weights)?;
    let terms = (2..=m).map(|n| {
        let nf = n as f64;
        (MultiIndex::unit(n - 1, 2 * n as u32), 1.0 / (nf.sqrt() * nf.ln()))
    });
    ChaosPoly::from_terms(&space, terms)
}

/// Partial sums of `E||∇a_m||^2` in the H norm and in the weighted norm with
/// `q_n = weight(n)` (1-based `n`), tabulated at 1-2-5 checkpoints and `m_max`.
pub fn hermite_counterexample_demo(
    m_max: usize,
    weight: impl Fn(usize) -> f64,
) -> Result<CounterexampleTable> {
    if m_max < 2 {
        return Err(Error::InvalidArgument("m_max must be at least 2".into()));
    }
    let mut checkpoints = Vec::new();
    let mut decade = 1usize;
    while decade <= m_max {
        for k in [1, 2, 5] {
            let c = k * decade;
            if (2..=m_max).contains(&c) {
                checkpoints.push(c);
            }
        }
        decade = decade.saturating_mul(10);
    }
    checkpoints.push(m_max);
    checkpoints.dedup();

    let mut rows = Vec::with_capacity(checkpoints.len());
    let (mut h, mut w) = (0.0_f64, 0.0_f64);
    let (mut dh, mut dw) = (0.0, 0.0);
    let mut next = checkpoints.iter().peekable();
    for n in 2..=m_max {
        let g2 = counterexample_gradient_coeff(n).powi(2);
        let q = weight(n);
        dh = g2;
        dw = q * q * g2;
        h += dh;
        w += dw;
        if next.peek() == Some(&&n) {
            rows.push(CounterexampleRow { m: n, h_norm_sq: h, weighted_norm_sq: w });
            next.next();
        }
    }
    Ok(CounterexampleTable { rows, weighted_tail_increment: dw, h_tail_increment: dh })
}
