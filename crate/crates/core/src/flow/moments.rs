//! Exponential-moment diagnostics for flow existence, the resulting
//! `L^p` bound on the flow density, and the weak derivative of `Λ_{s,s+h}`
//! at `h = 0`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::engine::{log_density_analytic, log_density_divergence, time_grid, DensityMode, FlowOptions};
use super::field::VectorField;
use crate::error::{Error, Result};
use crate::montecarlo::{gaussian_sample, Estimate};

/// Share of the total a single sample may carry before the estimate is
/// flagged as tail-dominated.
const MAX_SAMPLE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct MomentDiagnostics {
    /// `E ∫ exp θ(||∇u_t|| + |δu_t|) dt`.
    pub gamma_h: Estimate,
    /// `sup_n E ∫ exp θ||π_n ∇B_t||_{L(W)} dt`.
    pub gamma_w: Estimate,
    /// Level `n` attaining the supremum.
    pub gamma_w_level: usize,
    pub theta: f64,
    pub interval: (f64, f64),
    /// All pointwise values finite.
    pub finite: bool,
    /// Half-batch and full-batch estimates agree within 4 SE and no sample dominates.
    pub stable: bool,
}

fn op_norm(m: DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

/// `||QMQ⁻¹||₂` with `Q = diag(weights)`.
fn weighted_op_norm(jac: &[f64], n: usize, weights: Option<&[f64]>, level: usize) -> f64 {
    let q = |i: usize| weights.map_or(1.0, |w| w[i]);
    op_norm(DMatrix::from_fn(n, n, |i, j| if i < level { q(i) * jac[i * n + j] / q(j) } else { 0.0 }))
}

fn trapezoid(times: &[f64], vals: &[f64]) -> f64 {
    times.windows(2).zip(vals.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]).abs() * (v[0] + v[1])).sum()
}

fn stability(values: &[f64]) -> bool {
    let half = Estimate::from_values(&values[..values.len() / 2], None);
    let full = Estimate::from_values(values, None);
    let total: f64 = values.iter().sum();
    let share = values.iter().fold(0.0_f64, |a, v| a.max(*v)) / total;
    let se = half.std_error.max(full.std_error);
    (half.mean - full.mean).abs() <= 4.0 * se + 1e-12 * full.mean.abs() && (total == 0.0 || share < MAX_SAMPLE_SHARE || values.len() < 40)
}

/// Monte Carlo estimates of `Γ_H(θ)` and `Γ_W(θ)` for a supplied decomposition
/// `v = u + B` over `interval`. `b = None` means `B = 0`.
pub fn exp_moment_diagnostics(
    u: &VectorField,
    b: Option<&VectorField>,
    theta: f64,
    interval: (f64, f64),
    n: usize,
    seed: u64,
    grid: usize,
) -> Result<MomentDiagnostics> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let dim = u.dim();
    if let Some(b) = b {
        if b.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: b.dim() });
        }
        b.check_interval(interval.0, interval.1)?;
    }
    u.check_interval(interval.0, interval.1)?;
    let times = time_grid(interval.0, interval.1, grid);

    let per_sample: Vec<(f64, Vec<f64>)> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let x = gaussian_sample(dim, seed, k);
            let mut h_vals = Vec::with_capacity(times.len());
            let mut w_vals = vec![Vec::with_capacity(times.len()); dim];
            for &r in &times {
                let jac = u.jacobian_at(r, &x)?;
                let div = u.divergence_at(r, &x)?;
                let nrm = op_norm(DMatrix::from_row_slice(dim, dim, &jac));
                h_vals.push((theta * (nrm + div.abs())).exp());
                let bj = match b {
                    Some(b) => b.jacobian_at(r, &x)?,
                    None => vec![0.0; dim * dim],
                };
                let weights = b.and_then(|b| b.weights()).or(u.weights());
                for (lvl, vals) in w_vals.iter_mut().enumerate() {
                    vals.push((theta * weighted_op_norm(&bj, dim, weights, lvl + 1)).exp());
                }
            }
            Ok((trapezoid(&times, &h_vals), w_vals.iter().map(|v| trapezoid(&times, v)).collect()))
        })
        .collect::<Result<Vec<_>>>()?;

    let h_values: Vec<f64> = per_sample.iter().map(|p| p.0).collect();
    let gamma_h = Estimate::from_values(&h_values, Some(seed));
    let mut best: Option<(usize, Estimate, Vec<f64>)> = None;
    for lvl in 0..dim {
        let vals: Vec<f64> = per_sample.iter().map(|p| p.1[lvl]).collect();
        let est = Estimate::from_values(&vals, Some(seed));
        if best.as_ref().is_none_or(|b| est.mean > b.1.mean) {
            best = Some((lvl + 1, est, vals));
        }
    }
    let (gamma_w_level, gamma_w, w_values) = best.expect("dim >= 1");
    let finite = h_values.iter().chain(&w_values).all(|v| v.is_finite());
    let stable = finite && stability(&h_values) && stability(&w_values);
    Ok(MomentDiagnostics { gamma_h, gamma_w, gamma_w_level, theta, interval, finite, stable })
}

#[derive(Debug, Clone, Serialize)]
pub struct LpCheck {
    pub p: f64,
    /// `E Λ_{s,t}^p`.
    pub estimate: Estimate,
    /// `e^{1/p} (1 + (2p-2)/θ · sqrt(Γ_H Γ_W))`.
    pub bound: f64,
    pub moments: MomentDiagnostics,
    /// `estimate <= bound + 4 SE`.
    pub pass: bool,
}

/// Compares `E Λ^p` with the exponential-moment bound, inside the window
/// `|t - s| < θ/(2p)`.
#[allow(clippy::too_many_arguments)]
pub fn density_lp_check(
    field: &VectorField,
    decomposition: Option<(&VectorField, Option<&VectorField>)>,
    s: f64,
    t: f64,
    p: f64,
    theta: f64,
    n: usize,
    seed: u64,
    opts: FlowOptions,
) -> Result<LpCheck> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    if !((t - s).abs() < theta / (2.0 * p)) {
        return Err(Error::Domain(format!("|t - s| = {} outside the window θ/(2p) = {}", (t - s).abs(), theta / (2.0 * p))));
    }
    let (u, b) = decomposition.unwrap_or((field, None));
    let moments = exp_moment_diagnostics(u, b, theta, (s.min(t), s.max(t)), n, seed, opts.grid)?;
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let y = gaussian_sample(field.dim(), seed ^ 0x9e37_79b9_7f4a_7c15, k);
            log_density_divergence(field, s, t, &y, opts.solver).map_or(f64::NAN, |l| (p * l).exp())
        })
        .collect();
    let estimate = Estimate::from_values(&values, Some(seed));
    let bound = (1.0 / p).exp() * (1.0 + (2.0 * p - 2.0) / theta * (moments.gamma_h.mean * moments.gamma_w.mean).sqrt());
    let pass = estimate.valid && estimate.mean <= bound + 4.0 * estimate.std_error;
    Ok(LpCheck { p, estimate, bound, moments, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub hs: Vec<f64>,
    /// `E[Φ (Λ_{s,s+h} - 1)/h]` per step.
    pub quotients: Vec<f64>,
    /// `E[Φ δv_s]` on the same weighted batch.
    pub target: f64,
    pub errors: Vec<f64>,
    /// Richardson extrapolation from the two smallest steps.
    pub extrapolated: f64,
    /// Least-squares slope of `log error` against `log h`; `None` when the
    /// errors vanish to roundoff.
    pub rate: Option<f64>,
}

/// Weak difference quotient of `Λ_{s,s+h}` against a test functional.
///
/// `points`/`weights` describe the expectation (a quadrature rule or an
/// equally weighted Monte Carlo batch).
#[allow(clippy::too_many_arguments)]
pub fn density_derivative_check(
    field: &VectorField,
    s: f64,
    phi: impl Fn(&[f64]) -> f64 + Sync,
    points: &[Vec<f64>],
    weights: &[f64],
    hs: &[f64],
    mode: DensityMode,
    opts: FlowOptions,
) -> Result<DerivativeCheck> {
    if points.len() != weights.len() || points.is_empty() {
        return Err(Error::InvalidArgument("points and weights must be nonempty and of equal length".into()));
    }
    if hs.iter().any(|h| !(*h > 0.0)) || hs.is_empty() {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let phis: Vec<f64> = points.par_iter().map(|x| phi(x)).collect();
    let divs = points.par_iter().map(|x| field.divergence_at(s, x)).collect::<Result<Vec<f64>>>()?;
    let target: f64 = (0..points.len()).map(|j| weights[j] * phis[j] * divs[j]).sum();

    let quotients = hs
        .iter()
        .map(|&h| {
            field.check_interval(s, s + h)?;
            let logs = points
                .par_iter()
                .map(|y| match mode {
                    DensityMode::DivergenceIntegral => log_density_divergence(field, s, s + h, y, opts.solver),
                    DensityMode::AnalyticChangeOfVariables => log_density_analytic(field, s, s + h, y),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((0..points.len()).map(|j| weights[j] * phis[j] * logs[j].exp_m1()).sum::<f64>() / h)
        })
        .collect::<Result<Vec<f64>>>()?;
    let errors: Vec<f64> = quotients.iter().map(|q| (q - target).abs()).collect();

    let mut order: Vec<usize> = (0..hs.len()).collect();
    order.sort_by(|&a, &b| hs[a].total_cmp(&hs[b]));
    let extrapolated = if hs.len() >= 2 {
        let (i, j) = (order[0], order[1]);
        // first-order Richardson: q(h1) + h1 (q(h1) - q(h2)) / (h2 - h1)
        quotients[i] + hs[i] * (quotients[i] - quotients[j]) / (hs[j] - hs[i])
    } else {
        quotients[0]
    };

    let scale = target.abs().max(1.0);
    let rate = if hs.len() >= 2 && errors.iter().all(|e| *e > 1e-12 * scale) {
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(DerivativeCheck { hs: hs.to_vec(), quotients, target, errors, extrapolated, rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::field::ClosedForm;
    use crate::quadrature::gauss_hermite;

    fn cf(c: ClosedForm) -> VectorField {
        VectorField::closed_form(c).unwrap()
    }

    #[test]
    fn zero_field_moments() {
        let z = cf(ClosedForm::Zero { dim: 3 });
        let d = exp_moment_diagnostics(&z, None, 0.7, (0.5, 2.0), 50, 1, 8).unwrap();
        assert!((d.gamma_h.mean - 1.5).abs() < 1e-14 && d.gamma_h.std_error == 0.0);
        assert!((d.gamma_w.mean - 1.5).abs() < 1e-14);
        assert!(d.stable && d.finite);
    }

    #[test]
    fn constant_field_gamma_h() {
        // u = h: ∇u = 0, δu = <h, x> ~ N(0, |h|²)
        let h = [0.6, -0.8];
        let s = crate::space::GaussianSpace::new(2, 2).unwrap();
        let u = VectorField::chaos(crate::chaos::ChaosField::constant(&s, &h).unwrap()).unwrap();
        let theta = 0.5;
        let d = exp_moment_diagnostics(&u, None, theta, (0.0, 2.0), 40_000, 5, 2).unwrap();
        // E exp(θ|Z|), |h| = 1, by quadrature of the half-line density
        let rule = crate::quadrature::composite_legendre(0.0, 40.0, 400, 8);
        let fine = 2.0 * rule.integrate(|x| (theta * x).exp() * (-0.5 * x * x).exp()) / (2.0 * std::f64::consts::PI).sqrt();
        assert!(d.gamma_h.within(2.0 * fine, 4.0, 0.0), "{:?} vs {}", d.gamma_h, 2.0 * fine);
    }

    #[test]
    fn rotation_moments_stable() {
        let r = cf(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) });
        let a = exp_moment_diagnostics(&r, Some(&r), 0.1, (0.0, 1.0), 2000, 3, 4).unwrap();
        let b = exp_moment_diagnostics(&r, Some(&r), 0.1, (0.0, 1.0), 4000, 3, 4).unwrap();
        assert!(a.stable && b.stable);
        // ||∇B|| = 1 and δB = 0 everywhere
        assert!((b.gamma_h.mean - 0.1f64.exp()).abs() < 1e-12);
        assert!((b.gamma_w.mean - a.gamma_w.mean).abs() < 1e-12);
    }

    #[test]
    fn lp_window_enforced() {
        let f = cf(ClosedForm::Tanh { dim: 1, rate: 1.0 });
        assert!(density_lp_check(&f, None, 0.0, 0.3, 2.0, 1.0, 100, 1, FlowOptions::default()).is_err());
    }

    #[test]
    fn lp_bound_trivial_fields() {
        for f in [cf(ClosedForm::Zero { dim: 2 }), cf(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) })] {
            let c = density_lp_check(&f, None, 0.0, 0.2, 2.0, 1.0, 200, 2, FlowOptions::default()).unwrap();
            assert!((c.estimate.mean - 1.0).abs() < 1e-7);
            assert!(c.pass);
        }
    }

    #[test]
    fn lp_bound_tanh() {
        let f = cf(ClosedForm::Tanh { dim: 1, rate: 1.0 });
        let c = density_lp_check(&f, None, 0.0, 0.2, 2.0, 1.0, 5000, 9, FlowOptions::default()).unwrap();
        assert!(c.pass && c.estimate.mean > 1.0, "{c:?}");
    }

    fn gh_batch(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let r = gauss_hermite(n);
        (r.nodes.iter().map(|x| vec![*x]).collect(), r.weights.clone())
    }

    #[test]
    fn derivative_zero_and_rotation() {
        let (pts, w) = gh_batch(20);
        let z = cf(ClosedForm::Zero { dim: 1 });
        let d = density_derivative_check(&z, 0.0, |x| x[0], &pts, &w, &[0.1, 0.05], DensityMode::DivergenceIntegral, FlowOptions::default()).unwrap();
        assert!(d.quotients.iter().all(|q| *q == 0.0) && d.rate.is_none());
        let r = cf(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) });
        let pts2: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0], 0.3]).collect();
        let d = density_derivative_check(&r, 0.0, |x| x[0] * x[1], &pts2, &w, &[0.1, 0.05], DensityMode::DivergenceIntegral, FlowOptions::default()).unwrap();
        assert!(d.quotients.iter().all(|q| q.abs() < 1e-7));
    }

    #[test]
    fn derivative_tanh_x1() {
        let (pts, w) = gh_batch(60);
        let f = cf(ClosedForm::Tanh { dim: 1, rate: 1.0 });
        let d = density_derivative_check(&f, 0.0, |x| x[0], &pts, &w, &[0.1, 0.05], DensityMode::AnalyticChangeOfVariables, FlowOptions::default()).unwrap();
        let oracle = gauss_hermite(60).integrate(|x| x * (x * x.tanh() - 1.0 / x.cosh().powi(2)));
        assert!((d.target - oracle).abs() < 1e-12);
        assert!((d.extrapolated - oracle).abs() < 1e-6);
    }

    #[test]
    fn derivative_tanh_second_hermite_rate() {
        let (pts, w) = gh_batch(80);
        let f = cf(ClosedForm::Tanh { dim: 1, rate: 1.0 });
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let phi = |x: &[f64]| (x[0] * x[0] - 1.0) / 2f64.sqrt();
        let d = density_derivative_check(&f, 0.0, phi, &pts, &w, &hs, DensityMode::AnalyticChangeOfVariables, FlowOptions::default()).unwrap();
        let oracle = gauss_hermite(80).integrate(|x| (x * x - 1.0) / 2f64.sqrt() * (x * x.tanh() - 1.0 / x.cosh().powi(2)));
        assert!((d.target - oracle).abs() < 1e-12);
        assert!(d.rate.unwrap() >= 0.9, "{d:?}");
        let dd = density_derivative_check(&f, 0.0, phi, &pts, &w, &hs, DensityMode::DivergenceIntegral, FlowOptions::default()).unwrap();
        assert!(dd.rate.unwrap() >= 0.9);
    }
}
