//! Flow maps `T_{s,t}` of a vector field and the Radon–Nikodym density
//! `Λ_{s,t} = dT*_{s,t}μ / dμ` of the transported Gaussian measure.
//!
//! The density is computed in log space along the backward flow,
//! `log Λ_{s,t}(y) = ∫_s^t δv_r(T_{t,r} y) dr`, by appending the running
//! integral to the ODE state. Registry fields additionally admit the
//! explicit change-of-variables formula `φ(T⁻¹y) |det ∂T⁻¹(y)| / φ(y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{ClosedForm, VectorField};
use super::solver::{integrate, Solver, SolverStats};
use crate::error::{Error, Result};
use crate::montecarlo::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowOptions {
    #[serde(default)]
    pub solver: Solver,
    /// Number of equal intervals of the output time grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_grid() -> usize {
    10
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { solver: Solver::default(), grid: default_grid() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    DivergenceIntegral,
    AnalyticChangeOfVariables,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub index: usize,
    pub message: String,
}

/// Output of [`integrate_flow`].
#[derive(Debug, Clone, Serialize)]
pub struct FlowResult {
    pub s: f64,
    pub t: f64,
    pub times: Vec<f64>,
    pub sample_points: Vec<Vec<f64>>,
    /// Path of each sample on `times`; empty for failed samples.
    pub trajectories: Vec<Vec<Vec<f64>>>,
    /// `log Λ_{s,t}` at each sample point (NaN where it failed).
    pub log_density: Option<Vec<f64>>,
    pub failures: Vec<SampleFailure>,
    pub stats: SolverStats,
    pub solver: Solver,
}

impl FlowResult {
    pub fn endpoint(&self, i: usize) -> Option<&[f64]> {
        self.trajectories[i].last().map(Vec::as_slice)
    }

    pub fn density(&self, i: usize) -> Option<f64> {
        self.log_density.as_ref().map(|l| l[i].exp()).filter(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.sample_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_points.is_empty()
    }
}

pub fn time_grid(s: f64, t: f64, intervals: usize) -> Vec<f64> {
    let n = intervals.max(1);
    (0..=n).map(|k| if k == n { t } else { s + (t - s) * k as f64 / n as f64 }).collect()
}

/// Solves `x' = v_r(x)` from `times[0]` through `times`.
pub fn flow_path(field: &VectorField, x0: &[f64], times: &[f64], solver: Solver) -> Result<(Vec<Vec<f64>>, SolverStats)> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), found: x0.len() });
    }
    let rhs = |r: f64, y: &[f64], dy: &mut [f64]| field.eval(r, y, dy);
    integrate(&rhs, x0, times, solver)
}

/// `T_{s,t}(x)`.
pub fn flow_map(field: &VectorField, s: f64, t: f64, x: &[f64], solver: Solver) -> Result<Vec<f64>> {
    let (mut path, _) = flow_path(field, x, &[s, t], solver)?;
    Ok(path.pop().expect("two output times"))
}

/// Integrates every sample; per-sample solver failures are recorded, not fatal.
pub fn integrate_flow(
    field: &VectorField,
    s: f64,
    t: f64,
    x0: &[Vec<f64>],
    opts: FlowOptions,
    with_density: bool,
) -> Result<FlowResult> {
    field.check_interval(s, t)?;
    opts.solver.validate()?;
    if let Some(bad) = x0.iter().find(|x| x.len() != field.dim()) {
        return Err(Error::DimensionMismatch { expected: field.dim(), found: bad.len() });
    }
    let times = time_grid(s, t, opts.grid);
    let paths: Vec<Result<(Vec<Vec<f64>>, SolverStats)>> =
        x0.par_iter().map(|x| flow_path(field, x, &times, opts.solver)).collect();
    let mut trajectories = Vec::with_capacity(x0.len());
    let mut failures = Vec::new();
    let mut stats = SolverStats::default();
    for (i, r) in paths.into_iter().enumerate() {
        match r {
            Ok((p, st)) => {
                stats.merge(&st);
                trajectories.push(p);
            }
            Err(e) => {
                failures.push(SampleFailure { index: i, message: e.to_string() });
                trajectories.push(Vec::new());
            }
        }
    }
    let log_density = if with_density {
        let d = density_along_flow(field, s, t, x0, DensityMode::DivergenceIntegral, opts.solver)?;
        for (i, r) in d.iter().enumerate() {
            if let Err(e) = r {
                if !failures.iter().any(|f| f.index == i) {
                    failures.push(SampleFailure { index: i, message: format!("density: {e}") });
                }
            }
        }
        Some(d.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect())
    } else {
        None
    };
    failures.sort_by_key(|f| f.index);
    Ok(FlowResult {
        s,
        t,
        times,
        sample_points: x0.to_vec(),
        trajectories,
        log_density,
        failures,
        stats,
        solver: opts.solver,
    })
}

/// `log Λ_{s,t}(y)` by integrating `δv` along the backward flow from `(y, t)`.
pub fn log_density_divergence(field: &VectorField, s: f64, t: f64, y: &[f64], solver: Solver) -> Result<f64> {
    let n = field.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if s == t {
        return Ok(0.0);
    }
    let rhs = |r: f64, state: &[f64], d: &mut [f64]| -> Result<()> {
        field.eval(r, &state[..n], &mut d[..n])?;
        d[n] = field.divergence_at(r, &state[..n])?;
        Ok(())
    };
    let mut y0 = y.to_vec();
    y0.push(0.0);
    let (out, _) = integrate(&rhs, &y0, &[t, s], solver)?;
    // the running integral went from t down to s
    Ok(-out[1][n])
}

/// `log Λ_{s,t}(y)` from the explicit inverse map of a registry field.
pub fn log_density_analytic(field: &VectorField, s: f64, t: f64, y: &[f64]) -> Result<f64> {
    let tau = t - s;
    let gauss_ratio = |x: &[f64]| -> f64 {
        0.5 * (y.iter().map(|v| v * v).sum::<f64>() - x.iter().map(|v| v * v).sum::<f64>())
    };
    match field {
        VectorField::ClosedForm(ClosedForm::Zero { .. } | ClosedForm::Rotation { .. }) => Ok(0.0),
        VectorField::ClosedForm(ClosedForm::Tanh { rate, .. }) => {
            // sinh x(τ) = e^{rate τ} sinh x(0)
            let shrink = (-rate * tau).exp();
            let mut logjac = 0.0;
            let x: Vec<f64> = y
                .iter()
                .map(|&yi| {
                    let xi = (shrink * yi.sinh()).asinh();
                    logjac += shrink.ln() + yi.cosh().ln() - xi.cosh().ln();
                    xi
                })
                .collect();
            Ok(gauss_ratio(&x) + logjac)
        }
        VectorField::ClosedForm(ClosedForm::Linear { matrix }) => {
            let n = matrix.len();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
            let inv = (m.clone() * (-tau)).exp();
            let x = inv * nalgebra::DVector::from_column_slice(y);
            Ok(gauss_ratio(x.as_slice()) - tau * m.trace())
        }
        _ => Err(Error::InvalidArgument("no analytic change of variables for this field".into())),
    }
}

/// `Λ_{s,t}` at each endpoint, by the requested route.
pub fn density_along_flow(
    field: &VectorField,
    s: f64,
    t: f64,
    endpoints: &[Vec<f64>],
    mode: DensityMode,
    solver: Solver,
) -> Result<Vec<Result<f64>>> {
    field.check_interval(s, t)?;
    if mode == DensityMode::AnalyticChangeOfVariables {
        // surface the missing-formula error once instead of per sample
        if let Some(y) = endpoints.first() {
            log_density_analytic(field, s, t, y)?;
        }
    }
    Ok(endpoints
        .par_iter()
        .map(|y| match mode {
            DensityMode::DivergenceIntegral => log_density_divergence(field, s, t, y, solver),
            DensityMode::AnalyticChangeOfVariables => log_density_analytic(field, s, t, y),
        })
        .collect())
}

fn deviation(field: &VectorField, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    field.weighted_norm(&d)
}

#[derive(Debug, Clone, Serialize)]
pub struct LawResidual {
    pub max_deviation: f64,
    pub failures: Vec<SampleFailure>,
}

fn collect_residual(field: &VectorField, pairs: Vec<Result<(Vec<f64>, Vec<f64>)>>) -> LawResidual {
    let mut max_deviation = 0.0_f64;
    let mut failures = Vec::new();
    for (i, r) in pairs.into_iter().enumerate() {
        match r {
            Ok((a, b)) => max_deviation = max_deviation.max(deviation(field, &a, &b)),
            Err(e) => failures.push(SampleFailure { index: i, message: e.to_string() }),
        }
    }
    LawResidual { max_deviation, failures }
}

/// `sup_x ||T_{r,t} x - T_{s,t}(T_{r,s} x)||_W`.
pub fn flow_law_residual(
    field: &VectorField,
    r: f64,
    s: f64,
    t: f64,
    batch: &[Vec<f64>],
    solver: Solver,
) -> Result<LawResidual> {
    for (a, b) in [(r, t), (r, s), (s, t)] {
        field.check_interval(a, b)?;
    }
    let pairs = batch
        .par_iter()
        .map(|x| {
            let direct = flow_map(field, r, t, x, solver)?;
            let mid = flow_map(field, r, s, x, solver)?;
            Ok((direct, flow_map(field, s, t, &mid, solver)?))
        })
        .collect();
    Ok(collect_residual(field, pairs))
}

/// `sup_x ||T_a(T_b x) - T_{a+b} x||_W` for an autonomous field.
pub fn group_law_residual(field: &VectorField, a: f64, b: f64, batch: &[Vec<f64>], solver: Solver) -> Result<LawResidual> {
    if !field.is_autonomous() {
        return Err(Error::InvalidArgument("group law needs an autonomous field".into()));
    }
    let pairs = batch
        .par_iter()
        .map(|x| {
            let inner = flow_map(field, 0.0, b, x, solver)?;
            let composed = flow_map(field, 0.0, a, &inner, solver)?;
            Ok((composed, flow_map(field, 0.0, a + b, x, solver)?))
        })
        .collect();
    Ok(collect_residual(field, pairs))
}

/// `sup_x ||T_{t,s}(T_{s,t} x) - x||_W`.
pub fn reversibility_residual(field: &VectorField, s: f64, t: f64, batch: &[Vec<f64>], solver: Solver) -> Result<LawResidual> {
    field.check_interval(s, t)?;
    let pairs = batch
        .par_iter()
        .map(|x| {
            let fw = flow_map(field, s, t, x, solver)?;
            Ok((flow_map(field, t, s, &fw, solver)?, x.clone()))
        })
        .collect();
    Ok(collect_residual(field, pairs))
}

#[derive(Debug, Clone, Serialize)]
pub struct GalerkinRow {
    pub m: usize,
    /// `E sup_t ||T^{(m)}_{s,t} - T_{s,t}||_W` over the batch.
    pub flow_deviation: Estimate,
    /// `(∫ E||v^{(m)}_r - v_r||_W^p dr)^{1/p}`.
    pub field_deviation: f64,
    /// `flow_deviation / field_deviation` (0 when both vanish).
    pub ratio: f64,
}

/// Compares Galerkin-truncated flows against the full flow.
pub fn galerkin_convergence(
    field: &VectorField,
    levels: &[usize],
    s: f64,
    t: f64,
    batch: &[Vec<f64>],
    opts: FlowOptions,
    p: f64,
) -> Result<Vec<GalerkinRow>> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent must be >= 1, got {p}")));
    }
    let full = integrate_flow(field, s, t, batch, opts, false)?;
    if !full.failures.is_empty() {
        return Err(Error::Solver(format!("{} reference trajectories failed", full.failures.len())));
    }
    let times = full.times.clone();
    let dim = field.dim();
    levels
        .iter()
        .map(|&m| {
            let trunc = field.galerkin_truncate(m)?;
            let flow = integrate_flow(&trunc, s, t, batch, opts, false)?;
            let sups: Vec<f64> = (0..batch.len())
                .map(|i| {
                    if flow.trajectories[i].is_empty() {
                        return f64::NAN;
                    }
                    flow.trajectories[i]
                        .iter()
                        .zip(&full.trajectories[i])
                        .map(|(a, b)| deviation(field, a, b))
                        .fold(0.0, f64::max)
                })
                .collect();
            let flow_deviation = Estimate::from_values(&sups, None);

            let per_time: Vec<f64> = times
                .iter()
                .map(|&r| {
                    let vals: Vec<f64> = batch
                        .par_iter()
                        .map(|x| {
                            let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
                            trunc.eval(r, x, &mut a)?;
                            field.eval(r, x, &mut b)?;
                            Ok(deviation(field, &a, &b).powf(p))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            let integral: f64 = times
                .windows(2)
                .zip(per_time.windows(2))
                .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]).abs() * (fw[0] + fw[1]))
                .sum();
            let field_deviation = integral.powf(1.0 / p);
            let ratio = if field_deviation > 0.0 { flow_deviation.mean / field_deviation } else { 0.0 };
            Ok(GalerkinRow { m, flow_deviation, field_deviation, ratio })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{ChaosField, ChaosPoly};
    use crate::montecarlo::sample_gaussian;
    use crate::space::GaussianSpace;

    fn rotation() -> VectorField {
        VectorField::closed_form(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) }).unwrap()
    }

    fn tanh1() -> VectorField {
        VectorField::closed_form(ClosedForm::Tanh { dim: 1, rate: 1.0 }).unwrap()
    }

    #[test]
    fn rotation_flow_matches_closed_form() {
        let x = [0.8, -0.3];
        let t = 1.7;
        let y = flow_map(&rotation(), 0.0, t, &x, Solver::default()).unwrap();
        let (c, s) = (t.cos(), t.sin());
        assert!((y[0] - (c * x[0] - s * x[1])).abs() < 1e-8);
        assert!((y[1] - (s * x[0] + c * x[1])).abs() < 1e-8);
    }

    #[test]
    fn zero_field_is_identity() {
        let f = VectorField::closed_form(ClosedForm::Zero { dim: 3 }).unwrap();
        let batch = sample_gaussian(3, 5, 1).unwrap();
        let r = integrate_flow(&f, 0.0, 2.0, &batch, FlowOptions::default(), true).unwrap();
        for (i, x) in batch.iter().enumerate() {
            assert_eq!(r.endpoint(i).unwrap(), x.as_slice());
            assert_eq!(r.density(i), Some(1.0));
        }
        assert_eq!(flow_law_residual(&f, 0.0, 1.0, 2.0, &batch, Solver::default()).unwrap().max_deviation, 0.0);
    }

    #[test]
    fn tanh_flow_closed_form() {
        let x0 = 0.4_f64;
        let t = 1.0;
        let y = flow_map(&tanh1(), 0.0, t, &[x0], Solver::default()).unwrap();
        let expect = (t.exp() * x0.sinh()).asinh();
        assert!((y[0] - expect).abs() < 1e-8);
    }

    #[test]
    fn tanh_density_two_routes() {
        let f = tanh1();
        let y = [0.5];
        let a = log_density_divergence(&f, 0.0, 1.0, &y, Solver::default()).unwrap();
        let b = log_density_analytic(&f, 0.0, 1.0, &y).unwrap();
        assert!((a.exp() - b.exp()).abs() < 1e-6, "{a} vs {b}");
        // explicit value: x = asinh(e^{-1} sinh 0.5)
        let x = ((-1f64).exp() * 0.5f64.sinh()).asinh();
        let expect = (0.5 * (0.25 - x * x)) + (-1.0) + 0.5f64.cosh().ln() - x.cosh().ln();
        assert!((b - expect).abs() < 1e-14);
    }

    #[test]
    fn linear_density_two_routes() {
        let f = VectorField::closed_form(ClosedForm::Linear { matrix: vec![vec![0.2, -0.5], vec![0.3, -0.1]] }).unwrap();
        let y = [0.7, -1.1];
        let a = log_density_divergence(&f, 0.0, 0.8, &y, Solver::default()).unwrap();
        let b = log_density_analytic(&f, 0.0, 0.8, &y).unwrap();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn rotation_density_is_one() {
        let batch = sample_gaussian(2, 20, 3).unwrap();
        let d = density_along_flow(&rotation(), 0.0, 2.0, &batch, DensityMode::DivergenceIntegral, Solver::default()).unwrap();
        assert!(d.iter().all(|l| l.as_ref().unwrap().abs() < 1e-12));
    }

    #[test]
    fn missing_analytic_route() {
        let s = GaussianSpace::new(1, 2).unwrap();
        let f = VectorField::chaos(ChaosField::new(&s, vec![ChaosPoly::coordinate(&s, 0)]).unwrap()).unwrap();
        assert!(density_along_flow(&f, 0.0, 1.0, &[vec![0.1]], DensityMode::AnalyticChangeOfVariables, Solver::default()).is_err());
    }

    #[test]
    fn laws_hold_for_rotation() {
        let batch = sample_gaussian(2, 20, 4).unwrap();
        let tol = Solver::default().tolerance();
        let q = std::f64::consts::FRAC_PI_4;
        let r = flow_law_residual(&rotation(), 0.0, q, 2.0 * q, &batch, Solver::default()).unwrap();
        assert!(r.max_deviation <= 10.0 * tol * 10.0, "{}", r.max_deviation);
        let g = group_law_residual(&rotation(), 0.3, 0.9, &batch, Solver::default()).unwrap();
        assert!(g.max_deviation < 1e-7);
        let b = reversibility_residual(&rotation(), 0.0, 2.0, &batch, Solver::default()).unwrap();
        assert!(b.max_deviation < 1e-7);
    }

    #[test]
    fn blowup_is_reported_per_sample() {
        let f = VectorField::closed_form(ClosedForm::Quadratic { dim: 1 }).unwrap();
        let batch = vec![vec![-1.0], vec![2.0]];
        let r = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].index, 1);
        assert!((r.endpoint(0).unwrap()[0] + 0.5).abs() < 1e-8);
    }

    fn chaos_field(comps: Vec<ChaosPoly>) -> VectorField {
        let s = comps[0].space().clone();
        VectorField::chaos(ChaosField::new(&s, comps).unwrap()).unwrap()
    }

    #[test]
    fn galerkin_full_level_is_exact() {
        let s = GaussianSpace::with_weights(3, 2, vec![1.0, 0.5, 0.25]).unwrap();
        let mut rng = crate::montecarlo::stream_rng(7, 0);
        let f = VectorField::chaos(crate::random::random_adapted_field(&mut rng, &s, 3, 0.3).unwrap()).unwrap();
        let batch = sample_gaussian(3, 20, 1).unwrap();
        let rows = galerkin_convergence(&f, &[3], 0.0, 1.0, &batch, FlowOptions::default(), 2.0).unwrap();
        assert_eq!(rows[0].flow_deviation.mean, 0.0);
        assert_eq!(rows[0].field_deviation, 0.0);
    }

    #[test]
    fn galerkin_rotation_support() {
        let s = GaussianSpace::new(3, 2).unwrap();
        let f = chaos_field(vec![ChaosPoly::coordinate(&s, 1).scale(-1.0), ChaosPoly::coordinate(&s, 0), ChaosPoly::zero(&s)]);
        let batch = sample_gaussian(3, 20, 2).unwrap();
        let rows = galerkin_convergence(&f, &[2, 3], 0.0, 1.0, &batch, FlowOptions::default(), 2.0).unwrap();
        assert!(rows.iter().all(|r| r.flow_deviation.mean == 0.0 && r.field_deviation == 0.0));
    }

    #[test]
    fn galerkin_product_field() {
        let s = GaussianSpace::new(2, 2).unwrap();
        let x1 = ChaosPoly::coordinate(&s, 0);
        let x12 = crate::chaos::multiply(&x1, &ChaosPoly::coordinate(&s, 1), Default::default()).unwrap();
        let f = chaos_field(vec![x1.clone(), x12]);
        let t1 = f.galerkin_truncate(1).unwrap();
        let VectorField::Chaos(p) = &t1 else { unreachable!() };
        assert!(p.fields()[0].component(0).approx_eq(&x1, 0.0) && p.fields()[0].component(1).is_zero());
        let batch = sample_gaussian(2, 200, 3).unwrap();
        let rows = galerkin_convergence(&f, &[1], 0.0, 0.5, &batch, FlowOptions::default(), 2.0).unwrap();
        // direct simulation: coordinate 2 moves as x2 exp(x1 (e^t - 1)) in the full flow, stays put in the truncated one
        let direct: f64 = batch
            .iter()
            .map(|x| {
                (0..=10)
                    .map(|k| {
                        let t = 0.05 * k as f64;
                        (x[1] * ((x[0] * (t.exp() - 1.0)).exp() - 1.0)).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / batch.len() as f64;
        assert!((rows[0].flow_deviation.mean - direct).abs() < 1e-6, "{} vs {direct}", rows[0].flow_deviation.mean);
        assert!(rows[0].ratio.is_finite() && rows[0].ratio > 0.0);
    }

    #[test]
    fn galerkin_monotone_on_seeded_field() {
        let s = GaussianSpace::new(4, 2).unwrap();
        let mut rng = crate::montecarlo::stream_rng(11, 0);
        let f = VectorField::chaos(crate::random::random_adapted_field(&mut rng, &s, 3, 0.4).unwrap()).unwrap();
        let batch = sample_gaussian(4, 200, 5).unwrap();
        let rows = galerkin_convergence(&f, &[1, 2, 3], 0.0, 1.0, &batch, FlowOptions::default(), 2.0).unwrap();
        assert!(rows.windows(2).all(|w| w[1].flow_deviation.mean < w[0].flow_deviation.mean), "{rows:?}");
        assert!(rows[2].flow_deviation.mean < 1e-4);
    }
}
