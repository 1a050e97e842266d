//! Adaptedness of fields and flows with respect to the leading-coordinate
//! filtration `Π^θ = projection onto the first ⌈θ·dim⌉ coordinates`.

use rayon::prelude::*;
use serde::Serialize;

use super::engine::{flow_path, FlowResult};
use super::field::VectorField;
use crate::error::{Error, Result};

/// Coordinates kept by `Π^θ`.
pub fn filtration_level(theta: f64, dim: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok(((theta * dim as f64).ceil() as usize).min(dim))
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaReport {
    pub theta: f64,
    pub level: usize,
    /// Components `< level` depend only on directions `< level`.
    pub field_pass: bool,
    /// Largest change of a coordinate `< level` of `T_{s,t}` after perturbing
    /// the start coordinates `>= level`.
    pub flow_sensitivity: f64,
    pub flow_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptednessReport {
    /// Component `i` depends only on directions `<= i`.
    pub lower_triangular: bool,
    /// `(component, direction)` pairs breaking the triangular pattern.
    pub violations: Vec<(usize, usize)>,
    pub per_theta: Vec<ThetaReport>,
    pub flow_tolerance: f64,
    pub pass: bool,
}

/// Size of the start-point perturbation used by the flow probe.
const PROBE: f64 = 0.5;

/// Whether component `i` of the field depends on direction `j`.
fn depends(field: &VectorField, probes: &[Vec<f64>], i: usize, j: usize) -> Result<bool> {
    match field {
        VectorField::Chaos(p) => Ok(p.fields().iter().any(|f| f.component(i).terms().any(|(a, _)| a.get(j) > 0))),
        VectorField::ClosedForm(_) => {
            let n = field.dim();
            let a = field.time_domain().0;
            let r = if a.is_finite() { a } else { 0.0 };
            for x in probes {
                let mut y = x.clone();
                y[j] += PROBE;
                let (mut vx, mut vy) = (vec![0.0; n], vec![0.0; n]);
                field.eval(r, x, &mut vx)?;
                field.eval(r, &y, &mut vy)?;
                if vx[i] != vy[i] {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

/// Field-level support test and flow-level sensitivity probe per `θ`.
pub fn adaptedness_check(field: &VectorField, flow: &FlowResult, thetas: &[f64]) -> Result<AdaptednessReport> {
    let n = field.dim();
    let probes: Vec<Vec<f64>> = flow.sample_points.iter().take(16).cloned().collect();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if depends(field, &probes, i, j)? {
                violations.push((i, j));
            }
        }
    }
    let flow_tolerance = 100.0 * flow.solver.tolerance();
    let times = &flow.times;
    let per_theta = thetas
        .iter()
        .map(|&theta| {
            let level = filtration_level(theta, n)?;
            let mut field_pass = true;
            for i in 0..level {
                for j in level..n {
                    field_pass &= !depends(field, &probes, i, j)?;
                }
            }
            let flow_sensitivity = if level == n {
                0.0
            } else {
                let devs = flow
                    .sample_points
                    .par_iter()
                    .zip(&flow.trajectories)
                    .filter(|(_, path)| !path.is_empty())
                    .map(|(x, path)| {
                        let mut y = x.clone();
                        for c in &mut y[level..] {
                            *c += PROBE;
                        }
                        let (moved, _) = flow_path(field, &y, times, flow.solver)?;
                        Ok(path
                            .iter()
                            .zip(&moved)
                            .flat_map(|(a, b)| (0..level).map(move |i| (a[i] - b[i]).abs()))
                            .fold(0.0, f64::max))
                    })
                    .collect::<Vec<Result<f64>>>();
                // a perturbed start may blow up where the original did not; that is influence too
                devs.into_iter().map(|d| d.unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
            };
            Ok(ThetaReport { theta, level, field_pass, flow_sensitivity, flow_pass: flow_sensitivity <= flow_tolerance })
        })
        .collect::<Result<Vec<_>>>()?;
    let lower_triangular = violations.is_empty();
    let pass = lower_triangular && per_theta.iter().all(|r| r.field_pass && r.flow_pass);
    Ok(AdaptednessReport { lower_triangular, violations, per_theta, flow_tolerance, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{multiply, ChaosField, ChaosPoly, TruncationPolicy};
    use crate::flow::engine::{integrate_flow, FlowOptions};
    use crate::flow::field::ClosedForm;
    use crate::montecarlo::sample_gaussian;
    use crate::space::GaussianSpace;

    fn chaos2(v1: ChaosPoly, v2: ChaosPoly) -> VectorField {
        let s = v1.space().clone();
        VectorField::chaos(ChaosField::new(&s, vec![v1, v2]).unwrap()).unwrap()
    }

    #[test]
    fn triangular_field_is_adapted() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let x1 = ChaosPoly::coordinate(&s, 0);
        let x2 = ChaosPoly::coordinate(&s, 1);
        let f = chaos2(x1.scale(0.5), multiply(&x1, &x2, TruncationPolicy::ErrorOnOverflow).unwrap().scale(0.3));
        let batch = sample_gaussian(2, 30, 1).unwrap();
        let flow = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        let r = adaptedness_check(&f, &flow, &[0.5, 1.0]).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.per_theta[0].level, 1);
        assert!(r.per_theta[0].flow_sensitivity <= 1e-7);
    }

    #[test]
    fn upper_field_is_not_adapted() {
        let s = GaussianSpace::new(2, 2).unwrap();
        let f = chaos2(ChaosPoly::coordinate(&s, 1), ChaosPoly::zero(&s));
        let batch = sample_gaussian(2, 10, 2).unwrap();
        let flow = integrate_flow(&f, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        let r = adaptedness_check(&f, &flow, &[0.5, 1.0]).unwrap();
        assert!(!r.lower_triangular && !r.pass);
        assert_eq!(r.violations, vec![(0, 1)]);
        assert!(!r.per_theta[0].field_pass && !r.per_theta[0].flow_pass);
        // the full filtration always passes
        assert!(r.per_theta[1].field_pass && r.per_theta[1].flow_pass);
    }

    #[test]
    fn closed_form_probe() {
        let tanh = VectorField::closed_form(ClosedForm::Tanh { dim: 3, rate: 1.0 }).unwrap();
        let batch = sample_gaussian(3, 10, 3).unwrap();
        let flow = integrate_flow(&tanh, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        assert!(adaptedness_check(&tanh, &flow, &[0.3, 0.7]).unwrap().pass);
        let rot = VectorField::closed_form(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) }).unwrap();
        let batch = sample_gaussian(2, 10, 3).unwrap();
        let flow = integrate_flow(&rot, 0.0, 1.0, &batch, FlowOptions::default(), false).unwrap();
        let r = adaptedness_check(&rot, &flow, &[0.5]).unwrap();
        assert_eq!(r.violations, vec![(0, 1)]);
    }

    #[test]
    fn theta_levels() {
        assert_eq!(filtration_level(0.0, 4).unwrap(), 0);
        assert_eq!(filtration_level(0.3, 4).unwrap(), 2);
        assert_eq!(filtration_level(1.0, 4).unwrap(), 4);
        assert!(filtration_level(1.5, 4).is_err());
    }
}
