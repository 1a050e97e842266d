//! The transport equation `∂f/∂t = δ(A ∇f)` driven by a skew-symmetric
//! random matrix `A`, whose flow is generated by `B = δ(Aᵀ)` row-wise.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::engine::{flow_path, FlowOptions, SampleFailure};
use super::field::VectorField;
use crate::chaos::{field_pair, multiply, ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
use crate::error::{Error, Result};
use crate::malliavin::{divergence, gradient};
use crate::operator::{matrix_apply_field, matrix_transpose, op_divergence};
use crate::space::GaussianSpace;

const STRICT: TruncationPolicy = TruncationPolicy::ErrorOnOverflow;

/// Generator of the transport flow: `B_i = δ(A e_i)`.
pub fn transport_field(a: &ChaosMatrix) -> Result<ChaosField> {
    op_divergence(&matrix_transpose(a), STRICT)
}

/// Constant part of `A` as a dense matrix, if `A` has no random part.
fn constant_matrix(a: &ChaosMatrix) -> Option<DMatrix<f64>> {
    if a.degree() > 0 {
        return None;
    }
    let n = a.dim();
    Some(DMatrix::from_fn(n, n, |i, j| a.entry(i, j).expectation()))
}

/// `H_n(y)` for a chaos polynomial `y` with `E y² = 1`, by the three-term recurrence.
fn hermite_of(y: &ChaosPoly, n: u32) -> Result<ChaosPoly> {
    let space = y.space();
    let mut prev = ChaosPoly::constant(space, 1.0);
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = y.clone();
    for k in 1..n {
        let kf = k as f64;
        let next = multiply(y, &cur, STRICT)?.sub(&prev.scale(kf.sqrt()))?.scale(1.0 / (kf + 1.0).sqrt());
        prev = std::mem::replace(&mut cur, next);
    }
    Ok(cur)
}

/// `p ∘ L` for an orthogonal matrix `L`, exactly in chaos form.
pub fn compose_orthogonal(p: &ChaosPoly, l: &DMatrix<f64>) -> Result<ChaosPoly> {
    let space: &Arc<GaussianSpace> = p.space();
    let n = space.dim();
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: l.nrows() });
    }
    if (l.transpose() * l - DMatrix::identity(n, n)).amax() > 1e-10 {
        return Err(Error::Domain("exact pullback needs an orthogonal map".into()));
    }
    let forms: Vec<ChaosPoly> = (0..n)
        .map(|i| {
            let mut y = ChaosPoly::zero(space);
            for j in 0..n {
                if l[(i, j)] != 0.0 {
                    y = y.add(&ChaosPoly::coordinate(space, j).scale(l[(i, j)]))?;
                }
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;
    let mut out = ChaosPoly::zero(space);
    for (alpha, c) in p.terms() {
        let mut term = ChaosPoly::constant(space, c);
        for (dir, power) in alpha.iter() {
            term = multiply(&term, &hermite_of(&forms[dir], power)?, STRICT)?;
        }
        out = out.add(&term)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportRow {
    pub t: f64,
    /// `||∂_t f(t) - δ(A∇f(t))||_{L²}` for the exact pullback (constant `A`).
    pub residual: Option<f64>,
    /// `max_x |f0(T_t x) - f(t)(x)|` between the ODE flow and the exact pullback.
    pub pathwise_gap: Option<f64>,
    /// Batch mean of `f0(T_t x)`.
    pub pathwise_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    pub rows: Vec<TransportRow>,
    pub max_residual: Option<f64>,
    pub max_pathwise_gap: Option<f64>,
    pub exact_pullback: bool,
    pub failures: Vec<SampleFailure>,
}

/// Residual of `∂f/∂t = δ(A∇f)` for `f(t) = f0 ∘ T_t` on `times`.
///
/// For constant `A` the flow is `e^{tAᵀ}` and `f(t)` is available exactly in
/// chaos form; `∂_t f` is computed as `⟨∇f0, B⟩ ∘ T_t`. Otherwise only the
/// pathwise composition on the batch is reported.
pub fn transport_pde_residual(
    a: &ChaosMatrix,
    f0: &ChaosPoly,
    times: &[f64],
    batch: &[Vec<f64>],
    opts: FlowOptions,
) -> Result<TransportReport> {
    let n = a.dim();
    for i in 0..n {
        for j in 0..n {
            if !a.entry(i, j).add(a.entry(j, i))?.is_zero() {
                return Err(Error::Domain("A must be skew-symmetric".into()));
            }
        }
    }
    if !crate::space::same_space(a.space(), f0.space()) {
        return Err(Error::SpaceMismatch);
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("time grid must be nonempty and increasing".into()));
    }
    let b = transport_field(a)?;
    let field = VectorField::chaos(b.clone())?;

    let mut grid = times.to_vec();
    if grid[0] != 0.0 {
        if grid[0] < 0.0 {
            return Err(Error::InvalidArgument("time grid must start at or after 0".into()));
        }
        grid.insert(0, 0.0);
    }
    let offset = grid.len() - times.len();
    let paths: Vec<Result<Vec<Vec<f64>>>> =
        batch.par_iter().map(|x| flow_path(&field, x, &grid, opts.solver).map(|p| p.0)).collect();
    let mut failures = Vec::new();
    let paths: Vec<Option<Vec<Vec<f64>>>> = paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.map_err(|e| failures.push(SampleFailure { index: i, message: e.to_string() })).ok())
        .collect();

    let exact = constant_matrix(a).map(|m| m.transpose());
    let velocity = field_pair(&gradient(f0), &b, STRICT)?;
    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let along: Vec<f64> = paths.iter().flatten().map(|p| f0.evaluate(&p[k + offset])).collect();
            let pathwise_mean = along.iter().sum::<f64>() / along.len().max(1) as f64;
            let Some(m) = &exact else {
                return Ok(TransportRow { t, residual: None, pathwise_gap: None, pathwise_mean });
            };
            let flow_t = (m * t).exp();
            let f_t = compose_orthogonal(f0, &flow_t)?;
            let dfdt = compose_orthogonal(&velocity, &flow_t)?;
            let rhs = divergence(&matrix_apply_field(a, &gradient(&f_t), STRICT)?, STRICT)?;
            let residual = dfdt.sub(&rhs)?.l2_norm_sq().sqrt();
            let gap = batch
                .iter()
                .zip(&paths)
                .filter_map(|(x, p)| p.as_ref().map(|p| (f0.evaluate(&p[k + offset]) - f_t.evaluate(x)).abs()))
                .fold(0.0, f64::max);
            Ok(TransportRow { t, residual: Some(residual), pathwise_gap: Some(gap), pathwise_mean })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_of = |f: fn(&TransportRow) -> Option<f64>| rows.iter().map(f).try_fold(0.0_f64, |m, v| v.map(|v| m.max(v)));
    Ok(TransportReport {
        max_residual: max_of(|r| r.residual),
        max_pathwise_gap: max_of(|r| r.pathwise_gap),
        exact_pullback: exact.is_some(),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::sample_gaussian;

    fn rot(s: &Arc<GaussianSpace>) -> ChaosMatrix {
        ChaosMatrix::constant(s, &[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap()
    }

    fn grid() -> Vec<f64> {
        (0..20).map(|k| 0.1 * k as f64).collect()
    }

    #[test]
    fn generator_is_rotation() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let b = transport_field(&rot(&s)).unwrap();
        assert!(b.component(0).approx_eq(&ChaosPoly::coordinate(&s, 1).scale(-1.0), 0.0));
        assert!(b.component(1).approx_eq(&ChaosPoly::coordinate(&s, 0), 0.0));
    }

    #[test]
    fn coordinate_pullback() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let x1 = ChaosPoly::coordinate(&s, 0);
        let t = 0.7_f64;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let f = compose_orthogonal(&x1, &(m * t).exp()).unwrap();
        let expect = x1.scale(t.cos()).sub(&ChaosPoly::coordinate(&s, 1).scale(t.sin())).unwrap();
        assert!(f.approx_eq(&expect, 1e-14));
        let rhs = divergence(&matrix_apply_field(&rot(&s), &gradient(&f), STRICT).unwrap(), STRICT).unwrap();
        let dfdt = x1.scale(-t.sin()).sub(&ChaosPoly::coordinate(&s, 1).scale(t.cos())).unwrap();
        assert!(rhs.approx_eq(&dfdt, 1e-14));
    }

    #[test]
    fn residuals_vanish() {
        let s = GaussianSpace::new(2, 4).unwrap();
        let batch = sample_gaussian(2, 50, 1).unwrap();
        let h2 = ChaosPoly::monomial(&s, crate::space::MultiIndex::unit(0, 2), 1.0).unwrap();
        for f0 in [ChaosPoly::coordinate(&s, 0), h2, ChaosPoly::constant(&s, 2.5)] {
            let r = transport_pde_residual(&rot(&s), &f0, &grid(), &batch, FlowOptions::default()).unwrap();
            assert!(r.max_residual.unwrap() <= 1e-12, "{r:?}");
            assert!(r.max_pathwise_gap.unwrap() <= 1e-6, "{r:?}");
            assert!(r.failures.is_empty());
        }
    }

    #[test]
    fn pullback_preserves_norm() {
        let s = GaussianSpace::new(3, 4).unwrap();
        let mut rng = crate::montecarlo::stream_rng(4, 0);
        let p = crate::random::random_poly(&mut rng, &s, crate::random::RandomShape { max_degree: 3, terms: 6 });
        let q = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 0.4);
        let l = DMatrix::from_fn(3, 3, |i, j| q[(i, j)]);
        let c = compose_orthogonal(&p, &l).unwrap();
        assert!((c.l2_norm_sq() - p.l2_norm_sq()).abs() < 1e-10);
        let x = [0.2, -0.5, 1.3];
        let lx: Vec<f64> = (0..3).map(|i| (0..3).map(|j| l[(i, j)] * x[j]).sum()).collect();
        assert!((c.evaluate(&x) - p.evaluate(&lx)).abs() < 1e-10);
    }

    #[test]
    fn rejects_symmetric_matrix() {
        let s = GaussianSpace::new(2, 2).unwrap();
        let a = ChaosMatrix::constant(&s, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(transport_pde_residual(&a, &ChaosPoly::coordinate(&s, 0), &[0.0], &[], FlowOptions::default()).is_err());
    }

    #[test]
    fn random_matrix_pathwise_only() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let x1 = ChaosPoly::coordinate(&s, 0);
        let z = ChaosPoly::zero(&s);
        let a = ChaosMatrix::from_rows(&s, vec![vec![z.clone(), x1.scale(0.2)], vec![x1.scale(-0.2), z]]).unwrap();
        let batch = sample_gaussian(2, 10, 2).unwrap();
        let r = transport_pde_residual(&a, &x1, &[0.0, 0.5], &batch, FlowOptions::default()).unwrap();
        assert!(!r.exact_pullback && r.max_residual.is_none());
    }
}
