//! Time-dependent vector fields that can drive a flow: finite chaos fields
//! interpolated in time, and a small registry of closed-form fields with
//! analytic divergence.

use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly, HermiteTable, TruncationPolicy};
use crate::error::{Error, Result};
use crate::malliavin::{conditional_project_field, divergence, jacobian};
use crate::space::{same_space, MAX_DEGREE_CAP};

fn one() -> f64 {
    1.0
}

fn first_plane() -> (usize, usize) {
    (0, 1)
}

/// Named analytic fields. All are autonomous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedForm {
    Zero {
        dim: usize,
    },
    /// `v_i(x) = rate * tanh(x_i)` in every coordinate.
    Tanh {
        dim: usize,
        #[serde(default = "one")]
        rate: f64,
    },
    /// Rigid rotation in `plane = (i, j)`: `v_i = -ω x_j`, `v_j = ω x_i`.
    Rotation {
        dim: usize,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default = "first_plane")]
        plane: (usize, usize),
    },
    /// `v(x) = M x`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `v(x) = x_1^2 e_1`, which blows up in finite time for `x_1 > 0`.
    Quadratic { dim: usize },
}

impl ClosedForm {
    /// The same field as a chaos expansion, for the polynomial members of the registry.
    pub fn to_chaos(&self, space: &std::sync::Arc<crate::space::GaussianSpace>) -> Result<Option<ChaosField>> {
        let n = self.dim();
        if space.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: space.dim() });
        }
        let x = |i: usize| ChaosPoly::coordinate(space, i);
        let mut comps = vec![ChaosPoly::zero(space); n];
        match self {
            Self::Zero { .. } => {}
            Self::Tanh { .. } => return Ok(None),
            Self::Rotation { omega, plane: (i, j), .. } => {
                comps[*i] = x(*j).scale(-omega);
                comps[*j] = x(*i).scale(*omega);
            }
            Self::Linear { matrix } => {
                for (c, row) in comps.iter_mut().zip(matrix) {
                    for (k, m) in row.iter().enumerate() {
                        if *m != 0.0 {
                            *c = c.add(&x(k).scale(*m))?;
                        }
                    }
                }
            }
            Self::Quadratic { .. } => {
                comps[0] = crate::chaos::multiply(&x(0), &x(0), TruncationPolicy::ErrorOnOverflow)?;
            }
        }
        Ok(Some(ChaosField::new(space, comps)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::Tanh { dim, .. } | Self::Rotation { dim, .. } | Self::Quadratic { dim } => *dim,
            Self::Linear { matrix } => matrix.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::InvalidArgument("field dimension must be at least 1".into()));
        }
        match self {
            Self::Rotation { plane: (i, j), .. } if *i >= dim || *j >= dim || i == j => {
                Err(Error::InvalidArgument(format!("rotation plane {:?} invalid for dim {dim}", (i, j))))
            }
            Self::Linear { matrix } if matrix.iter().any(|r| r.len() != dim) => {
                Err(Error::InvalidArgument("linear field matrix must be square".into()))
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Zero { .. } => out.fill(0.0),
            Self::Tanh { rate, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = rate * xi.tanh();
                }
            }
            Self::Rotation { omega, plane: (i, j), .. } => {
                out.fill(0.0);
                out[*i] = -omega * x[*j];
                out[*j] = omega * x[*i];
            }
            Self::Linear { matrix } => {
                for (o, row) in out.iter_mut().zip(matrix) {
                    *o = row.iter().zip(x).map(|(m, xj)| m * xj).sum();
                }
            }
            Self::Quadratic { .. } => {
                out.fill(0.0);
                out[0] = x[0] * x[0];
            }
        }
    }

    /// Pointwise divergence `δv(x) = Σ_i (x_i v_i(x) - ∂_i v_i(x))`.
    fn divergence(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero { .. } | Self::Rotation { .. } => 0.0,
            Self::Tanh { rate, .. } => x
                .iter()
                .map(|xi| {
                    let th = xi.tanh();
                    rate * (xi * th - (1.0 - th * th))
                })
                .sum(),
            Self::Linear { matrix } => matrix
                .iter()
                .enumerate()
                .map(|(i, row)| x[i] * row.iter().zip(x).map(|(m, xj)| m * xj).sum::<f64>() - row[i])
                .sum(),
            Self::Quadratic { .. } => x[0].powi(3) - 2.0 * x[0],
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.fill(0.0);
        match self {
            Self::Zero { .. } => {}
            Self::Tanh { rate, .. } => {
                for i in 0..n {
                    let th = x[i].tanh();
                    out[i * n + i] = rate * (1.0 - th * th);
                }
            }
            Self::Rotation { omega, plane: (i, j), .. } => {
                out[i * n + j] = -omega;
                out[j * n + i] = *omega;
            }
            Self::Linear { matrix } => {
                for (i, row) in matrix.iter().enumerate() {
                    out[i * n..(i + 1) * n].copy_from_slice(row);
                }
            }
            Self::Quadratic { .. } => out[0] = 2.0 * x[0],
        }
    }
}

/// Chaos fields at strictly increasing time nodes, linearly interpolated in
/// between. A single node means an autonomous field defined for all times.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosPath {
    nodes: Vec<f64>,
    fields: Vec<ChaosField>,
    divergences: Vec<ChaosPoly>,
    jacobians: Vec<ChaosMatrix>,
    degree: u32,
}

impl ChaosPath {
    pub fn new(nodes: Vec<f64>, fields: Vec<ChaosField>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != fields.len() {
            return Err(Error::InvalidArgument(format!(
                "need one field per time node, got {} nodes and {} fields",
                nodes.len(),
                fields.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) || nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("time nodes must be finite and strictly increasing".into()));
        }
        let space = fields[0].space().clone();
        if fields.iter().any(|f| !same_space(f.space(), &space)) {
            return Err(Error::SpaceMismatch);
        }
        // divergence needs one degree of headroom
        let raised = space.with_cap((space.cap() + 1).min(MAX_DEGREE_CAP))?;
        let divergences = fields
            .iter()
            .map(|f| divergence(&f.embed(&raised)?, TruncationPolicy::ErrorOnOverflow))
            .collect::<Result<Vec<_>>>()?;
        let jacobians = fields.iter().map(jacobian).collect();
        let degree = fields.iter().map(ChaosField::degree).max().unwrap_or(0) + 1;
        Ok(Self { nodes, fields, divergences, jacobians, degree })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn fields(&self) -> &[ChaosField] {
        &self.fields
    }

    pub fn divergences(&self) -> &[ChaosPoly] {
        &self.divergences
    }

    pub fn map_fields(&self, f: impl FnMut(&ChaosField) -> Result<ChaosField>) -> Result<Self> {
        let fields = self.fields.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(self.nodes.clone(), fields)
    }

    /// Node index and interpolation weight on the following node.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if self.nodes.len() == 1 {
            return Ok((0, 0.0));
        }
        let (a, b) = (self.nodes[0], *self.nodes.last().expect("nonempty"));
        let slack = 1e-12 * (b - a).max(1.0);
        if t < a - slack || t > b + slack || !t.is_finite() {
            return Err(Error::Domain(format!("time {t} outside the field's domain [{a}, {b}]")));
        }
        let t = t.clamp(a, b);
        let k = match self.nodes.partition_point(|&n| n <= t) {
            0 => 0,
            p => (p - 1).min(self.nodes.len() - 2),
        };
        let lam = (t - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        Ok((k, lam))
    }

    fn table(&self, x: &[f64]) -> HermiteTable {
        let mut table = HermiteTable::new(x.len(), self.degree);
        table.fill(x);
        table
    }

    fn blend(&self, t: f64, mut at_node: impl FnMut(usize) -> Vec<f64>) -> Result<Vec<f64>> {
        let (k, lam) = self.locate(t)?;
        let mut v = at_node(k);
        if lam > 0.0 {
            let w = at_node(k + 1);
            for (vi, wi) in v.iter_mut().zip(w) {
                *vi = (1.0 - lam) * *vi + lam * wi;
            }
        }
        Ok(v)
    }
}

/// A time-dependent vector field on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorField {
    ClosedForm(ClosedForm),
    Chaos(ChaosPath),
}

impl VectorField {
    pub fn closed_form(f: ClosedForm) -> Result<Self> {
        f.validate()?;
        Ok(Self::ClosedForm(f))
    }

    /// Autonomous chaos field.
    pub fn chaos(field: ChaosField) -> Result<Self> {
        Ok(Self::Chaos(ChaosPath::new(vec![0.0], vec![field])?))
    }

    pub fn chaos_path(nodes: Vec<f64>, fields: Vec<ChaosField>) -> Result<Self> {
        Ok(Self::Chaos(ChaosPath::new(nodes, fields)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ClosedForm(c) => c.dim(),
            Self::Chaos(p) => p.fields[0].dim(),
        }
    }

    pub fn is_autonomous(&self) -> bool {
        match self {
            Self::ClosedForm(_) => true,
            Self::Chaos(p) => p.nodes.len() == 1,
        }
    }

    /// Interval on which the field is defined.
    pub fn time_domain(&self) -> (f64, f64) {
        match self {
            Self::Chaos(p) if p.nodes.len() > 1 => (p.nodes[0], *p.nodes.last().expect("nonempty")),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn check_interval(&self, s: f64, t: f64) -> Result<()> {
        let (a, b) = self.time_domain();
        let slack = 1e-12 * (b - a).abs().clamp(1.0, 1e12);
        if !(s.is_finite() && t.is_finite()) || s.min(t) < a - slack || s.max(t) > b + slack {
            return Err(Error::Domain(format!("interval [{}, {}] not inside the field's domain [{a}, {b}]", s.min(t), s.max(t))));
        }
        Ok(())
    }

    /// Weights of the ambient chaos space, if any.
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Self::Chaos(p) => p.fields[0].space().weights(),
            Self::ClosedForm(_) => None,
        }
    }

    pub fn weighted_norm(&self, x: &[f64]) -> f64 {
        match self.weights() {
            Some(q) => x.iter().zip(q).map(|(a, b)| (a * b).powi(2)).sum::<f64>().sqrt(),
            None => x.iter().map(|a| a * a).sum::<f64>().sqrt(),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Self::ClosedForm(c) => {
                c.eval(x, out);
                Ok(())
            }
            Self::Chaos(p) => {
                let table = p.table(x);
                let v = p.blend(t, |k| p.fields[k].evaluate_with(&table))?;
                out.copy_from_slice(&v);
                Ok(())
            }
        }
    }

    pub fn divergence_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        match self {
            Self::ClosedForm(c) => Ok(c.divergence(x)),
            Self::Chaos(p) => {
                let table = p.table(x);
                Ok(p.blend(t, |k| vec![p.divergences[k].evaluate_with(&table)])?[0])
            }
        }
    }

    /// Row-major Jacobian `∂_j v_i`.
    pub fn jacobian_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        match self {
            Self::ClosedForm(c) => {
                let mut out = vec![0.0; n * n];
                c.jacobian(x, &mut out);
                Ok(out)
            }
            Self::Chaos(p) => {
                let table = p.table(x);
                p.blend(t, |k| {
                    let j = &p.jacobians[k];
                    (0..n * n).map(|e| j.entry(e / n, e % n).evaluate_with(&table)).collect()
                })
            }
        }
    }

    /// Galerkin truncation `E[π_m v_t | 𝓕_m]` of a chaos field.
    pub fn galerkin_truncate(&self, m: usize) -> Result<Self> {
        match self {
            Self::Chaos(p) => Ok(Self::Chaos(p.map_fields(|f| conditional_project_field(f, m))?)),
            Self::ClosedForm(_) => {
                Err(Error::InvalidArgument("Galerkin truncation needs a chaos field".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::GaussianSpace;

    #[test]
    fn closed_form_divergences_match_chaos() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let m = vec![vec![0.3, -1.0], vec![2.0, 0.5]];
        let lin = VectorField::closed_form(ClosedForm::Linear { matrix: m.clone() }).unwrap();
        let comps = m
            .iter()
            .map(|r| {
                ChaosPoly::coordinate(&s, 0).scale(r[0]).add(&ChaosPoly::coordinate(&s, 1).scale(r[1])).unwrap()
            })
            .collect();
        let ch = VectorField::chaos(ChaosField::new(&s, comps).unwrap()).unwrap();
        let x = [0.7, -1.3];
        let a = lin.divergence_at(0.0, &x).unwrap();
        let b = ch.divergence_at(0.0, &x).unwrap();
        assert!((a - b).abs() < 1e-13);
        assert_eq!(lin.jacobian_at(0.0, &x).unwrap(), vec![0.3, -1.0, 2.0, 0.5]);
        let jc = ch.jacobian_at(0.0, &x).unwrap();
        assert!(jc.iter().zip([0.3, -1.0, 2.0, 0.5]).all(|(p, q)| (p - q).abs() < 1e-15));
    }

    #[test]
    fn interpolation_and_domain() {
        let s = GaussianSpace::new(1, 2).unwrap();
        let f0 = ChaosField::constant(&s, &[1.0]).unwrap();
        let f1 = ChaosField::constant(&s, &[3.0]).unwrap();
        let v = VectorField::chaos_path(vec![0.0, 2.0], vec![f0, f1]).unwrap();
        let mut out = [0.0];
        v.eval(0.5, &[0.0], &mut out).unwrap();
        assert_eq!(out[0], 1.5);
        v.eval(2.0, &[0.0], &mut out).unwrap();
        assert_eq!(out[0], 3.0);
        assert!(v.eval(2.5, &[0.0], &mut out).is_err());
        assert!(v.check_interval(0.0, 3.0).is_err());
        assert!(VectorField::chaos_path(vec![1.0, 1.0], vec![ChaosField::zero(&s), ChaosField::zero(&s)]).is_err());
    }

    #[test]
    fn registry_validation() {
        assert!(VectorField::closed_form(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 2) }).is_err());
        assert!(VectorField::closed_form(ClosedForm::Linear { matrix: vec![vec![1.0]; 2] }).is_err());
        let json = r#"{"name":"tanh","dim":3}"#;
        let f: ClosedForm = serde_json::from_str(json).unwrap();
        assert_eq!(f, ClosedForm::Tanh { dim: 3, rate: 1.0 });
    }

    #[test]
    fn registry_to_chaos_agrees_pointwise() {
        let s = GaussianSpace::new(3, 2).unwrap();
        let x = [0.3, -1.2, 0.7];
        for c in [
            ClosedForm::Zero { dim: 3 },
            ClosedForm::Rotation { dim: 3, omega: 0.5, plane: (0, 2) },
            ClosedForm::Linear { matrix: vec![vec![1.0, 2.0, 0.0], vec![0.0, -1.0, 3.0], vec![0.5, 0.0, 0.0]] },
            ClosedForm::Quadratic { dim: 3 },
        ] {
            let chaos = c.to_chaos(&s).unwrap().unwrap();
            let mut out = vec![0.0; 3];
            c.eval(&x, &mut out);
            let got = chaos.evaluate(&x);
            assert!(out.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-12), "{c:?}");
        }
        assert!(ClosedForm::Tanh { dim: 3, rate: 1.0 }.to_chaos(&s).unwrap().is_none());
    }
}
