//! JSON text form of chaos objects.
//!
//! ```text
//! poly   {"dim":n,"cap":d,"terms":[{"alpha":[a_1,..,a_n],"c":real},..]}
//! field  {"dim":n,"cap":d,"components":[poly,..]}            (n components)
//! matrix {"dim":n,"cap":d,"rows":[[poly,..],..]}              (row-major, n x n)
//! ```
//!
//! An optional `"weights":[q_1,..,q_n]` key carries the weighted norm profile.
//! Reals are written in shortest round-trip decimal, so binary64 values
//! survive a write/read cycle bit for bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly};
use crate::error::{Error, Result};
use crate::space::{GaussianSpace, MultiIndex};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDoc {
    pub alpha: Vec<u32>,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyDoc {
    pub dim: usize,
    pub cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub terms: Vec<TermDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDoc {
    pub dim: usize,
    pub cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub components: Vec<PolyDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub dim: usize,
    pub cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub rows: Vec<Vec<PolyDoc>>,
}

impl From<&ChaosPoly> for PolyDoc {
    fn from(p: &ChaosPoly) -> Self {
        let s = p.space();
        Self {
            dim: s.dim(),
            cap: s.cap(),
            weights: s.weights().map(<[f64]>::to_vec),
            terms: p.terms().map(|(a, c)| TermDoc { alpha: a.to_dense(s.dim()), c }).collect(),
        }
    }
}

impl From<&ChaosField> for FieldDoc {
    fn from(v: &ChaosField) -> Self {
        let s = v.space();
        Self {
            dim: s.dim(),
            cap: s.cap(),
            weights: s.weights().map(<[f64]>::to_vec),
            components: v.components().iter().map(PolyDoc::from).collect(),
        }
    }
}

impl From<&ChaosMatrix> for MatrixDoc {
    fn from(m: &ChaosMatrix) -> Self {
        let s = m.space();
        Self {
            dim: s.dim(),
            cap: s.cap(),
            weights: s.weights().map(<[f64]>::to_vec),
            rows: (0..s.dim())
                .map(|i| (0..s.dim()).map(|j| PolyDoc::from(m.entry(i, j))).collect())
                .collect(),
        }
    }
}

fn check_header(
    space: &Arc<GaussianSpace>,
    dim: usize,
    cap: u32,
    weights: &Option<Vec<f64>>,
) -> Result<()> {
    if dim != space.dim() || cap != space.cap() || weights.as_deref() != space.weights() {
        return Err(Error::InvalidArgument(format!(
            "nested object declares dim={dim}, cap={cap}; expected dim={}, cap={}",
            space.dim(),
            space.cap()
        )));
    }
    Ok(())
}

impl PolyDoc {
    pub fn space(&self) -> Result<Arc<GaussianSpace>> {
        GaussianSpace::build(self.dim, self.cap, self.weights.clone())
    }

    pub fn to_poly(&self) -> Result<ChaosPoly> {
        self.to_poly_in(&self.space()?)
    }

    pub fn to_poly_in(&self, space: &Arc<GaussianSpace>) -> Result<ChaosPoly> {
        check_header(space, self.dim, self.cap, &self.weights)?;
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            if t.alpha.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: t.alpha.len() });
            }
            if !t.c.is_finite() {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
            terms.push((MultiIndex::from_dense(&t.alpha), t.c));
        }
        ChaosPoly::from_terms(space, terms)
    }
}

impl FieldDoc {
    pub fn to_field(&self) -> Result<ChaosField> {
        let space = GaussianSpace::build(self.dim, self.cap, self.weights.clone())?;
        self.to_field_in(&space)
    }

    pub fn to_field_in(&self, space: &Arc<GaussianSpace>) -> Result<ChaosField> {
        check_header(space, self.dim, self.cap, &self.weights)?;
        let comps = self.components.iter().map(|p| p.to_poly_in(space)).collect::<Result<_>>()?;
        ChaosField::new(space, comps)
    }
}

impl MatrixDoc {
    pub fn to_matrix(&self) -> Result<ChaosMatrix> {
        let space = GaussianSpace::build(self.dim, self.cap, self.weights.clone())?;
        check_header(&space, self.dim, self.cap, &self.weights)?;
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|p| p.to_poly_in(&space)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        ChaosMatrix::from_rows(&space, rows)
    }
}

pub fn poly_to_json(p: &ChaosPoly) -> String {
    serde_json::to_string(&PolyDoc::from(p)).expect("poly serializes")
}

pub fn poly_from_json(s: &str) -> Result<ChaosPoly> {
    serde_json::from_str::<PolyDoc>(s)?.to_poly()
}

pub fn field_to_json(v: &ChaosField) -> String {
    serde_json::to_string(&FieldDoc::from(v)).expect("field serializes")
}

pub fn field_from_json(s: &str) -> Result<ChaosField> {
    serde_json::from_str::<FieldDoc>(s)?.to_field()
}

pub fn matrix_to_json(m: &ChaosMatrix) -> String {
    serde_json::to_string(&MatrixDoc::from(m)).expect("matrix serializes")
}

pub fn matrix_from_json(s: &str) -> Result<ChaosMatrix> {
    serde_json::from_str::<MatrixDoc>(s)?.to_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_shape() {
        let s = GaussianSpace::new(2, 3).unwrap();
        let p = ChaosPoly::monomial(&s, MultiIndex::from_dense(&[1, 2]), 0.1).unwrap();
        assert_eq!(poly_to_json(&p), r#"{"dim":2,"cap":3,"terms":[{"alpha":[1,2],"c":0.1}]}"#);
    }

    #[test]
    fn rejects_malformed() {
        assert!(poly_from_json(r#"{"dim":2,"cap":3,"terms":[{"alpha":[1],"c":1.0}]}"#).is_err());
        assert!(poly_from_json(r#"{"dim":2,"cap":1,"terms":[{"alpha":[1,1],"c":1.0}]}"#).is_err());
        assert!(poly_from_json(r#"{"dim":2,"cap":3,"terms":[],"extra":1}"#).is_err());
        assert!(field_from_json(
            r#"{"dim":2,"cap":3,"components":[{"dim":2,"cap":3,"terms":[]}]}"#
        )
        .is_err());
    }

    #[test]
    fn matrix_round_trip_row_major() {
        let s = GaussianSpace::new(2, 2).unwrap();
        let a = ChaosMatrix::constant(&s, &[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let text = matrix_to_json(&a);
        assert!(text.contains(r#""rows":[[{"dim":2,"cap":2,"terms":[]},{"dim":2,"cap":2,"terms":[{"alpha":[0,0],"c":1.0}]}]"#));
        assert_eq!(matrix_from_json(&text).unwrap(), a);
    }
}
