//! Decomposition of a field into divergence-free and exact parts, and the
//! skew-form representation of divergence-free fields.

use serde::Serialize;

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
use crate::error::{Error, Result};
use crate::malliavin::{divergence, gradient, jacobian, spectral_apply, spectral_apply_field, SpectralFunction};
use crate::operator::matrix_transpose;
use crate::serial::{FieldDoc, MatrixDoc, PolyDoc};

/// `v = v0 + ∇ψ` with `δv0 = 0` and `E ψ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HodgeDecomposition {
    pub v0: ChaosField,
    pub ve: ChaosField,
    pub psi: ChaosPoly,
}

/// `ψ = 𝓛^{-1} δv`, `ve = ∇ψ`, `v0 = v - ve`.
///
/// `δv` is one degree above `v`; the intermediate must fit under the cap
/// (or be truncated when the policy allows).
pub fn hodge_decompose(v: &ChaosField, policy: TruncationPolicy) -> Result<HodgeDecomposition> {
    let dv = divergence(v, policy)?;
    let psi = spectral_apply(&dv, SpectralFunction::InverseL)?;
    let ve = gradient(&psi);
    let v0 = v.sub(&ve)?;
    Ok(HodgeDecomposition { v0, ve, psi })
}

/// Largest divergence coefficient attributable to rounding in the ladder
/// arithmetic (`sqrt(a) * sqrt(a) != a` in floating point).
pub fn divergence_roundoff(v: &ChaosField) -> f64 {
    let scale = v.components().iter().flat_map(|p| p.terms().map(|(_, c)| c.abs())).fold(0.0, f64::max);
    1e-12 * scale.max(1.0) * (v.space().cap() as f64 + 1.0)
}

/// Skew matrix `A` with `δδA = v0`, for divergence-free `v0`.
///
/// `u = (1+𝓛)^{-1} v0` component-wise, `J = ∇u` (entry `(i,j) = ∂_j u_i`)
/// and `A = J - Jᵀ`. Row `i` of `δδA` then equals
/// `(1+𝓛)u_i - ∂_i δu = v0_i`, since `δu = 0`.
pub fn antisym_representation(v0: &ChaosField, policy: TruncationPolicy) -> Result<ChaosMatrix> {
    let dv = divergence(v0, policy)?;
    let worst = dv.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max);
    if worst > divergence_roundoff(v0) {
        return Err(Error::Domain(format!(
            "field is not divergence-free (largest divergence coefficient {worst:e})"
        )));
    }
    let u = spectral_apply_field(v0, SpectralFunction::ResolventPower { beta: 1.0 })?;
    let j = jacobian(&u);
    j.sub(&matrix_transpose(&j))
}

/// `{v0, ve, psi, A}` bundle in the standard serialization.
#[derive(Debug, Clone, Serialize)]
pub struct HodgeBundle {
    pub v0: FieldDoc,
    pub ve: FieldDoc,
    pub psi: PolyDoc,
    #[serde(rename = "A")]
    pub a: MatrixDoc,
}

pub fn hodge_bundle(v: &ChaosField, policy: TruncationPolicy) -> Result<HodgeBundle> {
    let d = hodge_decompose(v, policy)?;
    let a = antisym_representation(&d.v0, policy)?;
    Ok(HodgeBundle {
        v0: FieldDoc::from(&d.v0),
        ve: FieldDoc::from(&d.ve),
        psi: PolyDoc::from(&d.psi),
        a: MatrixDoc::from(&a),
    })
}
