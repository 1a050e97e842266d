//! Operator-valued random variables: transpose, trace, application and the
//! operator divergence `δδ`.
//!
//! Orientation: `(δδK)_i = δ(row i of K)`, i.e. `<l, δδK> = δ(Kᵀ l)` for
//! deterministic `l`. With this convention the vector field generated by a
//! skew form `A` in the transport equation is `δδ(Aᵀ)`.

use serde::Serialize;

use crate::chaos::{field_pair, multiply, ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
use crate::error::{Error, Result};
use crate::malliavin::{divergence, jacobian};
use crate::space::check_same;

pub fn matrix_transpose(k: &ChaosMatrix) -> ChaosMatrix {
    let n = k.dim();
    let rows = (0..n).map(|i| (0..n).map(|j| k.entry(j, i).clone()).collect()).collect();
    ChaosMatrix::from_rows(k.space(), rows).expect("square")
}

pub fn matrix_trace(k: &ChaosMatrix) -> ChaosPoly {
    let mut acc = ChaosPoly::zero(k.space());
    for i in 0..k.dim() {
        acc = acc.add(k.entry(i, i)).expect("same space");
    }
    acc
}

/// `K l` for a deterministic covector `l`: component `i` is `Σ_j K_ij l_j`.
pub fn matrix_apply(k: &ChaosMatrix, l: &[f64]) -> Result<ChaosField> {
    let n = k.dim();
    if l.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: l.len() });
    }
    let comps = (0..n)
        .map(|i| {
            let mut acc = ChaosPoly::zero(k.space());
            for (j, lj) in l.iter().enumerate() {
                if *lj != 0.0 {
                    acc = acc.add(&k.entry(i, j).scale(*lj))?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    ChaosField::new(k.space(), comps)
}

/// `K F` for a random field `F`.
pub fn matrix_apply_field(k: &ChaosMatrix, f: &ChaosField, policy: TruncationPolicy) -> Result<ChaosField> {
    check_same(k.space(), f.space())?;
    let comps = (0..k.dim())
        .map(|i| field_pair(&k.row(i), f, policy))
        .collect::<Result<Vec<_>>>()?;
    ChaosField::new(k.space(), comps)
}

/// Matrix product of two random matrices.
pub fn matrix_mul(a: &ChaosMatrix, b: &ChaosMatrix, policy: TruncationPolicy) -> Result<ChaosMatrix> {
    check_same(a.space(), b.space())?;
    let n = a.dim();
    let cols: Vec<ChaosField> = (0..n).map(|j| b.column(j)).collect();
    let rows = (0..n)
        .map(|i| {
            let r = a.row(i);
            cols.iter().map(|c| field_pair(&r, c, policy)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ChaosMatrix::from_rows(a.space(), rows)
}

/// `tr(A B) = Σ_{i,j} A_ij B_ji` without forming the full product.
pub fn trace_of_product(a: &ChaosMatrix, b: &ChaosMatrix, policy: TruncationPolicy) -> Result<ChaosPoly> {
    check_same(a.space(), b.space())?;
    let mut acc = ChaosPoly::zero(a.space());
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            acc = acc.add(&multiply(a.entry(i, j), b.entry(j, i), policy)?)?;
        }
    }
    Ok(acc)
}

/// `δδK`, component `i` = `δ(row i of K)`.
pub fn op_divergence(k: &ChaosMatrix, policy: TruncationPolicy) -> Result<ChaosField> {
    let comps = k.rows().iter().map(|r| divergence(r, policy)).collect::<Result<Vec<_>>>()?;
    ChaosField::new(k.space(), comps)
}

/// `δ(Kᵀ F)` computed directly, the left side of
/// `δ(KᵀF) = <F, δδK> - tr(Kᵀ ∇F)`.
pub fn weakb_combine(k: &ChaosMatrix, f: &ChaosField, policy: TruncationPolicy) -> Result<ChaosPoly> {
    let ktf = matrix_apply_field(&matrix_transpose(k), f, policy)?;
    divergence(&ktf, policy)
}

/// Right side `<F, δδK> - tr(Kᵀ ∇F)` with `∇F` the Jacobian `(∂_j F_i)`.
pub fn weakb_rhs(k: &ChaosMatrix, f: &ChaosField, policy: TruncationPolicy) -> Result<ChaosPoly> {
    let pairing = field_pair(f, &op_divergence(k, policy)?, policy)?;
    let tr = trace_of_product(&matrix_transpose(k), &jacobian(f), policy)?;
    pairing.sub(&tr)
}

/// The three expressions of the second-moment identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMoment {
    /// `E[δu δG]`
    pub lhs: f64,
    /// `E<u,G> + E tr(∇G ∇u)`
    pub rhs_trace: f64,
    /// `E<u,G> + E<δ((∇u)ᵀ), G>`
    pub rhs_divergence: f64,
}

impl SecondMoment {
    pub fn max_discrepancy(&self) -> f64 {
        (self.lhs - self.rhs_trace)
            .abs()
            .max((self.lhs - self.rhs_divergence).abs())
            .max((self.rhs_trace - self.rhs_divergence).abs())
    }
}

/// Evaluates all three sides exactly in chaos arithmetic. Expectations of
/// products are taken as `l2_inner`, so only the factors (not their
/// products) need to fit under the cap.
pub fn second_moment_check(u: &ChaosField, g: &ChaosField) -> Result<SecondMoment> {
    check_same(u.space(), g.space())?;
    let strict = TruncationPolicy::ErrorOnOverflow;
    let du = divergence(u, strict)?;
    let dg = divergence(g, strict)?;
    let lhs = du.l2_inner(&dg)?;

    let ug: f64 = u
        .components()
        .iter()
        .zip(g.components())
        .map(|(a, b)| a.l2_inner(b))
        .sum::<Result<f64>>()?;

    let ju = jacobian(u);
    let jg = jacobian(g);
    let n = u.dim();
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += jg.entry(i, j).l2_inner(ju.entry(j, i))?;
        }
    }

    let dju_t = op_divergence(&matrix_transpose(&ju), strict)?;
    let pair: f64 = dju_t
        .components()
        .iter()
        .zip(g.components())
        .map(|(a, b)| a.l2_inner(b))
        .sum::<Result<f64>>()?;

    Ok(SecondMoment { lhs, rhs_trace: ug + tr, rhs_divergence: ug + pair })
}
