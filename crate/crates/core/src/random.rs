//! Seeded random chaos objects for property suites.

use std::sync::Arc;

use rand::Rng;

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
use crate::error::Result;
use crate::hodge::hodge_decompose;
use crate::operator::matrix_transpose;
use crate::space::{GaussianSpace, MultiIndex};

/// Shape of generated objects.
#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    /// Maximum total degree of generated terms.
    pub max_degree: u32,
    /// Number of terms drawn per scalar (duplicates merge).
    pub terms: usize,
}

impl RandomShape {
    pub fn new(max_degree: u32, terms: usize) -> Self {
        Self { max_degree, terms }
    }
}

pub fn random_index<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_degree: u32) -> MultiIndex {
    let degree = rng.random_range(0..=max_degree);
    MultiIndex::from_pairs((0..degree).map(|_| (rng.random_range(0..dim), 1)))
}

pub fn random_poly<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GaussianSpace>, shape: RandomShape) -> ChaosPoly {
    let max_degree = shape.max_degree.min(space.cap());
    let terms: Vec<_> = (0..shape.terms)
        .map(|_| (random_index(rng, space.dim(), max_degree), rng.random_range(-1.0..1.0)))
        .collect();
    ChaosPoly::from_terms(space, terms).expect("indices respect the cap")
}

/// Random poly with the constant term removed.
pub fn random_mean_zero<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GaussianSpace>, shape: RandomShape) -> ChaosPoly {
    random_poly(rng, space, shape).retain(|a| !a.is_zero())
}

pub fn random_field<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GaussianSpace>, shape: RandomShape) -> ChaosField {
    let comps = (0..space.dim()).map(|_| random_poly(rng, space, shape)).collect();
    ChaosField::new(space, comps).expect("components share the space")
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GaussianSpace>, shape: RandomShape) -> ChaosMatrix {
    let n = space.dim();
    let rows = (0..n).map(|_| (0..n).map(|_| random_poly(rng, space, shape)).collect()).collect();
    ChaosMatrix::from_rows(space, rows).expect("square")
}

/// `B - Bᵀ` for a random `B`.
pub fn random_antisymmetric<R: Rng + ?Sized>(
    rng: &mut R,
    space: &Arc<GaussianSpace>,
    shape: RandomShape,
) -> ChaosMatrix {
    let b = random_matrix(rng, space, shape);
    b.sub(&matrix_transpose(&b)).expect("same space")
}

/// Divergence-free part of a random field (needs `max_degree < cap`).
pub fn random_divergence_free<R: Rng + ?Sized>(
    rng: &mut R,
    space: &Arc<GaussianSpace>,
    shape: RandomShape,
) -> Result<ChaosField> {
    let shape = RandomShape { max_degree: shape.max_degree.min(space.cap() - 1), ..shape };
    let v = random_field(rng, space, shape);
    Ok(hodge_decompose(&v, TruncationPolicy::ErrorOnOverflow)?.v0)
}

/// Lower-triangular field without finite-time blowup: component `i` is
/// affine in `x_i` with coefficients affine in `x_0..x_{i-1}`. Components
/// `>= active` vanish. Needs `cap >= 2`.
pub fn random_adapted_field<R: Rng + ?Sized>(
    rng: &mut R,
    space: &Arc<GaussianSpace>,
    active: usize,
    scale: f64,
) -> Result<ChaosField> {
    let dim = space.dim();
    let mut coef = || scale * rng.random_range(-1.0..1.0);
    let components = (0..dim)
        .map(|i| {
            if i >= active {
                return Ok(ChaosPoly::zero(space));
            }
            let xi = ChaosPoly::coordinate(space, i);
            let mut drift = ChaosPoly::constant(space, coef());
            let mut gain = ChaosPoly::constant(space, coef());
            for j in 0..i {
                let xj = ChaosPoly::coordinate(space, j);
                drift = drift.add(&xj.scale(coef()))?;
                gain = gain.add(&xj.scale(coef()))?;
            }
            drift.add(&crate::chaos::multiply(&xi, &gain, TruncationPolicy::ErrorOnOverflow)?)
        })
        .collect::<Result<Vec<_>>>()?;
    ChaosField::new(space, components)
}
