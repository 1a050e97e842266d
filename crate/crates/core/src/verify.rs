//! Named verification suites: each runs a seeded batch of identity checks
//! and returns one [`Check`] per property.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosField, ChaosMatrix, ChaosPoly, TruncationPolicy};
use crate::error::{Error, Result};
use crate::flow::engine::{
    density_along_flow, flow_law_residual, group_law_residual, integrate_flow, log_density_analytic,
    reversibility_residual, DensityMode, FlowOptions,
};
use crate::flow::field::{ClosedForm, VectorField};
use crate::flow::{adaptedness_check, transport_pde_residual};
use crate::hodge::{antisym_representation, divergence_roundoff, hodge_decompose};
use crate::malliavin::{
    conditional_project, conditional_project_field, conditional_project_matrix, divergence, gradient, jacobian,
    ou_mehler_point, resolvent_power_by_quadrature, spectral_apply, spectral_apply_field, SpectralFunction,
};
use crate::montecarlo::{gaussian_sample, ks_two_sample, pushforward_pair, sample_gaussian, stream_rng, Estimate};
use crate::operator::{
    matrix_apply, matrix_apply_field, matrix_trace, matrix_transpose, op_divergence, second_moment_check,
};
use crate::random::{
    random_adapted_field, random_antisymmetric, random_divergence_free, random_field, random_matrix,
    random_mean_zero, random_poly, RandomShape,
};
use crate::space::{GaussianSpace, MultiIndex};

const STRICT: TruncationPolicy = TruncationPolicy::ErrorOnOverflow;

/// Tolerance for identities that hold exactly up to coefficient roundoff.
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Duality,
    ProductRule,
    Spectral,
    Operator,
    Hodge,
    FlowBasic,
    FlowDensity,
    Pde,
    Adapted,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Duality,
        Suite::ProductRule,
        Suite::Spectral,
        Suite::Operator,
        Suite::Hodge,
        Suite::FlowBasic,
        Suite::FlowDensity,
        Suite::Pde,
        Suite::Adapted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Duality => "duality",
            Suite::ProductRule => "product-rule",
            Suite::Spectral => "spectral",
            Suite::Operator => "operator",
            Suite::Hodge => "hodge",
            Suite::FlowBasic => "flow-basic",
            Suite::FlowDensity => "flow-density",
            Suite::Pde => "pde",
            Suite::Adapted => "adapted",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::InvalidArgument(format!("unknown suite `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Exact,
    Mc,
}

/// One verified property: `pass` iff `value <= tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub mode: CheckMode,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn exact(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), mode: CheckMode::Exact, value, tolerance, pass: value <= tolerance }
    }

    pub fn mc(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), mode: CheckMode::Mc, value, tolerance, pass: value <= tolerance }
    }

    /// A yes/no property, reported as value 0 (holds) or 1 (fails).
    pub fn flag(name: impl Into<String>, holds: bool) -> Self {
        Self::exact(name, if holds { 0.0 } else { 1.0 }, 0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Sizes of the randomized algebraic suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteParams {
    /// Cases per exact identity.
    pub cases: usize,
    /// Cases per Monte Carlo comparison.
    pub mc_cases: usize,
    /// Antithetic pairs per Mehler estimate.
    pub mehler_samples: usize,
    pub dim: usize,
    pub cap: u32,
    pub max_degree: u32,
    pub terms: usize,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self { cases: 200, mc_cases: 50, mehler_samples: 4000, dim: 3, cap: 6, max_degree: 3, terms: 4 }
    }
}

/// Flow inputs shared by the flow suites. Missing pieces take suite defaults.
#[derive(Debug, Clone)]
pub struct FlowSetup {
    pub field: Option<VectorField>,
    pub s: f64,
    pub t: f64,
    pub samples: usize,
    pub opts: FlowOptions,
    pub pde: Option<PdeSetup>,
    pub thetas: Vec<f64>,
}

impl Default for FlowSetup {
    fn default() -> Self {
        Self {
            field: None,
            s: 0.0,
            t: 1.0,
            samples: 10_000,
            opts: FlowOptions::default(),
            pde: None,
            thetas: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdeSetup {
    pub a: ChaosMatrix,
    pub f0: ChaosPoly,
    pub times: Vec<f64>,
}

impl PdeSetup {
    /// `A = [[0,1],[-1,0]]`, `f0 = x1`, 20 equally spaced times on `[0, 2]`.
    pub fn rotation() -> Result<Self> {
        let s = GaussianSpace::new(2, 4)?;
        Ok(Self {
            a: ChaosMatrix::constant(&s, &[vec![0.0, 1.0], vec![-1.0, 0.0]])?,
            f0: ChaosPoly::coordinate(&s, 0),
            times: (0..20).map(|k| 2.0 * k as f64 / 19.0).collect(),
        })
    }
}

pub fn run_suite(suite: Suite, params: &SuiteParams, flow: &FlowSetup, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Duality => duality(params, seed)?,
        Suite::ProductRule => product_rule(params, seed)?,
        Suite::Spectral => spectral(params, seed)?,
        Suite::Operator => operator(params, seed)?,
        Suite::Hodge => hodge(params, flow, seed)?,
        Suite::FlowBasic => flow_basic(flow, seed)?,
        Suite::FlowDensity => flow_density(flow, seed)?,
        Suite::Pde => pde(flow, seed)?,
        Suite::Adapted => adapted(flow, seed)?,
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { suite: suite.name().to_string(), checks, pass })
}

fn space(p: &SuiteParams) -> Result<Arc<GaussianSpace>> {
    GaussianSpace::new(p.dim, p.cap)
}

fn shape(p: &SuiteParams, max_degree: u32) -> RandomShape {
    RandomShape::new(max_degree.min(p.max_degree), p.terms)
}

fn poly_gap(a: &ChaosPoly, b: &ChaosPoly) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

fn field_gap(a: &ChaosField, b: &ChaosField) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

fn max_coeff(p: &ChaosPoly) -> f64 {
    p.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max)
}

fn field_max_coeff(v: &ChaosField) -> f64 {
    v.components().iter().map(max_coeff).fold(0.0, f64::max)
}

fn duality(p: &SuiteParams, seed: u64) -> Result<Vec<Check>> {
    let s = space(p)?;
    let (mut gap, mut mean) = (0.0_f64, 0.0_f64);
    for k in 0..p.cases as u64 {
        let mut rng = stream_rng(seed, k);
        let v = random_field(&mut rng, &s, shape(p, p.cap - 1));
        let phi = random_poly(&mut rng, &s, shape(p, p.cap));
        let grad = gradient(&phi);
        let lhs: f64 = (0..p.dim).map(|i| v.component(i).l2_inner(grad.component(i))).sum::<Result<f64>>()?;
        let dv = divergence(&v, STRICT)?;
        gap = gap.max((lhs - phi.l2_inner(&dv)?).abs());
        mean = mean.max(dv.expectation().abs());
    }
    Ok(vec![Check::exact("adjointness E<v,∇Φ> = E[Φ δv]", gap, EXACT_TOL), Check::exact("E[δv] = 0", mean, 0.0)])
}

fn product_rule(p: &SuiteParams, seed: u64) -> Result<Vec<Check>> {
    let s = space(p)?;
    let half = (p.cap - 1) / 2;
    let (mut prod, mut grad_div, mut mart) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..p.cases as u64 {
        let mut rng = stream_rng(seed, k);
        let alpha = random_poly(&mut rng, &s, shape(p, half));
        let v = random_field(&mut rng, &s, shape(p, p.cap - 1 - half));
        let lhs = divergence(&v.scalar_mul(&alpha, STRICT)?, STRICT)?;
        let pair = crate::chaos::field_pair(&v, &gradient(&alpha), STRICT)?;
        let rhs = crate::chaos::multiply(&alpha, &divergence(&v, STRICT)?, STRICT)?.sub(&pair)?;
        prod = prod.max(poly_gap(&lhs, &rhs));

        let g = random_field(&mut rng, &s, shape(p, p.cap - 1));
        let lhs = gradient(&divergence(&g, STRICT)?);
        let rhs = g.add(&op_divergence(&matrix_transpose(&jacobian(&g)), STRICT)?)?;
        grad_div = grad_div.max(field_gap(&lhs, &rhs));

        let m = rng.random_range(1..=p.dim);
        let a = conditional_project(&divergence(&g, STRICT)?, m)?;
        let b = divergence(&conditional_project_field(&g, m)?, STRICT)?;
        mart = mart.max(poly_gap(&a, &b));
    }
    Ok(vec![
        Check::exact("δ(αv) = αδv - <v,∇α>", prod, EXACT_TOL),
        Check::exact("∇δG = G + δ((∇G)ᵀ)", grad_div, EXACT_TOL),
        Check::exact("E_m δ = δ E_m", mart, EXACT_TOL),
    ])
}

fn spectral(p: &SuiteParams, seed: u64) -> Result<Vec<Check>> {
    let s = space(p)?;
    let (mut number, mut commute) = (0.0_f64, 0.0_f64);
    for k in 0..p.cases as u64 {
        let mut rng = stream_rng(seed, k);
        let phi = random_poly(&mut rng, &s, shape(p, p.cap));
        let l = spectral_apply(&phi, SpectralFunction::NumberOp)?;
        number = number.max(poly_gap(&l, &divergence(&gradient(&phi), STRICT)?));
        let t = rng.random_range(0.05..2.0);
        let lhs = gradient(&spectral_apply(&phi, SpectralFunction::OuSemigroup { t })?);
        let rhs = spectral_apply_field(&gradient(&phi), SpectralFunction::OuSemigroup { t })?.scale((-t).exp());
        commute = commute.max(field_gap(&lhs, &rhs));
    }

    let mut worst_z = 0.0_f64;
    for k in 0..p.mc_cases as u64 {
        let mut rng = stream_rng(seed ^ 0x5eed, k);
        let phi = random_poly(&mut rng, &s, shape(p, p.cap));
        let t = rng.random_range(0.05..2.0);
        let omega = gaussian_sample(p.dim, seed ^ 0xfeed, k);
        let exact = spectral_apply(&phi, SpectralFunction::OuSemigroup { t })?.evaluate(&omega);
        let est = ou_mehler_point(&phi, t, &omega, p.mehler_samples, seed, k)?;
        let gap = (est.mean - exact).abs();
        let z = if gap <= 1e-12 * exact.abs().max(1.0) {
            0.0
        } else if est.std_error > 0.0 {
            gap / est.std_error
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }

    let mut quad = 0.0_f64;
    for beta in [0.5, 1.0, 2.0] {
        for k in 0..=p.cap.max(6) {
            quad = quad.max((resolvent_power_by_quadrature(k, beta) - (1.0 + k as f64).powf(-beta)).abs());
        }
    }
    Ok(vec![
        Check::exact("𝓛 = δ∇", number, EXACT_TOL),
        Check::exact("∇T_t = e^{-t} T_t ∇", commute, EXACT_TOL),
        Check::mc("Mehler vs spectral T_t (max |z|)", worst_z, 4.0),
        Check::exact("resolvent power quadrature", quad, 1e-8),
    ])
}

fn operator(p: &SuiteParams, seed: u64) -> Result<Vec<Check>> {
    let s = space(p)?;
    let half = (p.cap - 1) / 2;
    let (mut weak, mut ext, mut orth, mut second, mut inv, mut mart) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..p.cases as u64 {
        let mut rng = stream_rng(seed, k);
        let m = random_matrix(&mut rng, &s, shape(p, p.cap - 1));
        let dd = op_divergence(&m, STRICT)?;
        for l in 0..p.dim {
            let mut e = vec![0.0; p.dim];
            e[l] = 1.0;
            let lhs = divergence(&matrix_apply(&matrix_transpose(&m), &e)?, STRICT)?;
            weak = weak.max(poly_gap(&lhs, dd.component(l)));
        }
        inv = inv
            .max(matrix_transpose(&matrix_transpose(&m)).max_abs_diff(&m).unwrap_or(f64::INFINITY))
            .max(poly_gap(&matrix_trace(&matrix_transpose(&m)), &matrix_trace(&m)));
        // E_m (δδK)_i = (δδ K')_i with K' = E_m K restricted to columns < m
        let lvl = rng.random_range(1..=p.dim);
        let cut = conditional_project_matrix(&m, lvl)?;
        let cut = ChaosMatrix::from_rows(
            &s,
            (0..p.dim)
                .map(|i| (0..p.dim).map(|j| if j < lvl { cut.entry(i, j).clone() } else { ChaosPoly::zero(&s) }).collect())
                .collect(),
        )?;
        let lhs = dd.try_map(|c| conditional_project(c, lvl))?;
        mart = mart.max(field_gap(&lhs, &op_divergence(&cut, STRICT)?));

        let alpha = random_poly(&mut rng, &s, shape(p, half));
        let am = random_matrix(&mut rng, &s, shape(p, p.cap - 1 - half));
        let lhs = op_divergence(&am.try_map(|e| crate::chaos::multiply(&alpha, e, STRICT))?, STRICT)?;
        let rhs = op_divergence(&am, STRICT)?
            .scalar_mul(&alpha, STRICT)?
            .sub(&matrix_apply_field(&am, &gradient(&alpha), STRICT)?)?;
        ext = ext.max(field_gap(&lhs, &rhs));

        let rows: Vec<Vec<f64>> = (0..p.dim).map(|_| (0..p.dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c = ChaosMatrix::constant(&s, &rows)?;
        let skew = c.sub(&matrix_transpose(&c))?;
        let phi = random_poly(&mut rng, &s, shape(p, p.cap));
        let pair = crate::chaos::field_pair(&op_divergence(&skew, STRICT)?, &gradient(&phi), STRICT)?;
        orth = orth.max(pair.expectation().abs());

        let u = random_field(&mut rng, &s, shape(p, half.max(1)));
        let g = random_field(&mut rng, &s, shape(p, half.max(1)));
        if let Ok(sm) = second_moment_check(&u, &g) {
            second = second.max(sm.max_discrepancy());
        } else {
            return Err(Error::InvalidArgument("second-moment case exceeds the cap; raise `cap`".into()));
        }
    }
    Ok(vec![
        Check::exact("δ(Kᵀl) = <l, δδK>", weak, EXACT_TOL),
        Check::exact("δδ(αA) = αδδA - A∇α", ext, EXACT_TOL),
        Check::exact("E<δδA, ∇Φ> = 0 for constant skew A", orth, EXACT_TOL),
        Check::exact("second-moment three-way equality", second, EXACT_TOL),
        Check::exact("transpose involution and trace", inv, 0.0),
        Check::exact("δδ commutes with E_m", mart, EXACT_TOL),
    ])
}

fn hodge(p: &SuiteParams, flow: &FlowSetup, seed: u64) -> Result<Vec<Check>> {
    let s = space(p)?;
    let (mut div0, mut exact, mut recon, mut unique, mut idem, mut resolvent) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let (mut skew_div, mut round_trip, mut skew) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..p.cases as u64 {
        let mut rng = stream_rng(seed, k);
        let v = random_field(&mut rng, &s, shape(p, p.cap - 1));
        let d = hodge_decompose(&v, STRICT)?;
        div0 = div0.max(max_coeff(&divergence(&d.v0, STRICT)?));
        exact = exact.max(field_gap(&d.ve, &gradient(&d.psi)));
        recon = recon.max(field_gap(&d.v0.add(&d.ve)?, &v));

        let v0 = random_divergence_free(&mut rng, &s, shape(p, p.cap - 1))?;
        let psi = random_mean_zero(&mut rng, &s, shape(p, p.cap - 1));
        let again = hodge_decompose(&v0.add(&gradient(&psi))?, STRICT)?;
        unique = unique.max(field_gap(&again.v0, &v0)).max(poly_gap(&again.psi, &psi));
        let id = hodge_decompose(&v0, STRICT)?;
        idem = idem.max(field_gap(&id.v0, &v0)).max(field_max_coeff(&id.ve)).max(max_coeff(&id.psi));
        for beta in [0.5, 1.0, 2.0] {
            let r = spectral_apply_field(&v0, SpectralFunction::ResolventPower { beta })?;
            resolvent = resolvent.max(max_coeff(&divergence(&r, STRICT)?));
        }

        let a = random_antisymmetric(&mut rng, &s, shape(p, p.cap - 2));
        skew_div = skew_div.max(max_coeff(&divergence(&op_divergence(&a, STRICT)?, STRICT)?));
        let rep = antisym_representation(&v0, STRICT)?;
        round_trip = round_trip.max(field_gap(&op_divergence(&rep, STRICT)?, &v0));
        skew = skew.max(rep.add(&matrix_transpose(&rep))?.max_abs_diff(&ChaosMatrix::zero(&s)).unwrap_or(f64::INFINITY));
    }

    let ident = ChaosField::identity(&s);
    let psi = hodge_decompose(&ident, STRICT)?.psi;
    let expect = ChaosPoly::from_terms(&s, (0..p.dim).map(|i| (MultiIndex::unit(i, 2), 0.5f64.sqrt())))?;

    let mut checks = vec![
        Check::exact("δv0 = 0", div0, 1e-12),
        Check::exact("ve = ∇ψ", exact, 0.0),
        Check::exact("v0 + ve = v", recon, EXACT_TOL),
        Check::exact("identity field potential Σ(x_i²-1)/2", poly_gap(&psi, &expect), 1e-12),
        Check::exact("uniqueness of the decomposition", unique, EXACT_TOL),
        Check::exact("idempotence on divergence-free fields", idem, EXACT_TOL),
        Check::exact("(1+𝓛)^{-β} preserves δ = 0", resolvent, 1e-12),
        Check::exact("δ(δδA) = 0 for skew A", skew_div, 1e-12),
        Check::exact("δδ(antisym_representation(v0)) = v0", round_trip, EXACT_TOL),
        Check::exact("A + Aᵀ = 0", skew, 0.0),
    ];
    if let Some(v) = configured_chaos(flow)? {
        let d = hodge_decompose(&v, STRICT)?;
        checks.push(Check::exact("configured field: v0 + ve = v", field_gap(&d.v0.add(&d.ve)?, &v), EXACT_TOL));
        let dv = divergence(&v, STRICT)?;
        if max_coeff(&dv) <= divergence_roundoff(&v) {
            checks.push(Check::exact("configured field: divergence-free input is its own v0", field_gap(&d.v0, &v), EXACT_TOL));
        }
    }
    Ok(checks)
}

/// The configured field as a single chaos field (rotation when unset).
fn configured_chaos(flow: &FlowSetup) -> Result<Option<ChaosField>> {
    match &flow.field {
        None => {
            let s = GaussianSpace::new(2, 3)?;
            ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) }.to_chaos(&s)
        }
        Some(VectorField::ClosedForm(c)) => {
            let s = GaussianSpace::new(c.dim(), 3)?;
            c.to_chaos(&s)
        }
        Some(VectorField::Chaos(p)) if p.nodes().len() == 1 => Ok(Some(p.fields()[0].clone())),
        Some(VectorField::Chaos(_)) => Ok(None),
    }
}

fn is_divergence_free(field: &VectorField) -> bool {
    match field {
        VectorField::ClosedForm(ClosedForm::Zero { .. } | ClosedForm::Rotation { .. }) => true,
        VectorField::ClosedForm(ClosedForm::Linear { matrix }) => {
            (0..matrix.len()).all(|i| (0..matrix.len()).all(|j| matrix[i][j] + matrix[j][i] == 0.0))
        }
        VectorField::ClosedForm(_) => false,
        VectorField::Chaos(p) => p.divergences().iter().all(|d| d.is_zero()),
    }
}

fn flow_basic(flow: &FlowSetup, seed: u64) -> Result<Vec<Check>> {
    let field = match &flow.field {
        Some(f) => f.clone(),
        None => VectorField::closed_form(ClosedForm::Rotation { dim: 2, omega: 1.0, plane: (0, 1) })?,
    };
    let (s, t) = (flow.s, flow.t);
    let tol = flow.opts.solver.tolerance();
    let n = flow.samples;
    let batch = sample_gaussian(field.dim(), n, seed)?;
    let probe = &batch[..n.min(200)];
    let mut checks = vec![
        Check::exact("reversibility T_{t,s} T_{s,t} = id", reversibility_residual(&field, s, t, probe, flow.opts.solver)?.max_deviation, 10.0 * tol),
        Check::exact(
            "flow law T_{r,t} = T_{s,t} T_{r,s}",
            flow_law_residual(&field, s, 0.5 * (s + t), t, probe, flow.opts.solver)?.max_deviation,
            10.0 * tol,
        ),
    ];
    if field.is_autonomous() {
        let (a, b) = (0.4 * (t - s), 0.6 * (t - s));
        checks.push(Check::exact("group law T_a T_b = T_{a+b}", group_law_residual(&field, a, b, probe, flow.opts.solver)?.max_deviation, 100.0 * tol));
    }
    let result = integrate_flow(&field, s, t, &batch, flow.opts, true)?;
    checks.push(Check::exact("solver failures", result.failures.len() as f64, 0.0));
    let logs = result.log_density.as_ref().expect("requested");
    checks.push(Check::flag("density positive and finite", logs.iter().all(|l| l.exp() > 0.0 && l.is_finite())));
    if is_divergence_free(&field) {
        let worst = logs.iter().map(|l| l.exp_m1().abs()).fold(0.0, f64::max);
        checks.push(Check::exact("divergence-free: Λ = 1", worst, 10.0 * tol));
        let fresh = sample_gaussian(field.dim(), n, seed ^ 0xa5a5_a5a5)?;
        let mut worst_p = 1.0_f64;
        for i in 0..field.dim() {
            let moved: Vec<f64> = (0..n).filter_map(|k| result.endpoint(k).map(|e| e[i])).collect();
            let other: Vec<f64> = fresh.iter().map(|x| x[i]).collect();
            worst_p = worst_p.min(ks_two_sample(&moved, &other).1);
        }
        // reported as 1e-3 - p so that pass means p >= 1e-3
        checks.push(Check::mc("divergence-free: KS non-rejection (1e-3 - min p)", 1e-3 - worst_p, 0.0));
    }
    if let VectorField::Chaos(_) = &field {
        let lvl = field.dim().div_ceil(2);
        let dim = field.dim();
        let sp = GaussianSpace::new(dim, 4)?;
        let mut gap = 0.0_f64;
        for k in 0..50 {
            let mut rng = stream_rng(seed, k);
            let phi = random_poly(&mut rng, &sp, RandomShape::new(4, 4));
            let lhs = gradient(&conditional_project(&phi, lvl)?);
            gap = gap.max(field_gap(&lhs, &conditional_project_field(&gradient(&phi), lvl)?));
        }
        checks.push(Check::exact("∇E_m = E_m ∇ π_m", gap, 0.0));
    }
    Ok(checks)
}

fn flow_density(flow: &FlowSetup, seed: u64) -> Result<Vec<Check>> {
    let field = match &flow.field {
        Some(f) => f.clone(),
        None => VectorField::closed_form(ClosedForm::Tanh { dim: 1, rate: 1.0 })?,
    };
    let (s, t) = (flow.s, flow.t);
    let batch = sample_gaussian(field.dim(), flow.samples, seed)?;
    let result = integrate_flow(&field, s, t, &batch, flow.opts, true)?;
    let logs = result.log_density.as_ref().expect("requested");
    let mut checks = vec![Check::exact("solver failures", result.failures.len() as f64, 0.0)];
    checks.push(Check::flag("density positive and finite", logs.iter().all(|l| l.exp() > 0.0 && l.is_finite())));

    let endpoints = &batch[..batch.len().min(1000)];
    if endpoints.first().is_some_and(|y| log_density_analytic(&field, s, t, y).is_ok()) {
        let integral = density_along_flow(&field, s, t, endpoints, DensityMode::DivergenceIntegral, flow.opts.solver)?;
        let analytic = density_along_flow(&field, s, t, endpoints, DensityMode::AnalyticChangeOfVariables, flow.opts.solver)?;
        let gap = integral
            .iter()
            .zip(&analytic)
            .map(|(a, b)| match (a, b) {
                (Ok(a), Ok(b)) => (a.exp() - b.exp()).abs(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        checks.push(Check::exact("divergence-integral vs analytic density", gap, 1e-6));
    }

    let lam: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let mass = Estimate::from_values(&lam, Some(seed));
    checks.push(Check::mc("E[Λ] = 1", (mass.mean - 1.0).abs(), 4.0 * mass.std_error));

    type TestFn = fn(&[f64]) -> f64;
    let tests: [(&str, TestFn); 3] =
        [("x1", |x| x[0]), ("x1^2", |x| x[0] * x[0]), ("H3(x1)", |x| (x[0].powi(3) - 3.0 * x[0]) / 6f64.sqrt())];
    for (name, f) in tests {
        let pp = pushforward_pair(f, &result)?;
        let se = pp.transported.std_error.hypot(pp.weighted.std_error);
        checks.push(Check::mc(format!("E[f∘T] = E[fΛ], f = {name}"), (pp.transported.mean - pp.weighted.mean).abs(), 4.0 * se));
    }
    Ok(checks)
}

fn pde(flow: &FlowSetup, seed: u64) -> Result<Vec<Check>> {
    let setup = match &flow.pde {
        Some(p) => p.clone(),
        None => PdeSetup::rotation()?,
    };
    let batch = sample_gaussian(setup.a.dim(), flow.samples.min(1000), seed)?;
    let report = transport_pde_residual(&setup.a, &setup.f0, &setup.times, &batch, flow.opts)?;
    let mut checks = vec![Check::exact("solver failures", report.failures.len() as f64, 0.0)];
    if let (Some(r), Some(g)) = (report.max_residual, report.max_pathwise_gap) {
        checks.push(Check::exact("transport residual ∂f/∂t - δ(A∇f)", r, 1e-6));
        checks.push(Check::exact("pathwise vs exact pullback", g, 1e-6));
    }
    let b = VectorField::chaos(crate::flow::transport::transport_field(&setup.a)?)?;
    let g = group_law_residual(&b, 0.3, 0.5, &batch[..batch.len().min(200)], flow.opts.solver)?;
    checks.push(Check::exact("group law T_s T_t = T_{s+t}", g.max_deviation, 1e-7));
    Ok(checks)
}

fn adapted(flow: &FlowSetup, seed: u64) -> Result<Vec<Check>> {
    let field = match &flow.field {
        Some(f) => f.clone(),
        None => {
            let s = GaussianSpace::new(3, 2)?;
            VectorField::chaos(random_adapted_field(&mut stream_rng(seed, 0), &s, 3, 0.5)?)?
        }
    };
    let batch = sample_gaussian(field.dim(), flow.samples.min(200), seed)?;
    let result = integrate_flow(&field, flow.s, flow.t, &batch, flow.opts, false)?;
    let report = adaptedness_check(&field, &result, &flow.thetas)?;
    let mut checks = vec![Check::flag("field lower-triangular", report.lower_triangular)];
    for r in &report.per_theta {
        checks.push(Check::flag(format!("θ = {}: field adapted", r.theta), r.field_pass));
        checks.push(Check::exact(format!("θ = {}: flow sensitivity", r.theta), r.flow_sensitivity, report.flow_tolerance));
    }

    // negative control: v = (x2, 0, ...) must be rejected
    let dim = field.dim().max(2);
    let s = GaussianSpace::new(dim, 2)?;
    let mut comps = vec![ChaosPoly::zero(&s); dim];
    comps[0] = ChaosPoly::coordinate(&s, 1);
    let bad = VectorField::chaos(ChaosField::new(&s, comps)?)?;
    let bad_batch = sample_gaussian(dim, 20, seed)?;
    let bad_flow = integrate_flow(&bad, flow.s, flow.t, &bad_batch, flow.opts, false)?;
    // θ keeping only the first coordinate
    let bad_report = adaptedness_check(&bad, &bad_flow, &[0.5 / dim as f64])?;
    checks.push(Check::flag("non-adapted control detected", !bad_report.lower_triangular && !bad_report.per_theta[0].field_pass));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn small_algebraic_suites_pass() {
        let p = SuiteParams { cases: 20, mc_cases: 5, mehler_samples: 500, ..Default::default() };
        for s in [Suite::Duality, Suite::ProductRule, Suite::Spectral, Suite::Operator, Suite::Hodge] {
            let r = run_suite(s, &p, &FlowSetup::default(), 3).unwrap();
            assert!(r.pass, "{r:#?}");
        }
    }

    #[test]
    fn small_flow_suites_pass() {
        let f = FlowSetup { samples: 2000, ..Default::default() };
        for s in [Suite::FlowBasic, Suite::FlowDensity, Suite::Pde, Suite::Adapted] {
            let r = run_suite(s, &SuiteParams::default(), &f, 5).unwrap();
            assert!(r.pass, "{r:#?}");
        }
    }
}
