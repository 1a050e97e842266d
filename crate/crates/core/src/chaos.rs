//! Sparse Wiener-chaos expansions: scalar polys, vector fields and random
//! matrices in the normalized multivariate Hermite basis.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::{hermite_values, Linearization};
use crate::space::{check_same, GaussianSpace, MultiIndex};

/// What to do when an operation produces terms above the degree cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationPolicy {
    #[default]
    ErrorOnOverflow,
    TruncateToCap,
}

/// A scalar random variable `sum_α c_α H_α`.
///
/// Invariants: no stored zeros, every key has degree at most the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosPoly {
    space: Arc<GaussianSpace>,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl ChaosPoly {
    pub fn zero(space: &Arc<GaussianSpace>) -> Self {
        Self { space: Arc::clone(space), coeffs: BTreeMap::new() }
    }

    pub fn constant(space: &Arc<GaussianSpace>, c: f64) -> Self {
        let mut p = Self::zero(space);
        p.add_term(MultiIndex::zero(), c);
        p
    }

    /// The coordinate `x_dir = H_1(x_dir)`.
    pub fn coordinate(space: &Arc<GaussianSpace>, dir: usize) -> Self {
        Self::monomial(space, MultiIndex::unit(dir, 1), 1.0).expect("degree 1 fits any cap")
    }

    /// `c * H_alpha`, erroring when alpha exceeds the cap or the dimension.
    pub fn monomial(space: &Arc<GaussianSpace>, alpha: MultiIndex, c: f64) -> Result<Self> {
        Self::from_terms(space, [(alpha, c)])
    }

    pub fn from_terms(
        space: &Arc<GaussianSpace>,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Result<Self> {
        let mut p = Self::zero(space);
        for (alpha, c) in terms {
            if let Some(d) = alpha.max_direction() {
                if d >= space.dim() {
                    return Err(Error::DimensionMismatch { expected: space.dim(), found: d + 1 });
                }
            }
            if alpha.degree() > space.cap() {
                return Err(Error::DegreeOverflow { degree: alpha.degree(), cap: space.cap() });
            }
            p.add_term(alpha, c);
        }
        Ok(p)
    }

    /// Accumulates into a coefficient; caller guarantees the key is admissible.
    pub(crate) fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.coeffs.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let v = *o.get() + c;
                if v == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub(crate) fn from_map(space: &Arc<GaussianSpace>, mut coeffs: BTreeMap<MultiIndex, f64>) -> Self {
        coeffs.retain(|_, c| *c != 0.0);
        Self { space: Arc::clone(space), coeffs }
    }

    pub fn space(&self) -> &Arc<GaussianSpace> {
        &self.space
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.coeffs.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.coeffs.iter().map(|(a, c)| (a, *c))
    }

    /// Number of stored terms.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Highest total degree present (0 for the zero poly).
    pub fn degree(&self) -> u32 {
        self.coeffs.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    /// `E[p]`, the coefficient of the constant term.
    pub fn expectation(&self) -> f64 {
        self.coeff(&MultiIndex::zero())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    pub fn l2_inner(&self, other: &Self) -> Result<f64> {
        check_same(&self.space, &other.space)?;
        let (small, large) =
            if self.len() <= other.len() { (self, other) } else { (other, self) };
        Ok(small.coeffs.iter().map(|(a, c)| c * large.coeff(a)).sum())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_map(&self.space, self.coeffs.iter().map(|(a, c)| (a.clone(), c * s)).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        linear_combine(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        linear_combine(&[(1.0, self), (-1.0, other)])
    }

    /// Coefficient-wise map keeping the keys; zeros produced by `f` are dropped.
    pub fn map_coeffs(&self, mut f: impl FnMut(&MultiIndex, f64) -> f64) -> Self {
        Self::from_map(&self.space, self.coeffs.iter().map(|(a, c)| (a.clone(), f(a, *c))).collect())
    }

    pub fn retain(&self, mut keep: impl FnMut(&MultiIndex) -> bool) -> Self {
        let coeffs = self.coeffs.iter().filter(|(a, _)| keep(a)).map(|(a, c)| (a.clone(), *c)).collect();
        Self { space: Arc::clone(&self.space), coeffs }
    }

    /// Re-homes the poly on another space of the same dimension.
    pub fn embed(&self, space: &Arc<GaussianSpace>) -> Result<Self> {
        if space.dim() != self.space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: self.space.dim() });
        }
        let deg = self.degree();
        if deg > space.cap() {
            return Err(Error::DegreeOverflow { degree: deg, cap: space.cap() });
        }
        Ok(Self { space: Arc::clone(space), coeffs: self.coeffs.clone() })
    }

    /// Max absolute coefficient difference; `None` when spaces differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        check_same(&self.space, &other.space).ok()?;
        let mut worst = 0.0_f64;
        for (a, c) in &self.coeffs {
            worst = worst.max((c - other.coeff(a)).abs());
        }
        for (a, c) in &other.coeffs {
            if !self.coeffs.contains_key(a) {
                worst = worst.max(c.abs());
            }
        }
        Some(worst)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut table = HermiteTable::new(self.space.dim(), self.degree());
        table.fill(x);
        self.evaluate_with(&table)
    }

    pub fn evaluate_with(&self, table: &HermiteTable) -> f64 {
        self.coeffs
            .iter()
            .map(|(alpha, c)| c * alpha.iter().map(|(d, p)| table.get(d, p)).product::<f64>())
            .sum()
    }

    pub fn multiply(&self, other: &Self, policy: TruncationPolicy) -> Result<Self> {
        multiply(self, other, policy)
    }
}

/// Per-point cache of `H_k(x_i)` for all directions and degrees up to a bound.
pub struct HermiteTable {
    max_degree: usize,
    values: Vec<f64>,
}

impl HermiteTable {
    pub fn new(dim: usize, max_degree: u32) -> Self {
        let max_degree = max_degree as usize;
        Self { max_degree, values: vec![0.0; dim * (max_degree + 1)] }
    }

    pub fn fill(&mut self, x: &[f64]) {
        let stride = self.max_degree + 1;
        for (i, chunk) in self.values.chunks_mut(stride).enumerate() {
            hermite_values(x[i], chunk);
        }
    }

    #[inline]
    pub fn get(&self, dir: usize, power: u32) -> f64 {
        self.values[dir * (self.max_degree + 1) + power as usize]
    }
}

pub fn linear_combine(terms: &[(f64, &ChaosPoly)]) -> Result<ChaosPoly> {
    let Some((_, first)) = terms.first() else {
        return Err(Error::InvalidArgument("linear_combine needs at least one term".into()));
    };
    let space = first.space();
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for (s, p) in terms {
        check_same(space, p.space())?;
        for (a, c) in p.terms() {
            *out.entry(a.clone()).or_insert(0.0) += s * c;
        }
    }
    Ok(ChaosPoly::from_map(space, out))
}

/// Product via per-direction Hermite linearization.
pub fn multiply(a: &ChaosPoly, b: &ChaosPoly, policy: TruncationPolicy) -> Result<ChaosPoly> {
    check_same(a.space(), b.space())?;
    let space = a.space();
    let cap = space.cap();
    if a.is_zero() || b.is_zero() {
        return Ok(ChaosPoly::zero(space));
    }
    let top = a.degree() + b.degree();
    if top > cap && policy == TruncationPolicy::ErrorOnOverflow {
        return Err(Error::DegreeOverflow { degree: top, cap });
    }
    let lin = Linearization::global();
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    // partial products: (index so far, coefficient, degree so far)
    type Partial = (Vec<(usize, u32)>, f64, u32);
    let mut partial: Vec<Partial> = Vec::new();
    let mut dirs: Vec<usize> = Vec::new();
    for (alpha, ca) in a.terms() {
        for (beta, cb) in b.terms() {
            dirs.clear();
            dirs.extend(alpha.iter().map(|e| e.0));
            dirs.extend(beta.iter().map(|e| e.0));
            dirs.sort_unstable();
            dirs.dedup();
            partial.clear();
            partial.push((Vec::with_capacity(dirs.len()), ca * cb, 0));
            for &d in &dirs {
                let (m, n) = (alpha.get(d), beta.get(d));
                let mut next = Vec::with_capacity(partial.len() * (m.min(n) as usize + 1));
                for (idx, c, deg) in &partial {
                    for &(k, l) in lin.terms(m, n) {
                        if deg + k > cap {
                            continue;
                        }
                        let mut idx2 = idx.clone();
                        if k > 0 {
                            idx2.push((d, k));
                        }
                        next.push((idx2, c * l, deg + k));
                    }
                }
                partial = next;
            }
            for (idx, c, _) in partial.drain(..) {
                *out.entry(MultiIndex::from_pairs(idx)).or_insert(0.0) += c;
            }
        }
    }
    Ok(ChaosPoly::from_map(space, out))
}

/// A vector-valued random variable; component `i` is `<v, e_i>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosField {
    space: Arc<GaussianSpace>,
    components: Vec<ChaosPoly>,
}

impl ChaosField {
    pub fn zero(space: &Arc<GaussianSpace>) -> Self {
        Self { space: Arc::clone(space), components: vec![ChaosPoly::zero(space); space.dim()] }
    }

    pub fn new(space: &Arc<GaussianSpace>, components: Vec<ChaosPoly>) -> Result<Self> {
        if components.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: components.len() });
        }
        for c in &components {
            check_same(space, c.space())?;
        }
        Ok(Self { space: Arc::clone(space), components })
    }

    /// Deterministic field `sum_i h_i e_i`.
    pub fn constant(space: &Arc<GaussianSpace>, h: &[f64]) -> Result<Self> {
        if h.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: h.len() });
        }
        Ok(Self {
            space: Arc::clone(space),
            components: h.iter().map(|&c| ChaosPoly::constant(space, c)).collect(),
        })
    }

    /// The identity field `x -> x`.
    pub fn identity(space: &Arc<GaussianSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            components: (0..space.dim()).map(|i| ChaosPoly::coordinate(space, i)).collect(),
        }
    }

    pub fn space(&self) -> &Arc<GaussianSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &ChaosPoly {
        &self.components[i]
    }

    pub fn components(&self) -> &[ChaosPoly] {
        &self.components
    }

    pub fn into_components(self) -> Vec<ChaosPoly> {
        self.components
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(ChaosPoly::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(ChaosPoly::is_zero)
    }

    pub fn map(&self, f: impl FnMut(&ChaosPoly) -> ChaosPoly) -> Self {
        Self { space: Arc::clone(&self.space), components: self.components.iter().map(f).collect() }
    }

    pub fn try_map(&self, f: impl FnMut(&ChaosPoly) -> Result<ChaosPoly>) -> Result<Self> {
        let components = self.components.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self { space: Arc::clone(&self.space), components })
    }

    pub fn zip_with(
        &self,
        other: &Self,
        mut f: impl FnMut(&ChaosPoly, &ChaosPoly) -> Result<ChaosPoly>,
    ) -> Result<Self> {
        check_same(&self.space, &other.space)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { space: Arc::clone(&self.space), components })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|c| c.scale(s))
    }

    /// `alpha * v`, component-wise product with a scalar poly.
    pub fn scalar_mul(&self, alpha: &ChaosPoly, policy: TruncationPolicy) -> Result<Self> {
        self.try_map(|c| multiply(alpha, c, policy))
    }

    pub fn embed(&self, space: &Arc<GaussianSpace>) -> Result<Self> {
        let components = self.components.iter().map(|c| c.embed(space)).collect::<Result<_>>()?;
        Ok(Self { space: Arc::clone(space), components })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.dim() != other.dim() {
            return None;
        }
        self.components
            .iter()
            .zip(&other.components)
            .try_fold(0.0_f64, |acc, (a, b)| Some(acc.max(a.max_abs_diff(b)?)))
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }

    /// `E||v||^2` in the Cameron–Martin norm.
    pub fn l2_norm_sq(&self) -> f64 {
        self.components.iter().map(ChaosPoly::l2_norm_sq).sum()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut table = HermiteTable::new(self.dim(), self.degree());
        table.fill(x);
        self.evaluate_with(&table)
    }

    pub fn evaluate_with(&self, table: &HermiteTable) -> Vec<f64> {
        self.components.iter().map(|c| c.evaluate_with(table)).collect()
    }
}

/// Pointwise pairing `sum_i u_i v_i`.
pub fn field_pair(u: &ChaosField, v: &ChaosField, policy: TruncationPolicy) -> Result<ChaosPoly> {
    check_same(u.space(), v.space())?;
    let mut acc = ChaosPoly::zero(u.space());
    for (a, b) in u.components().iter().zip(v.components()) {
        acc = acc.add(&multiply(a, b, policy)?)?;
    }
    Ok(acc)
}

/// An operator-valued random variable; entry `(i, j)` is `<K e_j, e_i>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosMatrix {
    space: Arc<GaussianSpace>,
    entries: Vec<ChaosPoly>,
}

impl ChaosMatrix {
    pub fn zero(space: &Arc<GaussianSpace>) -> Self {
        let n = space.dim();
        Self { space: Arc::clone(space), entries: vec![ChaosPoly::zero(space); n * n] }
    }

    /// Builds from row-major entries.
    pub fn from_rows(space: &Arc<GaussianSpace>, rows: Vec<Vec<ChaosPoly>>) -> Result<Self> {
        let n = space.dim();
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rows.len() });
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            for e in row {
                check_same(space, e.space())?;
                entries.push(e);
            }
        }
        Ok(Self { space: Arc::clone(space), entries })
    }

    pub fn constant(space: &Arc<GaussianSpace>, rows: &[Vec<f64>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|&c| ChaosPoly::constant(space, c)).collect())
            .collect();
        Self::from_rows(space, rows)
    }

    pub fn identity(space: &Arc<GaussianSpace>) -> Self {
        let mut m = Self::zero(space);
        for i in 0..space.dim() {
            *m.entry_mut(i, i) = ChaosPoly::constant(space, 1.0);
        }
        m
    }

    /// `y v^T`, the matrix with entry `(i,j) = y_i v_j`; it maps `l` to `<v,l> y`.
    pub fn outer(y: &ChaosField, v: &ChaosField, policy: TruncationPolicy) -> Result<Self> {
        check_same(y.space(), v.space())?;
        let n = y.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(multiply(y.component(i), v.component(j), policy)?);
            }
        }
        Ok(Self { space: Arc::clone(y.space()), entries })
    }

    pub fn space(&self) -> &Arc<GaussianSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn entry(&self, i: usize, j: usize) -> &ChaosPoly {
        &self.entries[i * self.dim() + j]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut ChaosPoly {
        let n = self.dim();
        &mut self.entries[i * n + j]
    }

    pub fn row(&self, i: usize) -> ChaosField {
        let n = self.dim();
        ChaosField {
            space: Arc::clone(&self.space),
            components: self.entries[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn column(&self, j: usize) -> ChaosField {
        ChaosField {
            space: Arc::clone(&self.space),
            components: (0..self.dim()).map(|i| self.entry(i, j).clone()).collect(),
        }
    }

    pub fn rows(&self) -> Vec<ChaosField> {
        (0..self.dim()).map(|i| self.row(i)).collect()
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(ChaosPoly::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(ChaosPoly::is_zero)
    }

    pub fn map(&self, f: impl FnMut(&ChaosPoly) -> ChaosPoly) -> Self {
        Self { space: Arc::clone(&self.space), entries: self.entries.iter().map(f).collect() }
    }

    pub fn try_map(&self, f: impl FnMut(&ChaosPoly) -> Result<ChaosPoly>) -> Result<Self> {
        let entries = self.entries.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self { space: Arc::clone(&self.space), entries })
    }

    pub fn zip_with(
        &self,
        other: &Self,
        mut f: impl FnMut(&ChaosPoly, &ChaosPoly) -> Result<ChaosPoly>,
    ) -> Result<Self> {
        check_same(&self.space, &other.space)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { space: Arc::clone(&self.space), entries })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|e| e.scale(s))
    }

    pub fn embed(&self, space: &Arc<GaussianSpace>) -> Result<Self> {
        let entries = self.entries.iter().map(|c| c.embed(space)).collect::<Result<_>>()?;
        Ok(Self { space: Arc::clone(space), entries })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.dim() != other.dim() {
            return None;
        }
        self.entries
            .iter()
            .zip(&other.entries)
            .try_fold(0.0_f64, |acc, (a, b)| Some(acc.max(a.max_abs_diff(b)?)))
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }

    /// Row-major values at a point.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut table = HermiteTable::new(self.dim(), self.degree());
        table.fill(x);
        self.entries.iter().map(|e| e.evaluate_with(&table)).collect()
    }
}
