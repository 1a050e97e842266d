//! Ambient finite-dimensional Gaussian space and Hermite multi-indices.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest degree cap supported by the exact linearization tables.
pub const MAX_DEGREE_CAP: u32 = 40;

/// The standard Gaussian measure on `R^dim`, truncated to Hermite degree `cap`.
///
/// `weights` optionally define the surrogate norm `||x||_W = ||Q x||` with
/// `Q = diag(q_1, .., q_n)`, which plays the role of the larger Banach norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpace {
    dim: usize,
    cap: u32,
    weights: Option<Vec<f64>>,
}

impl GaussianSpace {
    pub fn new(dim: usize, cap: u32) -> Result<Arc<Self>> {
        Self::build(dim, cap, None)
    }

    pub fn with_weights(dim: usize, cap: u32, weights: Vec<f64>) -> Result<Arc<Self>> {
        Self::build(dim, cap, Some(weights))
    }

    pub fn build(dim: usize, cap: u32, weights: Option<Vec<f64>>) -> Result<Arc<Self>> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        if cap == 0 || cap > MAX_DEGREE_CAP {
            return Err(Error::InvalidArgument(format!(
                "degree cap must lie in 1..={MAX_DEGREE_CAP}, got {cap}"
            )));
        }
        if let Some(w) = &weights {
            if w.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: w.len() });
            }
            if w.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
                return Err(Error::InvalidArgument("weights must be finite and positive".into()));
            }
        }
        Ok(Arc::new(Self { dim, cap, weights }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Same dimension and weights, different degree cap.
    pub fn with_cap(&self, cap: u32) -> Result<Arc<Self>> {
        Self::build(self.dim, cap, self.weights.clone())
    }

    /// `||Q x||`, falling back to the Euclidean norm when no weights are set.
    pub fn weighted_norm(&self, x: &[f64]) -> f64 {
        match &self.weights {
            Some(q) => x.iter().zip(q).map(|(xi, qi)| (qi * xi).powi(2)).sum::<f64>().sqrt(),
            None => x.iter().map(|xi| xi * xi).sum::<f64>().sqrt(),
        }
    }
}

pub(crate) fn same_space(a: &Arc<GaussianSpace>, b: &Arc<GaussianSpace>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

pub(crate) fn check_same(a: &Arc<GaussianSpace>, b: &Arc<GaussianSpace>) -> Result<()> {
    if same_space(a, b) {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

/// A Hermite multi-index, stored as sorted `(direction, power)` pairs with
/// zero powers dropped. Equality and ordering are by value.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<(u32, u32)>,
}

impl MultiIndex {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The index `power * e_dir`.
    pub fn unit(dir: usize, power: u32) -> Self {
        let mut m = Self::zero();
        m.set(dir, power);
        m
    }

    pub fn from_dense(alpha: &[u32]) -> Self {
        let entries = alpha
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, &p)| (i as u32, p))
            .collect();
        Self { entries }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut m = Self::zero();
        for (d, p) in pairs {
            let cur = m.get(d);
            m.set(d, cur + p);
        }
        m
    }

    pub fn to_dense(&self, dim: usize) -> Vec<u32> {
        let mut out = vec![0; dim];
        for &(d, p) in &self.entries {
            out[d as usize] = p;
        }
        out
    }

    pub fn get(&self, dir: usize) -> u32 {
        match self.entries.binary_search_by_key(&(dir as u32), |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    pub fn set(&mut self, dir: usize, power: u32) {
        let d = dir as u32;
        match self.entries.binary_search_by_key(&d, |e| e.0) {
            Ok(i) if power == 0 => {
                self.entries.remove(i);
            }
            Ok(i) => self.entries[i].1 = power,
            Err(_) if power == 0 => {}
            Err(i) => self.entries.insert(i, (d, power)),
        }
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nonzero `(direction, power)` pairs in increasing direction order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().map(|&(d, p)| (d as usize, p))
    }

    /// Largest direction with a nonzero power, if any.
    pub fn max_direction(&self) -> Option<usize> {
        self.entries.last().map(|e| e.0 as usize)
    }

    /// True when every nonzero power sits in a direction `< m`.
    pub fn supported_below(&self, m: usize) -> bool {
        self.max_direction().is_none_or(|d| d < m)
    }

    pub fn raised(&self, dir: usize) -> Self {
        let mut m = self.clone();
        m.set(dir, self.get(dir) + 1);
        m
    }

    pub fn lowered(&self, dir: usize) -> Option<Self> {
        let p = self.get(dir);
        (p > 0).then(|| {
            let mut m = self.clone();
            m.set(dir, p - 1);
            m
        })
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    /// Graded order: total degree first, then the sparse entries lexicographically.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.entries.cmp(&other.entries))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "α{{")?;
        for (k, (d, p)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}:{p}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_storage_compares_by_value() {
        let a = MultiIndex::from_dense(&[0, 2, 0, 1]);
        let b = MultiIndex::from_pairs([(3, 1), (1, 2)]);
        assert_eq!(a, b);
        assert_eq!(a.degree(), 3);
        assert_eq!(a.to_dense(5), vec![0, 2, 0, 1, 0]);
        assert_eq!(MultiIndex::from_dense(&[0, 0]), MultiIndex::zero());
    }

    #[test]
    fn ladder_moves() {
        let a = MultiIndex::unit(1, 1);
        assert_eq!(a.lowered(1), Some(MultiIndex::zero()));
        assert_eq!(a.lowered(0), None);
        assert_eq!(a.raised(1).get(1), 2);
        assert!(a.supported_below(2));
        assert!(!a.supported_below(1));
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(GaussianSpace::new(0, 3).is_err());
        assert!(GaussianSpace::new(2, 0).is_err());
        assert!(GaussianSpace::with_weights(2, 3, vec![1.0]).is_err());
        assert!(GaussianSpace::with_weights(2, 3, vec![1.0, -1.0]).is_err());
        let s = GaussianSpace::with_weights(2, 3, vec![1.0, 0.5]).unwrap();
        assert!((s.weighted_norm(&[3.0, 8.0]) - 5.0).abs() < 1e-15);
    }
}
