//! Gauss–Legendre and Gauss–Hermite rules, computed by Newton iteration on
//! the three-term recurrences.

use std::f64::consts::PI;

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let legendre = |z: f64| {
            let (mut p0, mut p1) = (1.0, z);
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * z * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            (p1, nf * (z * p1 - p0) / (z * z - 1.0))
        };
        for _ in 0..100 {
            let (pn, dp) = legendre(z);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let dp = legendre(z).1;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Composite Gauss–Legendre over `[a, b]` with `panels` equal panels.
pub fn composite_legendre(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(mid + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    Rule { nodes, weights }
}

/// `n`-point Gauss–Hermite rule for the standard normal law: weights sum to 1
/// and `sum w_k f(x_k)` approximates `E f(X)`, exact for polynomials of degree
/// below `2n`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    // physicists' orthonormal recurrence, then rescale to the N(0,1) weight
    let pim4 = PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        let w = 2.0 / (pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let sqrt_pi = PI.sqrt();
    let mut rule = Rule {
        nodes: nodes.iter().map(|x| x * sqrt2).collect(),
        weights: weights.iter().map(|w| w / sqrt_pi).collect(),
    };
    // ascending order
    rule.nodes.reverse();
    rule.weights.reverse();
    rule
}

/// Tensor-product Gauss–Hermite points and weights in `dim` dimensions.
pub fn gauss_hermite_tensor(dim: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rule = gauss_hermite(n);
    let mut points = vec![Vec::with_capacity(dim)];
    let mut weights = vec![1.0];
    for _ in 0..dim {
        let mut next_p = Vec::with_capacity(points.len() * n);
        let mut next_w = Vec::with_capacity(points.len() * n);
        for (p, w) in points.iter().zip(&weights) {
            for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                let mut q = p.clone();
                q.push(*x);
                next_p.push(q);
                next_w.push(w * wx);
            }
        }
        points = next_p;
        weights = next_w;
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(5);
        assert!((r.integrate(|x| x.powi(8)) - 2.0 / 9.0).abs() < 1e-14);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!((gauss_legendre(1).weights[0] - 2.0).abs() < 1e-15);
        assert!((gauss_legendre(3).weights[1] - 8.0 / 9.0).abs() < 1e-15);
        let c = composite_legendre(0.0, 3.0, 7, 8);
        assert!((c.integrate(f64::exp) - (3f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn hermite_moments() {
        for n in [1, 2, 5, 20, 60] {
            let r = gauss_hermite(n);
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13, "n={n}");
            if n >= 3 {
                assert!((r.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-11);
                assert!(r.integrate(|x| x.powi(3)).abs() < 1e-12);
            }
        }
        let r = gauss_hermite(40);
        assert!((r.integrate(|x| x.powi(10)) - 945.0).abs() < 1e-8);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tensor_rule_covariance() {
        let (p, w) = gauss_hermite_tensor(2, 4);
        assert_eq!(p.len(), 16);
        let cov: f64 = p.iter().zip(&w).map(|(x, w)| w * x[0] * x[1]).sum();
        let var: f64 = p.iter().zip(&w).map(|(x, w)| w * x[1] * x[1]).sum();
        assert!(cov.abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-13);
    }
}
