//! Explicit Runge–Kutta integrators: fixed-step RK4 and adaptive
//! Dormand–Prince 5(4). Both integrate forwards or backwards in time and
//! land exactly on every requested output time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration method and its accuracy target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Solver {
    Rk4 {
        step: f64,
    },
    Rk45 {
        #[serde(default = "default_tol")]
        atol: f64,
        #[serde(default = "default_tol")]
        rtol: f64,
    },
}

fn default_tol() -> f64 {
    1e-9
}

impl Default for Solver {
    fn default() -> Self {
        Self::Rk45 { atol: 1e-9, rtol: 1e-9 }
    }
}

impl Solver {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Rk4 { step } => step > 0.0 && step.is_finite(),
            Self::Rk45 { atol, rtol } => atol > 0.0 && rtol >= 0.0 && atol.is_finite() && rtol.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver settings {self:?}")))
        }
    }

    /// Nominal per-unit-time accuracy used when stating test bounds.
    pub fn tolerance(&self) -> f64 {
        match *self {
            Self::Rk4 { step } => step.powi(4),
            Self::Rk45 { atol, rtol } => atol.max(rtol),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl SolverStats {
    fn record(&mut self, h: f64) {
        let h = h.abs();
        if self.accepted == 0 {
            self.min_step = h;
            self.max_step = h;
        } else {
            self.min_step = self.min_step.min(h);
            self.max_step = self.max_step.max(h);
        }
        self.accepted += 1;
    }

    pub fn merge(&mut self, other: &SolverStats) {
        if other.accepted == 0 {
            self.rejected += other.rejected;
            return;
        }
        if self.accepted == 0 {
            *self = SolverStats { rejected: self.rejected + other.rejected, ..*other };
            return;
        }
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.min_step = self.min_step.min(other.min_step);
        self.max_step = self.max_step.max(other.max_step);
    }
}

/// Right-hand side `y' = f(t, y)`, written into `dy`.
pub trait Rhs {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

/// Integrates from `times[0]` through each later entry of `times`
/// (monotone in either direction), returning the state at every time.
pub fn integrate<R: Rhs>(
    rhs: &R,
    y0: &[f64],
    times: &[f64],
    solver: Solver,
) -> Result<(Vec<Vec<f64>>, SolverStats)> {
    solver.validate()?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty output grid".into()));
    }
    let mut stats = SolverStats::default();
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.to_vec();
    out.push(y.clone());
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t0 != t1 {
            match solver {
                Solver::Rk4 { step } => rk4_segment(rhs, &mut y, t0, t1, step, &mut stats)?,
                Solver::Rk45 { atol, rtol } => dopri_segment(rhs, &mut y, t0, t1, atol, rtol, &mut stats)?,
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

fn check_finite(y: &[f64], t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver(format!("non-finite state at t = {t}")))
    }
}

fn rk4_segment<R: Rhs>(rhs: &R, y: &mut [f64], t0: f64, t1: f64, step: f64, stats: &mut SolverStats) -> Result<()> {
    let n = y.len();
    let steps = ((t1 - t0).abs() / step).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs.eval(t, y, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs.eval(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(y, t + h)?;
        stats.record(h);
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dopri_segment<R: Rhs>(
    rhs: &R,
    y: &mut Vec<f64>,
    t0: f64,
    t1: f64,
    atol: f64,
    rtol: f64,
    stats: &mut SolverStats,
) -> Result<()> {
    let n = y.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut t = t0;
    rhs.eval(t, y, &mut k[0])?;
    // initial step from the derivative scale
    let d0 = norm_scaled(y, y, atol, rtol);
    let d1 = norm_scaled(&k[0], y, atol, rtol);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-15 * t1.abs().max(1.0) {
            return Ok(());
        }
        let last = h >= remaining;
        let hh = if last { remaining } else { h };
        let min_step = 1e-13 * t.abs().max(span).max(1.0);
        if hh < min_step {
            return Err(Error::Solver(format!("step-size underflow at t = {t:.6e}")));
        }
        let hs = dir * hh;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            rhs.eval(t + C[s] * hs, &tmp, &mut k[s])?;
        }
        let mut err = 0.0_f64;
        for i in 0..n {
            let mut hi = y[i];
            let mut lo = y[i];
            for s in 0..7 {
                hi += hs * B5[s] * k[s][i];
                lo += hs * B4[s] * k[s][i];
            }
            y5[i] = hi;
            let sc = atol + rtol * y[i].abs().max(hi.abs());
            err = err.max(((hi - lo) / sc).abs());
        }
        if !err.is_finite() {
            stats.rejected += 1;
            h = hh * 0.2;
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            std::mem::swap(y, &mut y5);
            check_finite(y, t)?;
            stats.record(hh);
            // first-same-as-last: stage 7 is f(t + h, y5)
            k.swap(0, 6);
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = hh * factor;
        } else {
            stats.rejected += 1;
            h = hh * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
}

fn norm_scaled(v: &[f64], y: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(y).map(|(a, b)| (a / (atol + rtol * b.abs())).powi(2)).sum::<f64>() / n).sqrt()
}
