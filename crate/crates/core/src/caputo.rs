//! Discrete-in-time weights for the Caputo fractional derivative of order
//! α ∈ (0,1), using the piecewise-linear (L1) quadrature on a uniform grid
//! t_n = n·dt.
//!
//! The scheme is characterized by the scale factor `s = dt^α · Γ(2−α)` and
//! two weight families:
//!
//! * step weights `b_n = n^{1−α} − (n−1)^{1−α}` for n = 1..=M,
//! * history weights `c_k = 2k^{1−α} − (k+1)^{1−α} − (k−1)^{1−α}` for
//!   k = 1..=M−1.
//!
//! They satisfy `c_k = b_k − b_{k+1}` and the telescoping identity
//! `Σ_{k=1}^{n−1} c_k + b_n = b_1 = 1`, which the tests pin down. With these
//! weights, `s · ∂_t^α u` at step n is approximated by
//! `u^n − (c_1 u^{n−1} + … + c_{n−1} u^1 + b_n u^0)`; the parenthesized
//! combination is what [`history_combination`] assembles from stored states.

use crate::error::{Error, Result};
use statrs::function::gamma::gamma;

/// Precomputed L1 weights for one (α, dt, M) configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CaputoScheme {
    /// Fractional order α ∈ (0,1).
    pub alpha: f64,
    /// Time step dt > 0.
    pub dt: f64,
    /// Number of time steps M.
    pub num_steps: usize,
    /// Scale factor s = dt^α · Γ(2−α).
    pub scale: f64,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Build the L1 weight tables for `num_steps` uniform steps of size `dt`.
pub fn build_scheme(alpha: f64, dt: f64, num_steps: usize) -> Result<CaputoScheme> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "fractional order must lie strictly in (0,1), got {alpha}"
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if num_steps == 0 {
        return Err(Error::invalid("need at least one time step"));
    }
    let e = 1.0 - alpha;
    let pow = |n: usize| (n as f64).powf(e);
    let b: Vec<f64> = (1..=num_steps).map(|n| pow(n) - pow(n - 1)).collect();
    let c: Vec<f64> = (1..num_steps)
        .map(|k| 2.0 * pow(k) - pow(k + 1) - pow(k - 1))
        .collect();
    Ok(CaputoScheme {
        alpha,
        dt,
        num_steps,
        scale: dt.powf(alpha) * gamma(2.0 - alpha),
        b,
        c,
    })
}

impl CaputoScheme {
    /// Step weight b_n, 1-based, n ≤ M.
    pub fn b(&self, n: usize) -> f64 {
        self.b[n - 1]
    }

    /// History weight c_k, 1-based, k ≤ M−1.
    pub fn c(&self, k: usize) -> f64 {
        self.c[k - 1]
    }

    /// All step weights b_1..b_M.
    pub fn step_weights(&self) -> &[f64] {
        &self.b
    }

    /// All history weights c_1..c_{M−1}.
    pub fn history_weights(&self) -> &[f64] {
        &self.c
    }

    /// Physical time of step n.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Weighted combination of past states entering the step-`n` right-hand side:
/// `c_1·β^{n−1} + c_2·β^{n−2} + … + c_{n−1}·β^1 + b_n·β^0`.
///
/// `states` must hold β^0 .. β^{n−1} in order, all of equal length.
pub fn history_combination(
    scheme: &CaputoScheme,
    n: usize,
    states: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if n == 0 || n > scheme.num_steps {
        return Err(Error::invalid(format!(
            "step index {n} outside 1..={}",
            scheme.num_steps
        )));
    }
    if states.len() != n {
        return Err(Error::invalid(format!(
            "need {n} past states for step {n}, got {}",
            states.len()
        )));
    }
    let len = states[0].len();
    if states.iter().any(|s| s.len() != len) {
        return Err(Error::invalid("past states have mismatched lengths"));
    }
    let mut out = vec![0.0; len];
    // b_n · β^0
    let b_n = scheme.b(n);
    for (o, v) in out.iter_mut().zip(&states[0]) {
        *o += b_n * v;
    }
    // c_k · β^{n−k} for k = 1..n−1
    for k in 1..n {
        let ck = scheme.c(k);
        for (o, v) in out.iter_mut().zip(&states[n - k]) {
            *o += ck * v;
        }
    }
    Ok(out)
}
