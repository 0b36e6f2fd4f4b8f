//! Closed-form evaluators for the compression, privacy and convergence results.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fl_sim::LrSchedule;
use crate::masking::selection_probability;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrivacyParams {
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub users: u32,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if self.users < 2 {
            return Err(Error::config("users", "need at least 2 users"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.theta) {
            return Err(Error::config("theta", "must lie in [0, 0.5)"));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrivacyGuarantee {
    /// T = (1 - e^{-alpha}) (1 - theta) (1 - gamma) N.
    pub t: f64,
    /// alpha (1 - theta) (1 - gamma) N, the small-alpha limit.
    pub small_alpha: f64,
    /// p (1 - theta) (1 - gamma) N with the exact selection probability at this N.
    pub finite_n: f64,
}

/// Honest surviving contributors expected per coordinate.
pub fn privacy_guarantee(pp: &PrivacyParams) -> PrivacyGuarantee {
    let honest = (1.0 - pp.theta) * (1.0 - pp.gamma) * pp.users as f64;
    PrivacyGuarantee {
        t: -(-pp.alpha).exp_m1() * honest,
        small_alpha: pp.alpha * honest,
        finite_n: selection_probability(pp.alpha, pp.users) * honest,
    }
}

/// p' = (1 - theta) p: probability a coordinate of a given user reaches the server.
pub fn p_prime(alpha: f64, users: u32, theta: f64) -> f64 {
    (1.0 - theta) * selection_probability(alpha, users)
}

/// p~ = (1 - theta)^2 (1 - 2 x^{N-1} + x^{2N-3}) with x = 1 - alpha / (N - 1).
pub fn p_tilde(alpha: f64, users: u32, theta: f64) -> f64 {
    assert!(users >= 2, "p~ needs at least two users");
    let n = users as f64;
    let ln_x = (-(alpha / (n - 1.0)).min(1.0)).ln_1p();
    // 1 - 2 e^a + e^b written with exp_m1 to survive tiny alpha
    let joint = -2.0 * ((n - 1.0) * ln_x).exp_m1() + ((2.0 * n - 3.0) * ln_x).exp_m1();
    let value = (1.0 - theta).powi(2) * joint;
    debug_assert!(
        p_prime(alpha, users, theta).powi(2) <= value * (1.0 + 1e-12) + 1e-300,
        "p'^2 exceeds p~ at alpha={alpha} N={users} theta={theta}"
    );
    value
}

/// sum_i (beta_i^2 (1/p' - 1) + sum_{j != i} beta_i beta_j (p~/p'^2 - 1)).
pub fn selection_variance_factor(weights: &[f64], p_prime: f64, p_tilde: f64) -> f64 {
    let sum: f64 = weights.iter().sum();
    let squares: f64 = weights.iter().map(|b| b * b).sum();
    squares * (1.0 / p_prime - 1.0) + (sum * sum - squares) * (p_tilde / (p_prime * p_prime) - 1.0)
}

/// Bound on E|w - v|^2 after one synchronization step:
/// N d p' / (4 c^2) + 4 eta^2 E^2 G^2 * selection_variance_factor.
#[allow(clippy::too_many_arguments)]
pub fn variance_bound(
    users: u32,
    dim: usize,
    alpha: f64,
    theta: f64,
    level: u64,
    eta: f64,
    local_steps: usize,
    grad_bound: f64,
    weights: &[f64],
) -> f64 {
    let pp = p_prime(alpha, users, theta);
    let pt = p_tilde(alpha, users, theta);
    let quantization = users as f64 * dim as f64 * pp / (4.0 * (level as f64).powi(2));
    let e = local_steps as f64;
    quantization + 4.0 * eta * eta * e * e * grad_bound * grad_bound * selection_variance_factor(weights, pp, pt)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceParams {
    pub mu: f64,
    pub smoothness: f64,
    pub local_steps: usize,
    /// J, counted in local iterations as the schedule is.
    pub iterations: u64,
    pub grad_bound: f64,
    pub sigmas: Vec<f64>,
    /// Gamma = F* - sum_i beta_i F_i*.
    pub divergence: f64,
    pub level: u64,
    pub users: u32,
    pub dim: usize,
    pub alpha: f64,
    pub theta: f64,
    pub weights: Vec<f64>,
    /// |w^(0) - w*|^2.
    pub initial_distance_sq: f64,
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= self.smoothness && self.smoothness.is_finite()) {
            return Err(Error::config("mu", "need 0 < mu <= L"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("E", "must be at least 1"));
        }
        if self.weights.len() != self.users as usize || self.sigmas.len() != self.users as usize {
            return Err(Error::config("weights", "need one weight and one sigma per user"));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("weights", "must sum to 1"));
        }
        if self.level == 0 {
            return Err(Error::config("c", "must be at least 1"));
        }
        PrivacyParams {
            alpha: self.alpha,
            theta: self.theta,
            gamma: 0.0,
            users: self.users,
        }
        .validate()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.mu, self.smoothness, self.local_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceBound {
    pub b: f64,
    pub c: f64,
    /// Step size eta(t) used inside C.
    pub eta: f64,
    /// (2 L / mu) / (nu + J) * ((B + C) / mu + 2 L |w0 - w*|^2).
    pub bound: f64,
}

/// B, C at iteration `t`, and the resulting bound on E F(w^(J)) - F*.
pub fn convergence_bound(cp: &ConvergenceParams, t: u64) -> ConvergenceBound {
    let e = cp.local_steps as f64;
    let g2 = cp.grad_bound * cp.grad_bound;
    let b = cp
        .weights
        .iter()
        .zip(&cp.sigmas)
        .map(|(beta, s)| (beta * s).powi(2))
        .sum::<f64>()
        + 6.0 * cp.smoothness * cp.divergence
        + 8.0 * (e - 1.0).powi(2) * g2;
    let schedule = cp.schedule();
    let eta = schedule.rate(t);
    let pp = p_prime(cp.alpha, cp.users, cp.theta);
    let pt = p_tilde(cp.alpha, cp.users, cp.theta);
    let c = cp.users as f64 * cp.dim as f64 * pp / (4.0 * (cp.level as f64).powi(2)) / (eta * eta)
        + 4.0 * e * e * g2 * selection_variance_factor(&cp.weights, pp, pt);
    let kappa = cp.smoothness / cp.mu;
    let bound = 2.0 * kappa / (schedule.nu + cp.iterations as f64)
        * ((b + c) / cp.mu + 2.0 * cp.smoothness * cp.initial_distance_sq);
    ConvergenceBound { b, c, eta, bound }
}
