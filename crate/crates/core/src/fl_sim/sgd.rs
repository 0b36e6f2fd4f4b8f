//! Local SGD and the decaying step-size schedule.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::LocalDataset;

/// eta(t) = 2 / (mu (nu + t)) with nu = max(8 L / mu, E); `t` counts local steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub mu: f64,
    pub nu: f64,
}

impl LrSchedule {
    pub fn new(mu: f64, smoothness: f64, local_steps: usize) -> Self {
        LrSchedule {
            mu,
            nu: (8.0 * smoothness / mu).max(local_steps as f64),
        }
    }

    pub fn rate(&self, iteration: u64) -> f64 {
        2.0 / (self.mu * (self.nu + iteration as f64))
    }
}

/// Per-user local training settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSgd {
    /// E, local steps per round.
    pub steps: usize,
    /// Samples per mini-batch, drawn uniformly with replacement.
    pub batch: usize,
    /// G: each stochastic gradient is rescaled to norm at most this.
    pub grad_clip: f64,
}

impl LocalSgd {
    /// Largest |y(l)| a round starting at `iteration` can produce.
    pub fn update_bound(&self, schedule: &LrSchedule, iteration: u64) -> f64 {
        self.steps as f64 * schedule.rate(iteration) * self.grad_clip
    }
}

fn clip_norm(g: &mut DVector<f64>, bound: f64) {
    let norm = g.norm();
    if norm > bound {
        *g *= bound / norm;
    }
}

/// Runs E steps from `w` and returns y = sum_j eta(t + j) g_j, so the local
/// model ends at w - y.
pub fn local_sgd<R: Rng + ?Sized>(
    w: &DVector<f64>,
    data: &LocalDataset,
    sgd: &LocalSgd,
    schedule: &LrSchedule,
    iteration: u64,
    rng: &mut R,
) -> DVector<f64> {
    let mut local = w.clone();
    let mut batch = vec![0usize; sgd.batch.max(1)];
    for j in 0..sgd.steps {
        for k in batch.iter_mut() {
            *k = rng.random_range(0..data.len());
        }
        let mut g = data.batch_gradient(&local, &batch);
        clip_norm(&mut g, sgd.grad_clip);
        local.axpy(-schedule.rate(iteration + j as u64), &g, 1.0);
    }
    w - local
}
