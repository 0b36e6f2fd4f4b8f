//! Repeated aggregation of one frozen set of local updates, re-drawing masks,
//! selections, rounding and dropouts each time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::training::sample_dropouts;
use crate::crypto::Seed;
use crate::error::{Error, Result};
use crate::protocol::{oracle_update, run_round, Cohort, ProtocolConfig, RoundInput};

/// Local updates y_i held fixed across trials.
#[derive(Clone, Debug)]
pub struct FrozenRound {
    pub updates: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Bound on every |y_i(l)|.
    pub clip: f64,
}

impl FrozenRound {
    /// sum_i beta_i y_i, the update plain FedAvg would apply.
    pub fn target(&self) -> Vec<f64> {
        let d = self.updates.first().map_or(0, Vec::len);
        (0..d)
            .map(|l| self.updates.iter().zip(&self.weights).map(|(y, b)| b * y[l]).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub trials: usize,
    /// Trials whose dropout draw left too few survivors; these contribute the
    /// plaintext aggregate the survivors would have produced.
    pub aborted: usize,
    pub target: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Mean of |update - target|^2 over trials.
    pub mean_sq_deviation: f64,
    pub mean_sq_deviation_std_err: f64,
}

impl MonteCarloSummary {
    pub fn z_scores(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.target)
            .zip(&self.std_err)
            .map(|((m, t), se)| {
                let diff = m - t;
                if *se > 0.0 {
                    diff / se
                } else if diff.abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Fraction of coordinates whose mean lies within `k` standard errors.
    pub fn fraction_within(&self, k: f64) -> f64 {
        let z = self.z_scores();
        z.iter().filter(|z| z.abs() < k).count() as f64 / z.len().max(1) as f64
    }
}

/// Running mean and variance.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn std_err(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

pub fn monte_carlo(
    cfg: &ProtocolConfig,
    frozen: &FrozenRound,
    trials: usize,
    master: &Seed,
) -> Result<MonteCarloSummary> {
    let cohort = Cohort::setup(cfg, master)?;
    let input = RoundInput {
        gradients: &frozen.updates,
        weights: &frozen.weights,
        clip: frozen.clip,
    };
    let target = frozen.target();
    let mut coords = vec![Moments::default(); cfg.dim];
    let mut deviation = Moments::default();
    let mut aborted = 0;
    for trial in 0..trials {
        let round = trial as u64;
        let mut rng = ChaCha8Rng::from_seed(*master.derive("mc-dropouts", &[round]).as_bytes());
        let dropped = sample_dropouts(cfg.theta, cfg.users, &mut rng);
        let update = if cfg.users as usize - dropped.len() < cfg.threshold() {
            aborted += 1;
            oracle_update(&cohort, round, &input, &dropped)?
        } else {
            let trace = run_round(&cohort, round, &input, &dropped)?;
            if !trace.exact() {
                return Err(Error::AggregateMismatch { round });
            }
            trace.update
        };
        let mut sq = 0.0;
        for ((m, u), t) in coords.iter_mut().zip(&update).zip(&target) {
            m.push(*u);
            sq += (u - t).powi(2);
        }
        deviation.push(sq);
    }
    Ok(MonteCarloSummary {
        trials,
        aborted,
        target,
        mean: coords.iter().map(|m| m.mean).collect(),
        std_err: coords.iter().map(Moments::std_err).collect(),
        mean_sq_deviation: deviation.mean,
        mean_sq_deviation_std_err: deviation.std_err(),
    })
}
