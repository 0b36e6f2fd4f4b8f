//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; errors surface as thrown JS errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sparse_secagg::analysis::{
    convergence_bound, p_prime, p_tilde, privacy_guarantee, ConvergenceParams, PrivacyParams,
};
use sparse_secagg::crypto::Seed;
use sparse_secagg::masking::selection_probability;
use sparse_secagg::protocol::{run_round, Cohort, Mode, ProtocolConfig, RoundInput};
use wasm_bindgen::prelude::*;

/// Caps that keep a round interactive in the browser.
pub const MAX_USERS: u32 = 64;
pub const MAX_DIM: usize = 4096;
const PREVIEW: usize = 8;

#[derive(Debug, Serialize, PartialEq)]
pub struct PrivacySummary {
    pub p: f64,
    pub p_prime: f64,
    pub p_tilde: f64,
    pub t: f64,
    pub t_small_alpha: f64,
    pub t_finite_n: f64,
}

pub fn privacy_summary(users: u32, alpha: f64, theta: f64, gamma: f64) -> Result<PrivacySummary, String> {
    let pp = PrivacyParams {
        alpha,
        theta,
        gamma,
        users,
    };
    pp.validate().map_err(|e| e.to_string())?;
    let g = privacy_guarantee(&pp);
    Ok(PrivacySummary {
        p: selection_probability(alpha, users),
        p_prime: p_prime(alpha, users, theta),
        p_tilde: p_tilde(alpha, users, theta),
        t: g.t,
        t_small_alpha: g.small_alpha,
        t_finite_n: g.finite_n,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct RoundSummary {
    pub exact: bool,
    pub senders: usize,
    pub dropped: Vec<u32>,
    pub sparse_bytes_per_sender: f64,
    pub dense_bytes_per_sender: f64,
    /// Share of coordinates sent per survivor.
    pub sent_fraction: f64,
    /// Count of coordinates by number of surviving contributors.
    pub contributor_histogram: Vec<usize>,
    /// Leading coordinates of the survivors' weighted gradient sum.
    pub plain_sum: Vec<f64>,
    /// The same coordinates of the securely aggregated update.
    pub secure_update: Vec<f64>,
}

/// One sparse round and one dense round over the same random gradients,
/// with the first `dropouts` users dropping after the selection step.
pub fn round_summary(
    users: u32,
    dim: usize,
    alpha: f64,
    theta: f64,
    dropouts: u32,
    seed: u64,
) -> Result<RoundSummary, String> {
    if users > MAX_USERS || dim > MAX_DIM {
        return Err(format!("demo limits: N <= {MAX_USERS}, d <= {MAX_DIM}"));
    }
    let cfg = ProtocolConfig {
        users,
        dim,
        alpha,
        theta,
        ..Default::default()
    };
    let master = Seed::from_u64(seed);
    let cohort = Cohort::setup(&cfg, &master).map_err(|e| e.to_string())?;
    let dense = Cohort::setup(
        &ProtocolConfig {
            mode: Mode::Baseline,
            ..cfg.clone()
        },
        &master,
    )
    .map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gradients: Vec<Vec<f64>> = (0..users)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let weights = vec![1.0 / users as f64; users as usize];
    let input = RoundInput {
        gradients: &gradients,
        weights: &weights,
        clip: 1.0,
    };
    let dropped: Vec<u32> = (0..dropouts.min(users)).collect();

    let sparse = run_round(&cohort, 0, &input, &dropped).map_err(|e| e.to_string())?;
    let baseline = run_round(&dense, 0, &input, &dropped).map_err(|e| e.to_string())?;

    let survivors = sparse.senders();
    let mut histogram = vec![0; survivors + 1];
    for &c in &sparse.contributors {
        histogram[c as usize] += 1;
    }
    let sent: usize = sparse.contributors.iter().map(|&c| c as usize).sum();
    let preview = dim.min(PREVIEW);
    let plain_sum = (0..preview)
        .map(|l| {
            (dropouts.min(users)..users)
                .map(|u| weights[u as usize] * gradients[u as usize][l])
                .sum()
        })
        .collect();
    Ok(RoundSummary {
        exact: sparse.exact() && baseline.exact(),
        senders: survivors,
        dropped: sparse.dropped.clone(),
        sparse_bytes_per_sender: sparse.mean_bytes_per_sender(),
        dense_bytes_per_sender: baseline.mean_bytes_per_sender(),
        sent_fraction: if survivors == 0 {
            0.0
        } else {
            sent as f64 / (survivors * dim) as f64
        },
        contributor_histogram: histogram,
        plain_sum,
        secure_update: sparse.update[..preview].to_vec(),
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct BoundPoint {
    pub rounds: u64,
    pub bound: f64,
}

/// Convergence bound after `J` rounds for J = 1..=rounds, on a unit-distance,
/// noise-free, IID setting with the demo's smoothness constants.
pub fn bound_curve(
    users: u32,
    dim: usize,
    alpha: f64,
    theta: f64,
    level: u64,
    rounds: u64,
) -> Result<Vec<BoundPoint>, String> {
    let n = users as usize;
    let base = ConvergenceParams {
        mu: 0.5,
        smoothness: 2.0,
        local_steps: 5,
        iterations: 5,
        grad_bound: 20.0,
        sigmas: vec![0.0; n],
        divergence: 0.0,
        level,
        users,
        dim,
        alpha,
        theta,
        weights: vec![1.0 / n.max(1) as f64; n],
        initial_distance_sq: 1.0,
    };
    base.validate().map_err(|e| e.to_string())?;
    Ok((1..=rounds)
        .map(|j| {
            let cp = ConvergenceParams {
                iterations: j * 5,
                ..base.clone()
            };
            BoundPoint {
                rounds: j,
                bound: convergence_bound(&cp, (j - 1) * 5).bound,
            }
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn privacy(users: u32, alpha: f64, theta: f64, gamma: f64) -> Result<String, JsError> {
    to_js(privacy_summary(users, alpha, theta, gamma))
}

#[wasm_bindgen]
pub fn round(users: u32, dim: usize, alpha: f64, theta: f64, dropouts: u32, seed: u64) -> Result<String, JsError> {
    to_js(round_summary(users, dim, alpha, theta, dropouts, seed))
}

#[wasm_bindgen]
pub fn bound(users: u32, dim: usize, alpha: f64, theta: f64, level: u64, rounds: u64) -> Result<String, JsError> {
    to_js(bound_curve(users, dim, alpha, theta, level, rounds))
}
