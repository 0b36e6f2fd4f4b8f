//! One full aggregation round: quantize, mask, send, aggregate, recover, unmask.

use super::baseline::prepare_dense_user;
use super::cohort::Cohort;
use super::config::Mode;
use super::message::{MaskedGradient, SparseMaskedGradient};
use super::server::ServerRoundState;
use crate::crypto::{DomainTag, LaneReader, Purpose};
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField};
use crate::masking::{MaskSet, PairMask};
use crate::quantizer::{check_overflow_budget, dequantize_aggregate, quantize_at, QuantizationConfig};

/// Plain local gradients of every user for one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundInput<'a> {
    pub gradients: &'a [Vec<f64>],
    pub weights: &'a [f64],
    /// Bound on each raw gradient coordinate.
    pub clip: f64,
}

/// A sender's view of the round.
#[derive(Clone, Debug)]
pub struct UserRound {
    pub user: u32,
    /// Coordinates sent (the selection set, or everything in baseline mode).
    pub locations: Vec<u32>,
    /// Quantized gradient at `locations`.
    pub quantized: Vec<FieldElement>,
    pub message: MaskedGradient,
}

/// Everything observed in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub round: u64,
    pub dropped: Vec<u32>,
    /// Wire bytes per user; zero for users that dropped.
    pub bytes_sent: Vec<usize>,
    /// Surviving senders per coordinate.
    pub contributors: Vec<u32>,
    /// Surviving senders per coordinate that are not labelled adversarial.
    pub honest_contributors: Vec<u32>,
    /// Unmasked field aggregate.
    pub aggregate: Vec<FieldElement>,
    /// Sum of survivors' quantized gradients over their own selections.
    pub oracle: Vec<FieldElement>,
    /// Dequantized aggregate.
    pub update: Vec<f64>,
    /// Global loss after the update, filled in by the training loop.
    pub loss: Option<f64>,
}

impl RoundTrace {
    pub fn exact(&self) -> bool {
        self.aggregate == self.oracle
    }

    pub fn senders(&self) -> usize {
        self.bytes_sent.len() - self.dropped.len()
    }

    pub fn mean_bytes_per_sender(&self) -> f64 {
        let senders = self.senders();
        if senders == 0 {
            return 0.0;
        }
        self.bytes_sent.iter().sum::<usize>() as f64 / senders as f64
    }
}

fn quantization(cohort: &Cohort, input: &RoundInput, user: u32) -> QuantizationConfig {
    QuantizationConfig {
        level: cohort.config().level,
        weight: input.weights[user as usize],
        participation: cohort.config().participation(),
        clip: input.clip,
    }
}

fn validate_input(cohort: &Cohort, input: &RoundInput) -> Result<()> {
    let cfg = cohort.config();
    let n = cfg.users as usize;
    if input.gradients.len() != n || input.weights.len() != n {
        return Err(Error::config(
            "gradients",
            format!("expected one gradient and weight per user ({n})"),
        ));
    }
    if input.gradients.iter().any(|g| g.len() != cfg.dim) {
        return Err(Error::config(
            "gradients",
            format!("every gradient must have length {}", cfg.dim),
        ));
    }
    for &w in input.weights {
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::config("weights", "must lie in (0, 1]"));
        }
    }
    let beta_max = input.weights.iter().copied().fold(0.0, f64::max);
    check_overflow_budget(n, cfg.level, beta_max, input.clip, cfg.participation(), cohort.field())
}

fn senders(cohort: &Cohort, dropped: &[u32]) -> Result<(Vec<u32>, Vec<u32>)> {
    let n = cohort.users();
    let mut out = vec![false; n as usize];
    for &u in dropped {
        if u >= n {
            return Err(Error::config("dropped", format!("user {u} is not in the cohort")));
        }
        out[u as usize] = true;
    }
    let senders = (0..n).filter(|&u| !out[u as usize]).collect();
    let dropped = (0..n).filter(|&u| out[u as usize]).collect();
    Ok((senders, dropped))
}

/// User-side work of every sender: quantized selections and masked messages.
pub fn prepare_users(cohort: &Cohort, round: u64, input: &RoundInput, senders: &[u32]) -> Result<Vec<UserRound>> {
    match cohort.config().mode {
        Mode::Sparse => prepare_sparse_users(cohort, round, input, senders),
        Mode::Baseline => senders
            .iter()
            .map(|&u| {
                prepare_dense_user(
                    cohort,
                    round,
                    &input.gradients[u as usize],
                    quantization(cohort, input, u),
                    u,
                )
            })
            .collect(),
    }
}

fn prepare_sparse_users(cohort: &Cohort, round: u64, input: &RoundInput, senders: &[u32]) -> Result<Vec<UserRound>> {
    let cfg = cohort.config();
    let field = cohort.field();
    let n = cfg.users;
    let mut sending = vec![false; n as usize];
    for &u in senders {
        sending[u as usize] = true;
    }
    // Each pair's masks are expanded once and handed to both ends.
    let mut pair_masks: Vec<Vec<Option<PairMask>>> = vec![Vec::new(); n as usize];
    for i in 0..n {
        pair_masks[i as usize] = (0..n)
            .map(|j| {
                if j <= i || !(sending[i as usize] || sending[j as usize]) {
                    return Ok(None);
                }
                PairMask::expand(
                    field,
                    &cohort.pair_seed(i, j, Purpose::Additive),
                    &cohort.pair_seed(i, j, Purpose::Binary),
                    round,
                    cfg.dim,
                    cfg.alpha,
                    n,
                )
                .map(Some)
            })
            .collect::<Result<_>>()?;
    }
    let pair = |i: u32, j: u32| {
        pair_masks[i.min(j) as usize][i.max(j) as usize]
            .clone()
            .expect("pair expanded")
    };

    senders
        .iter()
        .map(|&user| {
            let pairs = (0..n).filter(|&j| j != user).map(|j| (j, pair(user, j))).collect();
            let masks = MaskSet::from_pairs(field, user, &cohort.private_seed(user), round, pairs)?;
            build_sparse_message(cohort, round, input, masks)
        })
        .collect()
}

/// Quantizes at the selection set and adds the net mask.
pub fn build_sparse_message(cohort: &Cohort, round: u64, input: &RoundInput, masks: MaskSet) -> Result<UserRound> {
    let field = cohort.field();
    let user = masks.user;
    let mut lane = LaneReader::new(&cohort.quantizer_seed(user), DomainTag::Quantizer, round);
    let quantized = quantize_at(
        &input.gradients[user as usize],
        &masks.selection,
        &quantization(cohort, input, user),
        field,
        &mut lane,
    )?;
    let values = build_masked_values(field, &quantized, &masks);
    let locations = masks.selection;
    Ok(UserRound {
        user,
        message: MaskedGradient::Sparse(SparseMaskedGradient {
            user,
            locations: locations.clone(),
            values,
        }),
        locations,
        quantized,
    })
}

/// x_i at each selected coordinate: quantized value plus net mask.
pub fn build_masked_values(field: &PrimeField, quantized: &[FieldElement], masks: &MaskSet) -> Vec<FieldElement> {
    quantized
        .iter()
        .zip(masks.net_mask(field))
        .map(|(&y, m)| field.add(y, m))
        .collect()
}

/// Sum of the senders' quantized gradients over their own locations.
pub fn plaintext_oracle(field: &PrimeField, dim: usize, users: &[UserRound]) -> Vec<FieldElement> {
    let mut out = vec![FieldElement::ZERO; dim];
    for u in users {
        for (&l, &v) in u.locations.iter().zip(&u.quantized) {
            out[l as usize] = field.add(out[l as usize], v);
        }
    }
    out
}

/// Runs one round in which the users in `dropped` never send.
pub fn run_round(cohort: &Cohort, round: u64, input: &RoundInput, dropped: &[u32]) -> Result<RoundTrace> {
    validate_input(cohort, input)?;
    let cfg = cohort.config();
    let field = cohort.field();
    let (senders, dropped) = senders(cohort, dropped)?;
    let users = prepare_users(cohort, round, input, &senders)?;

    let mut server = ServerRoundState::new(cfg, round)?;
    for u in &users {
        server.receive(u.message.clone())?;
    }
    server.check_quorum()?;
    let holders: Vec<u32> = server.survivors().into_iter().take(cfg.threshold()).collect();
    let points = cohort.evaluation_points(&holders);
    for id in server.required_seeds() {
        let shares = cohort.shares_at(id, &points)?;
        server.add_shares(id, shares);
        server.reconstruct(id)?;
    }
    let aggregate = server.recover_and_unmask()?;

    let oracle = plaintext_oracle(field, cfg.dim, &users);
    let mut contributors = vec![0u32; cfg.dim];
    let mut honest_contributors = vec![0u32; cfg.dim];
    let mut bytes_sent = vec![0usize; cfg.users as usize];
    for u in &users {
        bytes_sent[u.user as usize] = u.message.wire_len();
        let honest = !cohort.is_adversarial(u.user);
        for &l in &u.locations {
            contributors[l as usize] += 1;
            honest_contributors[l as usize] += honest as u32;
        }
    }
    let update = dequantize_aggregate(&aggregate, cfg.level, field);
    Ok(RoundTrace {
        round,
        dropped,
        bytes_sent,
        contributors,
        honest_contributors,
        aggregate,
        oracle,
        update,
        loss: None,
    })
}

/// The dequantized oracle aggregate, available even when a round aborts.
pub fn oracle_update(cohort: &Cohort, round: u64, input: &RoundInput, dropped: &[u32]) -> Result<Vec<f64>> {
    validate_input(cohort, input)?;
    let (senders, _) = senders(cohort, dropped)?;
    let users = prepare_users(cohort, round, input, &senders)?;
    let cfg = cohort.config();
    Ok(dequantize_aggregate(
        &plaintext_oracle(cohort.field(), cfg.dim, &users),
        cfg.level,
        cohort.field(),
    ))
}
