//! The federated training loop: local SGD, secure aggregation, global update.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sgd::{local_sgd, LocalSgd, LrSchedule};
use super::task::{make_synthetic_task, SyntheticTask, TaskSpec};
use crate::crypto::Seed;
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField};
use crate::protocol::{run_round, Cohort, ProtocolConfig, RoundInput, RoundTrace};
use crate::quantizer::dequantize_aggregate;

/// Resampling attempts before a round is declared impossible.
const MAX_DROPOUT_DRAWS: u32 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// E, local steps per round.
    #[serde(alias = "E")]
    pub local_steps: usize,
    /// J, global rounds.
    #[serde(alias = "J")]
    pub rounds: usize,
    pub mu: f64,
    #[serde(alias = "L")]
    pub smoothness: f64,
    pub batch: usize,
    /// G, bound on each stochastic gradient norm.
    #[serde(alias = "G")]
    pub grad_clip: f64,
    pub task: TaskSpec,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            local_steps: 5,
            rounds: 100,
            mu: 0.5,
            smoothness: 2.0,
            batch: 4,
            grad_clip: 20.0,
            task: TaskSpec::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::config("local_steps", "E must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu", "must be positive"));
        }
        if !(self.smoothness >= self.mu && self.smoothness.is_finite()) {
            return Err(Error::config("smoothness", "L must be finite and at least mu"));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::config("grad_clip", "G must be positive and finite"));
        }
        self.task.validate(dim)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.mu, self.smoothness, self.local_steps)
    }

    pub fn sgd(&self) -> LocalSgd {
        LocalSgd {
            steps: self.local_steps,
            batch: self.batch,
            grad_clip: self.grad_clip,
        }
    }
}

/// One CSV row per round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    /// Rounds completed; the loss is that of w^(t).
    pub t: usize,
    pub loss: f64,
    #[serde(rename = "gap_to_Fstar")]
    pub gap_to_fstar: f64,
    pub dropouts: usize,
    pub mean_bytes_per_user: f64,
    /// Over coordinates with at least one contributor.
    pub mean_contributors: f64,
    pub min_contributors: u32,
    /// Dropout draws discarded because too few users survived.
    pub aborted: u32,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub task: SyntheticTask,
    pub initial_gap: f64,
    pub records: Vec<RoundRecord>,
    pub traces: Vec<RoundTrace>,
    pub model: DVector<f64>,
}

impl TrainingRun {
    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap_to_fstar).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_records(&self.records, w)
    }
}

pub fn write_records<W: std::io::Write>(records: &[RoundRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Independent Bernoulli(theta) drop decisions.
pub fn sample_dropouts<R: Rng + ?Sized>(theta: f64, users: u32, rng: &mut R) -> Vec<u32> {
    (0..users).filter(|_| rng.random_bool(theta)).collect()
}

/// w - (1/c) phi^{-1}(ybar).
pub fn global_update(w: &DVector<f64>, aggregate: &[FieldElement], level: u64, field: &PrimeField) -> DVector<f64> {
    w - DVector::from_vec(dequantize_aggregate(aggregate, level, field))
}

/// Mean and minimum contributor count over coordinates that received any.
pub fn contributor_stats(counts: &[u32]) -> (f64, u32) {
    let revealed: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    if revealed.is_empty() {
        return (0.0, 0);
    }
    let mean = revealed.iter().map(|&c| c as f64).sum::<f64>() / revealed.len() as f64;
    (mean, revealed.into_iter().min().unwrap_or(0))
}

pub(crate) fn batch_rng(master: &Seed, user: usize, round: usize) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(*master.derive("batches", &[user as u64, round as u64]).as_bytes())
}

pub(crate) fn dropout_rng(master: &Seed, round: usize) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(*master.derive("dropouts", &[round as u64]).as_bytes())
}

pub fn task_seed(master: &Seed) -> Seed {
    master.derive("task", &[])
}

fn local_updates(
    task: &SyntheticTask,
    w: &DVector<f64>,
    training: &TrainingConfig,
    master: &Seed,
    round: usize,
) -> Vec<DVector<f64>> {
    let schedule = training.schedule();
    let sgd = training.sgd();
    let iteration = (round * training.local_steps) as u64;
    task.datasets
        .iter()
        .enumerate()
        .map(|(i, d)| local_sgd(w, d, &sgd, &schedule, iteration, &mut batch_rng(master, i, round)))
        .collect()
}

/// Runs until a round completes, resampling dropout sets that leave too few
/// survivors. Returns the trace and the number of discarded draws.
pub fn run_round_with_dropouts(
    cohort: &Cohort,
    round: u64,
    input: &RoundInput,
    rng: &mut ChaCha8Rng,
) -> Result<(RoundTrace, u32)> {
    let cfg = cohort.config();
    for aborted in 0..MAX_DROPOUT_DRAWS {
        let dropped = sample_dropouts(cfg.theta, cfg.users, rng);
        match run_round(cohort, round, input, &dropped) {
            Err(Error::TooManyDropouts { .. }) => continue,
            Err(e) => return Err(e),
            Ok(trace) if !trace.exact() => return Err(Error::AggregateMismatch { round }),
            Ok(trace) => return Ok((trace, aborted)),
        }
    }
    Err(Error::TooManyDropouts {
        survivors: 0,
        cohort: cfg.users as usize,
        needed: cfg.threshold(),
    })
}

/// Federated training on a synthetic ridge task, aggregating through the protocol.
pub fn run_training(protocol: &ProtocolConfig, training: &TrainingConfig, master: &Seed) -> Result<TrainingRun> {
    protocol.validate()?;
    training.validate(protocol.dim)?;
    let task = make_synthetic_task(
        protocol.users as usize,
        protocol.dim,
        training.mu,
        training.smoothness,
        &training.task,
        &task_seed(master),
    )?;
    run_training_on(task, protocol, training, master)
}

/// As [`run_training`], on a task built elsewhere.
pub fn run_training_on(
    task: SyntheticTask,
    protocol: &ProtocolConfig,
    training: &TrainingConfig,
    master: &Seed,
) -> Result<TrainingRun> {
    protocol.validate()?;
    training.validate(protocol.dim)?;
    if task.users() != protocol.users as usize || task.dim() != protocol.dim {
        return Err(Error::config("task", "task shape differs from the protocol's (N, d)"));
    }
    let cohort = Cohort::setup(protocol, master)?;
    let schedule = training.schedule();
    let sgd = training.sgd();
    let weights = task.weights();

    let mut w = DVector::zeros(protocol.dim);
    let initial_gap = task.gap(&w);
    let mut records = Vec::with_capacity(training.rounds);
    let mut traces = Vec::with_capacity(training.rounds);
    for round in 0..training.rounds {
        let updates: Vec<Vec<f64>> = local_updates(&task, &w, training, master, round)
            .into_iter()
            .map(|y| y.as_slice().to_vec())
            .collect();
        let input = RoundInput {
            gradients: &updates,
            weights: &weights,
            clip: sgd.update_bound(&schedule, (round * training.local_steps) as u64),
        };
        let (mut trace, aborted) =
            run_round_with_dropouts(&cohort, round as u64, &input, &mut dropout_rng(master, round))?;
        w = global_update(&w, &trace.aggregate, protocol.level, cohort.field());
        let loss = task.loss(&w);
        trace.loss = Some(loss);
        let (mean_contributors, min_contributors) = contributor_stats(&trace.contributors);
        records.push(RoundRecord {
            t: round + 1,
            loss,
            gap_to_fstar: loss - task.optimal_loss,
            dropouts: trace.dropped.len(),
            mean_bytes_per_user: trace.mean_bytes_per_sender(),
            mean_contributors,
            min_contributors,
            aborted,
        });
        traces.push(trace);
    }
    Ok(TrainingRun {
        task,
        initial_gap,
        records,
        traces,
        model: w,
    })
}

/// Plain FedAvg on the same task and batch lanes: w <- w - sum_i beta_i y_i.
/// Returns the optimality gap after each round.
pub fn run_fedavg(task: &SyntheticTask, training: &TrainingConfig, master: &Seed) -> Vec<f64> {
    let mut w = DVector::zeros(task.dim());
    (0..training.rounds)
        .map(|round| {
            let updates = local_updates(task, &w, training, master, round);
            for (d, y) in task.datasets.iter().zip(&updates) {
                w.axpy(-d.weight, y, 1.0);
            }
            task.gap(&w)
        })
        .collect()
}
