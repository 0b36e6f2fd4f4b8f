//! Named experiments. Each one runs from a spec and a seed, checks its
//! properties and returns CSV tables with a text summary.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    compression_report, contributor_report, envelope_fit, variance_bound, CompressionReport, ContributorReport,
    EnvelopeFit,
};
use crate::crypto::Seed;
use crate::error::{Error, Result};
use crate::fl_sim::{
    local_sgd, make_synthetic_task, measure_communication, monte_carlo, run_fedavg, run_round_with_dropouts,
    run_training_on, task_seed, write_records, CommunicationReport, FrozenRound, MonteCarloSummary, TrainingConfig,
};
use crate::masking::selection_probability;
use crate::protocol::{run_round, Cohort, Mode, ProtocolConfig, RoundInput, RoundTrace};
use crate::quantizer::overflow_budget;

/// Relative gap allowed between mean |U_i|/d and p.
pub const COMPRESSION_TOLERANCE: f64 = 0.02;
/// Relative gap allowed between p and alpha.
pub const P_TO_ALPHA_TOLERANCE: f64 = 0.05;
/// Relative gap allowed between mean honest contributors and p(1-theta)(1-gamma)N.
pub const CONTRIBUTOR_TOLERANCE: f64 = 0.05;
/// Standard errors allowed per coordinate of the Monte Carlo mean.
pub const UNBIASED_STD_ERRORS: f64 = 4.0;
/// Fraction of coordinates that must fall within that many standard errors.
pub const UNBIASED_COVERAGE: f64 = 0.99;
/// Required drop of the optimality gap over a training run.
pub const GAP_REDUCTION: f64 = 100.0;
/// Standard errors of the replicate mean allowed above the fitted envelope.
pub const ENVELOPE_STD_ERRORS: f64 = 3.0;
/// Allowed factor between the protocol's and plain FedAvg's final gap.
pub const FEDAVG_FACTOR: f64 = 2.0;
/// Relative gap allowed between measured and predicted byte reduction.
pub const COMMUNICATION_TOLERANCE: f64 = 0.05;
/// Smallest acceptable byte reduction.
pub const MIN_REDUCTION: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exactness,
    Compression,
    Privacy,
    Unbiasedness,
    Variance,
    Convergence,
    Communication,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Exactness => "exactness",
            ExperimentKind::Compression => "compression",
            ExperimentKind::Privacy => "privacy",
            ExperimentKind::Unbiasedness => "unbiasedness",
            ExperimentKind::Variance => "variance",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Communication => "communication",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_rounds() -> usize {
    20
}

fn default_trials() -> usize {
    10_000
}

fn default_replicates() -> usize {
    20
}

fn default_envelope_from() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Protocol rounds for exactness, compression, privacy and communication.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Monte Carlo re-executions for unbiasedness and variance.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Independent training runs averaged by the convergence experiment.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// First round that must sit under the fitted envelope.
    #[serde(default = "default_envelope_from")]
    pub envelope_from: usize,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentKind, protocol: ProtocolConfig, training: TrainingConfig) -> Self {
        ExperimentSpec {
            experiment,
            seed: 0,
            out: None,
            rounds: default_rounds(),
            trials: default_trials(),
            replicates: default_replicates(),
            envelope_from: default_envelope_from(),
            protocol,
            training,
        }
    }

    /// Checks every field; errors name the full path, e.g. `protocol.theta`.
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate().map_err(|e| scoped("protocol", e))?;
        let needs_task = matches!(
            self.experiment,
            ExperimentKind::Unbiasedness | ExperimentKind::Variance | ExperimentKind::Convergence
        );
        if needs_task {
            self.training
                .validate(self.protocol.dim)
                .map_err(|e| scoped("training", e))?;
        }
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        match self.experiment {
            ExperimentKind::Unbiasedness | ExperimentKind::Variance => positive("trials", self.trials),
            ExperimentKind::Convergence => {
                positive("replicates", self.replicates)?;
                let rounds = self.training.rounds;
                if self.envelope_from == 0 || 2 * self.envelope_from > rounds {
                    return Err(Error::config(
                        "envelope_from",
                        format!("need 1 <= envelope_from <= training.rounds / 2 = {}", rounds / 2),
                    ));
                }
                Ok(())
            }
            _ => positive("rounds", self.rounds),
        }
    }
}

fn scoped(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

/// One property checked by an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// A CSV artifact; the primary table has no suffix.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub suffix: Option<String>,
    pub csv: Vec<u8>,
}

impl Table {
    fn primary(csv: Vec<u8>) -> Self {
        Table { suffix: None, csv }
    }

    fn extra(suffix: &str, csv: Vec<u8>) -> Self {
        Table {
            suffix: Some(suffix.to_string()),
            csv,
        }
    }

    /// `<experiment>_<seed>.csv`, or `<experiment>_<seed>_<suffix>.csv`.
    pub fn file_name(&self, kind: ExperimentKind, seed: u64) -> String {
        match &self.suffix {
            None => format!("{kind}_{seed}.csv"),
            Some(s) => format!("{kind}_{seed}_{s}.csv"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactnessReport {
    pub rounds: usize,
    pub exact_rounds: usize,
    /// Distinct dropout counts exercised.
    pub dropout_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub replicates: usize,
    pub nu: f64,
    pub initial_gap: f64,
    /// Gap after each round, averaged over replicates.
    pub mean_gaps: Vec<f64>,
    /// Standard error of each mean gap (zero for a single replicate).
    pub gap_std_err: Vec<f64>,
    /// Plain FedAvg on the same task and batches, averaged likewise.
    pub fedavg_gaps: Vec<f64>,
    pub envelope: EnvelopeFit,
}

impl ConvergenceReport {
    pub fn final_gap(&self) -> f64 {
        self.mean_gaps.last().copied().unwrap_or(self.initial_gap)
    }

    pub fn fedavg_final_gap(&self) -> f64 {
        self.fedavg_gaps.last().copied().unwrap_or(self.initial_gap)
    }

    pub fn reduction(&self) -> f64 {
        self.initial_gap / self.final_gap()
    }

    pub fn fedavg_ratio(&self) -> f64 {
        self.final_gap() / self.fedavg_final_gap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Findings {
    Exactness(ExactnessReport),
    Compression(CompressionReport),
    Privacy(ContributorReport),
    MonteCarlo { summary: MonteCarloSummary, bound: f64 },
    Convergence(ConvergenceReport),
    Communication(CommunicationReport),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub summary: String,
    pub findings: Findings,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Summary text followed by one PASS/FAIL line per check.
    pub fn report(&self) -> String {
        let mut s = self.summary.clone();
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let master = Seed::from_u64(spec.seed);
    let (checks, tables, summary, findings) = match spec.experiment {
        ExperimentKind::Exactness => exactness(spec, &master)?,
        ExperimentKind::Compression => compression(spec, &master)?,
        ExperimentKind::Privacy => privacy(spec, &master)?,
        ExperimentKind::Unbiasedness | ExperimentKind::Variance => frozen_round(spec, &master)?,
        ExperimentKind::Convergence => convergence(spec, &master)?,
        ExperimentKind::Communication => communication(spec, &master)?,
    };
    Ok(ExperimentOutcome {
        kind: spec.experiment,
        seed: spec.seed,
        checks,
        tables,
        summary,
        findings,
    })
}

type Parts = (Vec<Check>, Vec<Table>, String, Findings);

fn rng(master: &Seed, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(*master.derive(label, &[]).as_bytes())
}

fn uniform_weights(users: u32) -> Vec<f64> {
    vec![1.0 / users as f64; users as usize]
}

/// Largest clip, capped at 1, that keeps the overflow budget at half of q/2.
fn safe_clip(cfg: &ProtocolConfig, weights: &[f64]) -> f64 {
    let beta_max = weights.iter().copied().fold(0.0, f64::max);
    let n = cfg.users as usize;
    let at_one = overflow_budget(n, cfg.level, beta_max, 1.0, cfg.participation()) - n as f64;
    let room = cfg.q.get() as f64 / 4.0 - n as f64;
    (room / at_one).min(1.0)
}

fn random_gradients(users: u32, dim: usize, clip: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..users)
        .map(|_| (0..dim).map(|_| rng.random_range(-clip..=clip)).collect())
        .collect()
}

fn protocol_rounds(spec: &ExperimentSpec, cfg: &ProtocolConfig, master: &Seed) -> Result<Vec<RoundTrace>> {
    let cohort = Cohort::setup(cfg, master)?;
    let weights = uniform_weights(cfg.users);
    let clip = safe_clip(cfg, &weights);
    let gradients = random_gradients(cfg.users, cfg.dim, clip, &mut rng(master, "gradients"));
    let input = RoundInput {
        gradients: &gradients,
        weights: &weights,
        clip,
    };
    let mut dropouts = rng(master, "dropouts");
    (0..spec.rounds)
        .map(|round| run_round_with_dropouts(&cohort, round as u64, &input, &mut dropouts).map(|(t, _)| t))
        .collect()
}

fn to_csv<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn exactness(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let cfg = &spec.protocol;
    let cohort = Cohort::setup(cfg, master)?;
    let weights = uniform_weights(cfg.users);
    let clip = safe_clip(cfg, &weights);
    let mut draws = rng(master, "exactness");
    let max_dropped = (cfg.users as usize).div_ceil(2) - 1;

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["round", "dropouts", "senders", "exact", "mean_bytes_per_user"])?;
    let mut exact_rounds = 0;
    let mut counts = Vec::new();
    for round in 0..spec.rounds {
        let count = round % (max_dropped + 1);
        let gradients = random_gradients(cfg.users, cfg.dim, clip, &mut draws);
        let mut dropped: Vec<u32> = sample(&mut draws, cfg.users as usize, count)
            .into_iter()
            .map(|u| u as u32)
            .collect();
        dropped.sort_unstable();
        let input = RoundInput {
            gradients: &gradients,
            weights: &weights,
            clip,
        };
        let trace = run_round(&cohort, round as u64, &input, &dropped)?;
        exact_rounds += trace.exact() as usize;
        if !counts.contains(&count) {
            counts.push(count);
        }
        out.write_record([
            round.to_string(),
            count.to_string(),
            trace.senders().to_string(),
            trace.exact().to_string(),
            trace.mean_bytes_per_sender().to_string(),
        ])?;
    }
    let csv = out.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    counts.sort_unstable();
    let report = ExactnessReport {
        rounds: spec.rounds,
        exact_rounds,
        dropout_counts: counts,
    };
    let checks = vec![Check::new(
        "exact_aggregate",
        exact_rounds == spec.rounds,
        format!("{exact_rounds}/{} rounds equal the plaintext oracle", spec.rounds),
    )];
    let summary = format!(
        "exactness: N={} d={} alpha={} q={}\n  {} rounds, dropout counts 0..={max_dropped}, clip {clip}\n",
        cfg.users,
        cfg.dim,
        cfg.alpha,
        cfg.q.get(),
        spec.rounds
    );
    Ok((checks, vec![Table::primary(csv)], summary, Findings::Exactness(report)))
}

fn compression(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let traces = protocol_rounds(spec, &spec.protocol, master)?;
    let report = compression_report(&traces, &spec.protocol)?;
    let checks = vec![
        Check::new(
            "ratio_matches_p",
            report.gap_to_p() < COMPRESSION_TOLERANCE,
            format!("relative gap {:.5} < {COMPRESSION_TOLERANCE}", report.gap_to_p()),
        ),
        Check::new(
            "p_near_alpha",
            report.gap_p_to_alpha() < P_TO_ALPHA_TOLERANCE,
            format!(
                "|p - alpha| / alpha = {:.5} < {P_TO_ALPHA_TOLERANCE}",
                report.gap_p_to_alpha()
            ),
        ),
    ];
    let csv = to_csv(|b| report.write_csv(b))?;
    Ok((
        checks,
        vec![Table::primary(csv)],
        report.to_text(),
        Findings::Compression(report),
    ))
}

fn privacy(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let traces = protocol_rounds(spec, &spec.protocol, master)?;
    let report = contributor_report(&traces, &spec.protocol)?;
    let toward_t = report
        .scaling
        .windows(2)
        .all(|w| (w[1].1 - 1.0).abs() < (w[0].1 - 1.0).abs());
    let checks = vec![
        Check::new(
            "mean_contributors",
            report.relative_error() < CONTRIBUTOR_TOLERANCE,
            format!(
                "mean {:.4} vs predicted {:.4}, relative error {:.5} < {CONTRIBUTOR_TOLERANCE}",
                report.mean_honest,
                report.predicted,
                report.relative_error()
            ),
        ),
        Check::new(
            "approaches_t",
            toward_t,
            format!("finite/asymptotic ratios {:?}", report.scaling),
        ),
    ];
    let tables = vec![
        Table::primary(to_csv(|b| report.write_csv(b))?),
        Table::extra("histogram", to_csv(|b| report.write_histogram_csv(b))?),
    ];
    Ok((checks, tables, report.to_text(), Findings::Privacy(report)))
}

/// One frozen set of local updates from w = 0 at round 0 on the synthetic task.
pub fn frozen_updates(protocol: &ProtocolConfig, training: &TrainingConfig, master: &Seed) -> Result<FrozenRound> {
    let task = make_synthetic_task(
        protocol.users as usize,
        protocol.dim,
        training.mu,
        training.smoothness,
        &training.task,
        &task_seed(master),
    )?;
    let schedule = training.schedule();
    let sgd = training.sgd();
    let w = DVector::zeros(protocol.dim);
    let updates = task
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut batches = ChaCha8Rng::from_seed(*master.derive("frozen-batches", &[i as u64]).as_bytes());
            local_sgd(&w, d, &sgd, &schedule, 0, &mut batches).as_slice().to_vec()
        })
        .collect();
    Ok(FrozenRound {
        updates,
        weights: task.weights(),
        clip: sgd.update_bound(&schedule, 0),
    })
}

fn frozen_round(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let (cfg, training) = (&spec.protocol, &spec.training);
    let frozen = frozen_updates(cfg, training, master)?;
    let summary = monte_carlo(cfg, &frozen, spec.trials, master)?;
    let eta = training.schedule().rate(0);
    let bound = variance_bound(
        cfg.users,
        cfg.dim,
        cfg.alpha,
        cfg.theta,
        cfg.level,
        eta,
        training.local_steps,
        training.grad_clip,
        &frozen.weights,
    );
    let coverage = summary.fraction_within(UNBIASED_STD_ERRORS);
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut text = format!(
        "monte carlo: N={} d={} alpha={} theta={} c={}\n  {} trials ({} with too few survivors, counted at the survivor sum)\n",
        cfg.users, cfg.dim, cfg.alpha, cfg.theta, cfg.level, summary.trials, summary.aborted
    );
    match spec.experiment {
        ExperimentKind::Unbiasedness => {
            let _ = writeln!(
                text,
                "  coordinates within {UNBIASED_STD_ERRORS} SE of the target: {coverage:.4}"
            );
            checks.push(Check::new(
                "unbiased",
                coverage >= UNBIASED_COVERAGE,
                format!("{coverage:.4} of coordinates within {UNBIASED_STD_ERRORS} SE (need {UNBIASED_COVERAGE})"),
            ));
            let mut out = csv::Writer::from_writer(Vec::new());
            out.write_record(["coordinate", "target", "mean", "std_err", "z"])?;
            for (l, z) in summary.z_scores().iter().enumerate() {
                out.write_record([
                    l.to_string(),
                    summary.target[l].to_string(),
                    summary.mean[l].to_string(),
                    summary.std_err[l].to_string(),
                    z.to_string(),
                ])?;
            }
            tables.push(Table::primary(out.into_inner().map_err(|e| Error::Io(e.to_string()))?));
        }
        _ => {
            let _ = writeln!(
                text,
                "  E|w - v|^2 = {:.6e} (se {:.2e}), bound {bound:.6e} at eta = {eta}, G = {}",
                summary.mean_sq_deviation, summary.mean_sq_deviation_std_err, training.grad_clip
            );
            checks.push(Check::new(
                "variance_bound",
                summary.mean_sq_deviation <= bound,
                format!("{:.6e} <= {bound:.6e}", summary.mean_sq_deviation),
            ));
            let mut out = csv::Writer::from_writer(Vec::new());
            out.write_record(["metric", "value"])?;
            for (k, v) in [
                ("trials", summary.trials as f64),
                ("aborted", summary.aborted as f64),
                ("mean_sq_deviation", summary.mean_sq_deviation),
                ("mean_sq_deviation_std_err", summary.mean_sq_deviation_std_err),
                ("bound", bound),
                ("eta", eta),
                ("clip", frozen.clip),
            ] {
                out.write_record([k.to_string(), v.to_string()])?;
            }
            tables.push(Table::primary(out.into_inner().map_err(|e| Error::Io(e.to_string()))?));
        }
    }
    Ok((checks, tables, text, Findings::MonteCarlo { summary, bound }))
}

fn convergence(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let (cfg, training) = (&spec.protocol, &spec.training);
    let task = make_synthetic_task(
        cfg.users as usize,
        cfg.dim,
        training.mu,
        training.smoothness,
        &training.task,
        &task_seed(master),
    )?;
    let rounds = training.rounds;
    let initial_gap = task.gap(&DVector::zeros(cfg.dim));
    let mut mean_gaps = vec![0.0; rounds];
    let mut sum_sq = vec![0.0; rounds];
    let mut fedavg_gaps = vec![0.0; rounds];
    let mut first_run = Vec::new();
    let n = spec.replicates as f64;
    for r in 0..spec.replicates {
        let replicate = master.derive("replicate", &[r as u64]);
        let run = run_training_on(task.clone(), cfg, training, &replicate)?;
        let fedavg = run_fedavg(&task, training, &replicate);
        for (k, (g, h)) in run.gaps().iter().zip(&fedavg).enumerate() {
            mean_gaps[k] += g / n;
            sum_sq[k] += g * g;
            fedavg_gaps[k] += h / n;
        }
        if r == 0 {
            first_run = to_csv(|b| write_records(&run.records, b))?;
        }
    }
    let gap_std_err: Vec<f64> = if spec.replicates < 2 {
        vec![0.0; rounds]
    } else {
        mean_gaps
            .iter()
            .zip(&sum_sq)
            .map(|(m, sq)| ((sq - n * m * m).max(0.0) / (n - 1.0) / n).sqrt())
            .collect()
    };
    let slack: Vec<f64> = gap_std_err.iter().map(|se| ENVELOPE_STD_ERRORS * se).collect();
    let nu = training.schedule().nu;
    let envelope = envelope_fit(
        &mean_gaps,
        &slack,
        nu,
        training.local_steps,
        spec.envelope_from,
        rounds / 2,
    )?;
    let report = ConvergenceReport {
        replicates: spec.replicates,
        nu,
        initial_gap,
        mean_gaps,
        gap_std_err,
        fedavg_gaps,
        envelope,
    };

    let mut checks = vec![
        Check::new(
            "gap_reduction",
            report.reduction() >= GAP_REDUCTION,
            format!(
                "gap {:.4e} -> {:.4e}, {:.1}x (need {GAP_REDUCTION}x)",
                report.initial_gap,
                report.final_gap(),
                report.reduction()
            ),
        ),
        Check::new(
            "envelope",
            report.envelope.holds(),
            format!(
                "C0 = {:.4e} fitted on rounds {}..={}, worst later ratio {:.4} ({:.4} less {ENVELOPE_STD_ERRORS} SE), {} violations",
                report.envelope.c0,
                report.envelope.from,
                report.envelope.fit_until,
                report.envelope.worst_ratio,
                report.envelope.worst_adjusted,
                report.envelope.violations.len()
            ),
        ),
    ];
    if cfg.alpha == 1.0 && cfg.theta == 0.0 {
        let ratio = report.fedavg_ratio();
        checks.push(Check::new(
            "fedavg_reference",
            (1.0 / FEDAVG_FACTOR..=FEDAVG_FACTOR).contains(&ratio),
            format!(
                "final gap {:.4e} vs FedAvg {:.4e}, ratio {ratio:.3} within {FEDAVG_FACTOR}x",
                report.final_gap(),
                report.fedavg_final_gap()
            ),
        ));
    }

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["t", "mean_gap", "std_err", "fedavg_gap", "envelope"])?;
    for (k, ((g, se), f)) in report
        .mean_gaps
        .iter()
        .zip(&report.gap_std_err)
        .zip(&report.fedavg_gaps)
        .enumerate()
    {
        let round = k + 1;
        let env = report.envelope.c0 / (nu + (round * training.local_steps) as f64);
        out.write_record([
            round.to_string(),
            g.to_string(),
            se.to_string(),
            f.to_string(),
            env.to_string(),
        ])?;
    }
    let mean_csv = out.into_inner().map_err(|e| Error::Io(e.to_string()))?;

    let summary = format!(
        "convergence: N={} d={} alpha={} theta={} c={} E={} J={} mu={} L={} G={}\n  {} replicates, nu = {nu}, gap {:.4e} -> {:.4e} (FedAvg {:.4e})\n",
        cfg.users,
        cfg.dim,
        cfg.alpha,
        cfg.theta,
        cfg.level,
        training.local_steps,
        rounds,
        training.mu,
        training.smoothness,
        training.grad_clip,
        report.replicates,
        report.initial_gap,
        report.final_gap(),
        report.fedavg_final_gap()
    );
    let tables = vec![Table::primary(first_run), Table::extra("mean", mean_csv)];
    Ok((checks, tables, summary, Findings::Convergence(report)))
}

fn communication(spec: &ExperimentSpec, master: &Seed) -> Result<Parts> {
    let sparse_cfg = ProtocolConfig {
        mode: Mode::Sparse,
        ..spec.protocol.clone()
    };
    let baseline_cfg = ProtocolConfig {
        mode: Mode::Baseline,
        ..spec.protocol.clone()
    };
    let sparse = protocol_rounds(spec, &sparse_cfg, master)?;
    // dense message sizes do not depend on the draw
    let baseline_spec = ExperimentSpec {
        rounds: spec.rounds.min(2),
        ..spec.clone()
    };
    let baseline = protocol_rounds(&baseline_spec, &baseline_cfg, master)?;
    let p = selection_probability(sparse_cfg.alpha, sparse_cfg.users);
    let report = measure_communication(&sparse, &baseline, p)?;
    let checks = vec![
        Check::new(
            "matches_prediction",
            report.relative_error() < COMMUNICATION_TOLERANCE,
            format!(
                "measured {:.4}x vs predicted {:.4}x, relative error {:.5} < {COMMUNICATION_TOLERANCE}",
                report.measured_reduction,
                report.predicted_reduction,
                report.relative_error()
            ),
        ),
        Check::new(
            "reduction",
            report.measured_reduction > MIN_REDUCTION,
            format!("{:.4}x > {MIN_REDUCTION}x", report.measured_reduction),
        ),
    ];
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["metric", "value"])?;
    for (k, v) in [
        ("users", report.users as f64),
        ("dim", report.dim as f64),
        ("p", report.selection_probability),
        ("sparse_bytes", report.sparse_bytes),
        ("baseline_bytes", report.baseline_bytes),
        ("measured_reduction", report.measured_reduction),
        ("predicted_reduction", report.predicted_reduction),
        ("relative_error", report.relative_error()),
    ] {
        out.write_record([k.to_string(), v.to_string()])?;
    }
    let csv = out.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let summary = format!(
        "communication: N={} d={} alpha={} p={p:.7}\n  mean bytes per sender: sparse {:.1}, baseline {:.1}\n",
        report.users, report.dim, sparse_cfg.alpha, report.sparse_bytes, report.baseline_bytes
    );
    Ok((
        checks,
        vec![Table::primary(csv)],
        summary,
        Findings::Communication(report),
    ))
}
