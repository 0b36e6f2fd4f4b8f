//! Empirical summaries of round traces set against the closed forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::theory::{privacy_guarantee, PrivacyParams};
use crate::error::{Error, Result};
use crate::fl_sim::SPARSE_ENTRY_BYTES;
use crate::masking::selection_probability;
use crate::protocol::{Mode, ProtocolConfig, RoundTrace, HEADER_BYTES};

fn write_metrics<W: std::io::Write>(rows: &[(&str, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    for (k, v) in rows {
        out.write_record([k.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Honest surviving contributors per revealed coordinate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContributorReport {
    pub users: u32,
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub rounds: usize,
    /// Coordinate-rounds with at least one contributor.
    pub revealed: usize,
    pub mean_honest: f64,
    pub min_honest: u32,
    pub histogram: BTreeMap<u32, usize>,
    /// p (1 - theta) (1 - gamma) N at this N.
    pub predicted: f64,
    /// (1 - e^{-alpha}) (1 - theta) (1 - gamma) N.
    pub asymptotic: f64,
    /// (N, predicted / asymptotic) for N, 2N, 4N, ...
    pub scaling: Vec<(u32, f64)>,
}

impl ContributorReport {
    pub fn relative_error(&self) -> f64 {
        (self.mean_honest - self.predicted).abs() / self.predicted
    }

    /// Some revealed coordinate had no honest contributor at all.
    pub fn privacy_floor_violated(&self) -> bool {
        self.revealed > 0 && self.min_honest == 0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "contributors: N={} alpha={} theta={} gamma={}",
            self.users, self.alpha, self.theta, self.gamma
        );
        let _ = writeln!(
            s,
            "  rounds {}, revealed coordinate-rounds {}",
            self.rounds, self.revealed
        );
        let _ = writeln!(
            s,
            "  mean honest contributors {:.4}, min {}",
            self.mean_honest, self.min_honest
        );
        let _ = writeln!(
            s,
            "  predicted p(1-theta)(1-gamma)N = {:.4} (relative error {:.4})",
            self.predicted,
            self.relative_error()
        );
        let _ = writeln!(s, "  asymptotic T = {:.4}", self.asymptotic);
        for (n, r) in &self.scaling {
            let _ = writeln!(s, "  N={n:<7} predicted/T = {r:.6}");
        }
        if self.privacy_floor_violated() {
            let _ = writeln!(s, "  WARNING: a revealed coordinate had no honest contributor");
        }
        s
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_metrics(
            &[
                ("users", self.users as f64),
                ("rounds", self.rounds as f64),
                ("revealed", self.revealed as f64),
                ("mean_honest", self.mean_honest),
                ("min_honest", self.min_honest as f64),
                ("predicted", self.predicted),
                ("asymptotic", self.asymptotic),
                ("relative_error", self.relative_error()),
            ],
            w,
        )
    }

    pub fn write_histogram_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["honest_contributors", "coordinates"])?;
        for (k, v) in &self.histogram {
            out.write_record([k.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn contributor_report(traces: &[RoundTrace], cfg: &ProtocolConfig) -> Result<ContributorReport> {
    let pp = PrivacyParams {
        alpha: cfg.alpha,
        theta: cfg.theta,
        gamma: cfg.gamma,
        users: cfg.users,
    };
    pp.validate()?;
    let mut histogram = BTreeMap::new();
    let (mut revealed, mut total, mut min) = (0usize, 0u64, u32::MAX);
    for t in traces {
        for (&all, &honest) in t.contributors.iter().zip(&t.honest_contributors) {
            if all == 0 {
                continue;
            }
            revealed += 1;
            total += honest as u64;
            min = min.min(honest);
            *histogram.entry(honest).or_insert(0) += 1;
        }
    }
    let g = privacy_guarantee(&pp);
    let predicted =
        selection_probability(cfg.alpha, cfg.users) * (1.0 - cfg.theta) * (1.0 - cfg.gamma) * cfg.users as f64;
    let scaling = (0..6)
        .map(|k| {
            let n = cfg.users << k;
            let g = privacy_guarantee(&PrivacyParams { users: n, ..pp });
            (n, g.finite_n / g.t)
        })
        .collect();
    Ok(ContributorReport {
        users: cfg.users,
        alpha: cfg.alpha,
        theta: cfg.theta,
        gamma: cfg.gamma,
        rounds: traces.len(),
        revealed,
        mean_honest: if revealed == 0 {
            0.0
        } else {
            total as f64 / revealed as f64
        },
        min_honest: if revealed == 0 { 0 } else { min },
        histogram,
        predicted,
        asymptotic: g.t,
        scaling,
    })
}

/// Per-user selection ratios |U_i| / d.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionReport {
    pub users: u32,
    pub dim: usize,
    pub alpha: f64,
    pub selection_probability: f64,
    /// Sender-rounds observed.
    pub samples: usize,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl CompressionReport {
    pub fn gap_to_p(&self) -> f64 {
        (self.mean_ratio - self.selection_probability).abs() / self.selection_probability
    }

    /// How far the finite-N selection probability sits from alpha.
    pub fn gap_p_to_alpha(&self) -> f64 {
        (self.selection_probability - self.alpha).abs() / self.alpha
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "compression: N={} d={} alpha={}", self.users, self.dim, self.alpha);
        let _ = writeln!(
            s,
            "  p = {:.7}, |p - alpha| / alpha = {:.4}",
            self.selection_probability,
            self.gap_p_to_alpha()
        );
        let _ = writeln!(
            s,
            "  |U_i|/d over {} messages: mean {:.6} sd {:.6} range [{:.6}, {:.6}]",
            self.samples, self.mean_ratio, self.std_ratio, self.min_ratio, self.max_ratio
        );
        let _ = writeln!(s, "  relative gap to p {:.5}", self.gap_to_p());
        s
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_metrics(
            &[
                ("users", self.users as f64),
                ("dim", self.dim as f64),
                ("alpha", self.alpha),
                ("p", self.selection_probability),
                ("samples", self.samples as f64),
                ("mean_ratio", self.mean_ratio),
                ("std_ratio", self.std_ratio),
                ("min_ratio", self.min_ratio),
                ("max_ratio", self.max_ratio),
                ("gap_to_p", self.gap_to_p()),
                ("gap_p_to_alpha", self.gap_p_to_alpha()),
            ],
            w,
        )
    }
}

pub fn compression_report(traces: &[RoundTrace], cfg: &ProtocolConfig) -> Result<CompressionReport> {
    if cfg.mode != Mode::Sparse {
        return Err(Error::config("mode", "compression is measured on sparse traces"));
    }
    let ratios: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.bytes_sent.iter().filter(|&&b| b > 0))
        .map(|&b| ((b - HEADER_BYTES) / SPARSE_ENTRY_BYTES) as f64 / cfg.dim as f64)
        .collect();
    if ratios.is_empty() {
        return Err(Error::config("traces", "no messages to measure"));
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = if ratios.len() > 1 {
        ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(CompressionReport {
        users: cfg.users,
        dim: cfg.dim,
        alpha: cfg.alpha,
        selection_probability: cfg.selection_probability(),
        samples: ratios.len(),
        mean_ratio: mean,
        std_ratio: var.sqrt(),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}


/// Envelope C0 / (nu + t) fitted on one window of a gap sequence and checked on the rest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub c0: f64,
    pub nu: f64,
    /// First round (1-based) that must sit under the envelope.
    pub from: usize,
    /// Last round used for fitting.
    pub fit_until: usize,
    /// Rounds after the fit window whose gap, less its slack, is above the envelope.
    pub violations: Vec<usize>,
    /// Largest gap / envelope ratio after the fit window.
    pub worst_ratio: f64,
    /// Largest (gap - slack) / envelope ratio after the fit window.
    pub worst_adjusted: f64,
}

impl EnvelopeFit {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `gaps[k]` is the gap after round k + 1, reached at local iteration
/// (k + 1) * local_steps. C0 is the smallest constant covering rounds
/// `from..=fit_until`; every later round is then checked against it.
/// `slack` is empty or holds one allowance per round, e.g. a few standard
/// errors when `gaps` is a replicate mean; a round violates the envelope only
/// if it stays above after subtracting its slack.
pub fn envelope_fit(
    gaps: &[f64],
    slack: &[f64],
    nu: f64,
    local_steps: usize,
    from: usize,
    fit_until: usize,
) -> Result<EnvelopeFit> {
    if from == 0 || from > fit_until || fit_until >= gaps.len() {
        return Err(Error::config(
            "envelope",
            format!("need 1 <= from <= fit_until < {}", gaps.len()),
        ));
    }
    if !slack.is_empty() && slack.len() != gaps.len() {
        return Err(Error::config(
            "envelope",
            "slack must be empty or match the gap sequence",
        ));
    }
    let denominator = |round: usize| nu + (round * local_steps) as f64;
    let c0 = (from..=fit_until)
        .map(|round| gaps[round - 1] * denominator(round))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut violations = Vec::new();
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_adjusted = f64::NEG_INFINITY;
    for round in fit_until + 1..=gaps.len() {
        let envelope = c0 / denominator(round);
        let gap = gaps[round - 1];
        let adjusted = gap - slack.get(round - 1).copied().unwrap_or(0.0);
        worst_ratio = worst_ratio.max(gap / envelope);
        worst_adjusted = worst_adjusted.max(adjusted / envelope);
        if adjusted > envelope {
            violations.push(round);
        }
    }
    Ok(EnvelopeFit {
        c0,
        nu,
        from,
        fit_until,
        violations,
        worst_ratio,
        worst_adjusted,
    })
}
