//! Bytes on the wire: sparse messages against the dense baseline.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::{RoundTrace, HEADER_BYTES};

/// Bytes per sent coordinate in each mode.
pub const SPARSE_ENTRY_BYTES: usize = 12;
pub const DENSE_ENTRY_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommunicationReport {
    pub users: usize,
    pub dim: usize,
    pub selection_probability: f64,
    /// Mean wire bytes per sending user.
    pub sparse_bytes: f64,
    pub baseline_bytes: f64,
    pub measured_reduction: f64,
    /// 8 d / (12 p d): payload-only prediction, headers ignored.
    pub predicted_reduction: f64,
}

impl CommunicationReport {
    pub fn relative_error(&self) -> f64 {
        (self.measured_reduction - self.predicted_reduction).abs() / self.predicted_reduction
    }
}

pub fn predicted_reduction(selection_probability: f64) -> f64 {
    DENSE_ENTRY_BYTES as f64 / (SPARSE_ENTRY_BYTES as f64 * selection_probability)
}

fn mean_bytes(traces: &[RoundTrace]) -> f64 {
    let bytes: usize = traces.iter().flat_map(|t| &t.bytes_sent).sum();
    let senders: usize = traces.iter().map(RoundTrace::senders).sum();
    if senders == 0 {
        0.0
    } else {
        bytes as f64 / senders as f64
    }
}

fn shape(traces: &[RoundTrace]) -> Option<(usize, usize)> {
    let first = traces.first()?;
    let s = (first.bytes_sent.len(), first.contributors.len());
    traces
        .iter()
        .all(|t| (t.bytes_sent.len(), t.contributors.len()) == s)
        .then_some(s)
}

/// Compares traces of both modes taken at the same (N, d).
pub fn measure_communication(
    sparse: &[RoundTrace],
    baseline: &[RoundTrace],
    selection_probability: f64,
) -> Result<CommunicationReport> {
    let (users, dim) = shape(sparse).ok_or_else(|| Error::config("traces", "sparse traces empty or mixed"))?;
    if shape(baseline) != Some((users, dim)) {
        return Err(Error::config(
            "traces",
            "baseline traces must share (N, d) with the sparse ones",
        ));
    }
    let sparse_bytes = mean_bytes(sparse);
    let baseline_bytes = mean_bytes(baseline);
    Ok(CommunicationReport {
        users,
        dim,
        selection_probability,
        sparse_bytes,
        baseline_bytes,
        measured_reduction: baseline_bytes / sparse_bytes,
        predicted_reduction: predicted_reduction(selection_probability),
    })
}

/// Exact bytes for a sparse message with `selected` coordinates.
pub fn sparse_message_bytes(selected: usize) -> usize {
    HEADER_BYTES + SPARSE_ENTRY_BYTES * selected
}

pub fn dense_message_bytes(dim: usize) -> usize {
    HEADER_BYTES + DENSE_ENTRY_BYTES * dim
}
