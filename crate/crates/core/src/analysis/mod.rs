//! Theoretical quantities and trace reports.

mod reports;
mod theory;

pub use reports::{
    compression_report, contributor_report, envelope_fit, CompressionReport, ContributorReport, EnvelopeFit,
};
pub use theory::{
    convergence_bound, p_prime, p_tilde, privacy_guarantee, selection_variance_factor, variance_bound,
    ConvergenceBound, ConvergenceParams, PrivacyGuarantee, PrivacyParams,
};
