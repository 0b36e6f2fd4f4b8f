//! The aggregation protocol: configuration, user and server roles, wire
//! formats and the round driver.

mod baseline;
mod cohort;
mod config;
mod message;
mod round;
mod server;
mod transcript;

pub use baseline::prepare_dense_user;
pub use cohort::{Cohort, SecretId, SeedId, ShareBundle};
pub use config::{KeyAgreement, Mode, ProtocolConfig};
pub use message::{DenseMaskedGradient, MaskedGradient, SparseMaskedGradient, HEADER_BYTES};
pub use round::{
    build_masked_values, build_sparse_message, oracle_update, plaintext_oracle, prepare_users, run_round, RoundInput,
    RoundTrace, UserRound,
};
pub use server::ServerRoundState;
pub use transcript::Transcript;
