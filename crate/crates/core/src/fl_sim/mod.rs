//! Deterministic federated-learning simulator on synthetic ridge tasks.

mod comm;
mod monte_carlo;
mod sgd;
mod task;
mod training;

pub use comm::{
    dense_message_bytes, measure_communication, predicted_reduction, sparse_message_bytes, CommunicationReport,
    DENSE_ENTRY_BYTES, SPARSE_ENTRY_BYTES,
};
pub use monte_carlo::{monte_carlo, FrozenRound, MonteCarloSummary};
pub use sgd::{local_sgd, LocalSgd, LrSchedule};
pub use task::{make_synthetic_task, LocalDataset, SyntheticTask, TaskSpec};
pub use training::{
    contributor_stats, global_update, run_fedavg, run_round_with_dropouts, run_training, run_training_on,
    sample_dropouts, task_seed, write_records, RoundRecord, TrainingConfig, TrainingRun,
};
