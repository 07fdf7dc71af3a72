use thiserror::Error;

use crate::time::SimTime;

/// Fatal conditions raised while a simulation is running. Each one signals a
/// model bug or an inconsistent scenario, never an expected outcome.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, fire_at={at}")]
    ScheduleInPast { now: SimTime, at: SimTime },
    #[error("unknown process id {0}")]
    UnknownProcess(u32),
    #[error("unknown consumer '{0}'")]
    UnknownConsumer(String),
    #[error("no consumers attached to the subscription")]
    NoConsumers,
    #[error("invariant violated: {0}")]
    Invariant(String),
}
