//! Application isolation: processing stages wired through topics.

mod dedup;
mod spec;
mod stage;
pub mod transform;

pub use dedup::DedupState;
pub use spec::{Affinity, PipelineSpec, StageId, StageKind, StageSpec, WiringError};
pub use stage::{producer_id, synthetic_payload, StageEnv, StageParams, StageRunner};
pub use transform::{annotate, AnnotatedPayload};

/// One stage of a rewiring transaction. `offset` is where the stage starts
/// reading when the move gives it a new consumer group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewireEntry {
    pub spec: StageSpec,
    pub offset: Option<u64>,
}
