//! Enclave-style stream processing engine: records, encrypted ring buffers,
//! operators, pipeline DAGs and their execution.

mod crypto;
mod expr;
mod mitigation;
mod operator;
mod pipeline;
mod record;
mod ring;
mod run;

use std::time::Duration;

use thiserror::Error;

pub use crypto::{decrypt, encrypt, Ciphertext, CryptoError, Key128, Opener, Sealer, DEFAULT_KEY};
pub use expr::{Cmp, ExprError, MapExpr, Predicate};
pub use mitigation::{batch_stage, fuse_stages, pad_stage};
pub use operator::{join_fields, Operator, OperatorKind, OperatorSpec, Step, Work};
pub use pipeline::{execute_reference, interleave, stage_inputs, Inbound, PipelineSpec, Plan, SourceBinding, StageId, StageSpec};
pub use record::{EventRecord, Fields, SchemaId, Value, ValueKey};
pub use ring::{Consumer, Full, InvalidCapacity, Producer, RingBuffer, TailProbe};
pub use run::{run_pipeline, ExecMode, RunHandle, RunOptions, RunOutput, DEFAULT_CAPACITY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OperatorError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{0}` has the wrong type")]
    TypeMismatch(String),
    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),
    #[error("operator has no input port {0}")]
    BadPort(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("unknown stage {0}")]
    UnknownStage(StageId),
    #[error("stage {stage}: {source}")]
    Operator { stage: StageId, source: OperatorError },
    #[error("stage {stage}: {source}")]
    Crypto { stage: StageId, source: CryptoError },
    #[error("no input stream named `{0}`")]
    MissingInput(String),
    #[error("pipeline made no progress for {0:?}")]
    PipelineStall(Duration),
    #[error("stages {0:?} do not form a linear chain")]
    NotAChain(Vec<StageId>),
    #[error("a pipeline thread panicked")]
    WorkerPanic,
}
