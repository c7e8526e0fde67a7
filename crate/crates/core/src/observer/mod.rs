//! The attacker's measurement side: tail-pointer polling, trace
//! reconstruction, and a parametric cost model for simulated timing.

mod clock;
mod cost;
mod profile;
mod synth;
mod tail;
mod trace;

use thiserror::Error;

pub use clock::{CycleCounter, MonotonicCounter, VirtualClock};
pub use cost::{CostModel, Dist, FilterCost, WindowCost};
pub use profile::{observe_stage, profile_operator, ObservedTrace, ProfileOptions, ProfileData};
pub use synth::{heavy_indices, synth_trace};
pub use tail::{differentiate, observe_schedule, poll, replay, Observation, TailSample};
pub use trace::{read_jsonl, write_jsonl, Mode, TimingTrace, TraceMeta, WindowParams};

use crate::engine::EngineError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObserverError {
    #[error("observer missed {missed} tail transitions")]
    Starved { missed: usize },
    #[error("cycle counter went backwards ({prev} -> {next})")]
    NonMonotonicCounter { prev: u64, next: u64 },
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
    #[error("trace needs at least {need} events, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("timing trace is empty")]
    EmptyTrace,
    #[error("unknown stage {0}")]
    UnknownStage(usize),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
