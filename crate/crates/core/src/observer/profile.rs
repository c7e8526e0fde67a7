//! Observing stages of a running pipeline and profiling single operators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{poll, replay, CostModel, CycleCounter, Mode, MonotonicCounter, ObserverError, TimingTrace, TraceMeta, WindowParams};
use crate::engine::{run_pipeline, EventRecord, ExecMode, OperatorKind, OperatorSpec, Predicate, PipelineSpec, RunHandle, RunOptions, StageId};

/// A stage's reconstructed trace plus how well the observer kept up.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedTrace {
    pub trace: TimingTrace,
    pub transitions: usize,
    pub missed: usize,
}

impl ObservedTrace {
    /// `Starved` when transitions were missed. The trace is still usable.
    pub fn check(&self) -> Result<(), ObserverError> {
        if self.missed > 0 {
            Err(ObserverError::Starved { missed: self.missed })
        } else {
            Ok(())
        }
    }
}

/// Watches `stage`'s in-buffer tail. Deterministic runs are replayed from
/// their pop log; threaded runs are polled live with `counter` until the
/// stage finishes, so the run should have been started. With `labeled`, the
/// stage's ground-truth kind and window parameters are attached.
pub fn observe_stage(
    handle: &RunHandle,
    stage: StageId,
    counter: &dyn CycleCounter,
    labeled: bool,
) -> Result<ObservedTrace, ObserverError> {
    let spec = handle.spec().stage(stage).ok_or(ObserverError::UnknownStage(stage))?;
    let (obs, mode) = if handle.is_deterministic() {
        (replay(handle.tail_log(stage).unwrap_or_default())?, Mode::Simulated)
    } else {
        let probe = handle.in_buffer(stage).ok_or(ObserverError::UnknownStage(stage))?;
        (poll(probe, counter, || handle.stage_finished(stage))?, Mode::Measured)
    };
    let (label, params) = if labeled {
        (Some(spec.op.kind), spec.op.window_params().map(|(w, s)| WindowParams { w, s }))
    } else {
        (None, None)
    };
    let meta = TraceMeta { query_id: None, stage_id: Some(stage), mode, seed: 0 };
    let trace = TimingTrace::new(label, params, obs.deltas, meta)?;
    Ok(ObservedTrace { trace, transitions: obs.transitions, missed: obs.missed })
}

#[derive(Clone, Debug)]
pub struct ProfileOptions {
    /// Events per trace.
    pub events: usize,
    /// Window parameters cycled through across reps; ignored for stateless kinds.
    pub grid: Vec<WindowParams>,
    pub model: CostModel,
    pub seed: u64,
    /// Per-rep payload size varies uniformly by this relative amount.
    pub payload_spread: f64,
    /// Engine settings for measured runs.
    pub run: RunOptions,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            events: 10_000,
            grid: Vec::new(),
            model: CostModel::default(),
            seed: 0,
            payload_spread: 0.1,
            run: RunOptions { mode: ExecMode::Threaded, ..RunOptions::default() },
        }
    }
}

/// Input records per port. Simulated profiling only uses their mean size.
pub type ProfileData<'a> = &'a [Vec<EventRecord>];

fn mean_payload(data: ProfileData<'_>) -> Option<f64> {
    let (sum, n) = data
        .iter()
        .flatten()
        .take(4096)
        .fold((0usize, 0usize), |(s, n), r| (s + r.to_json_bytes().len(), n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Fraction of `data` a filter passes, kept inside (0, 1).
fn pass_rate(spec: &OperatorSpec, data: ProfileData<'_>) -> Option<f64> {
    if spec.kind != OperatorKind::Filter {
        return None;
    }
    let pred = Predicate::parse(spec.expr_id.as_deref()?).ok()?;
    let (pass, n) = data
        .iter()
        .flatten()
        .take(4096)
        .fold((0usize, 0usize), |(p, n), r| (p + pred.eval(r).unwrap_or(false) as usize, n + 1));
    (n > 0).then(|| (pass as f64 / n as f64).clamp(0.01, 0.99))
}

/// Produces `reps` labeled traces for one operator. Windowed specs take their
/// parameters from `opts.grid` in turn (or keep their own if the grid is
/// empty). Simulated traces are drawn from the cost model, using the data's
/// mean record size and, for filters, its pass rate; measured traces
/// come from threaded engine runs over `data` timed with a wall clock.
pub fn profile_operator(
    spec: &OperatorSpec,
    data: ProfileData<'_>,
    mode: Mode,
    reps: usize,
    opts: &ProfileOptions,
) -> Result<Vec<TimingTrace>, ObserverError> {
    if reps == 0 {
        return Ok(Vec::new());
    }
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let jobs: Vec<(OperatorSpec, u64, f64)> = (0..reps)
        .map(|r| {
            let mut s = spec.clone();
            if s.kind.is_windowed() && !opts.grid.is_empty() {
                let p = opts.grid[r % opts.grid.len()];
                s.window_size = Some(p.w);
                s.slide = Some(p.s);
            }
            let scale = 1.0 + opts.payload_spread * (2.0 * master.gen::<f64>() - 1.0);
            (s, master.gen::<u64>(), scale)
        })
        .collect();
    match mode {
        Mode::Simulated => {
            let base = mean_payload(data).unwrap_or(opts.model.payload_bytes);
            let mut filter = opts.model.filter;
            if let Some(rate) = pass_rate(spec, data) {
                filter.selectivity = rate;
            }
            jobs.into_par_iter()
                .map(|(s, seed, scale)| {
                    let model = CostModel { payload_bytes: base * scale, filter, ..opts.model.clone() };
                    super::synth_trace(&s, &model, opts.events, seed)
                })
                .collect()
        }
        Mode::Measured => jobs
            .into_iter()
            .map(|(s, seed, _)| measure_once(&s, data, opts, seed))
            .collect(),
    }
}

fn measure_once(spec: &OperatorSpec, data: ProfileData<'_>, opts: &ProfileOptions, seed: u64) -> Result<TimingTrace, ObserverError> {
    let names: Vec<String> = (0..data.len()).map(|p| format!("in{p}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let pipeline = PipelineSpec::single(spec.clone(), &refs);
    let inputs: BTreeMap<String, Vec<EventRecord>> = names
        .iter()
        .zip(data)
        .map(|(n, d)| (n.clone(), d.iter().take(opts.events).cloned().collect()))
        .collect();
    let run = RunOptions { seed, ..opts.run.clone() };
    let handle = run_pipeline(&pipeline, &inputs, &run)?;
    let counter = MonotonicCounter::new(run.cycles_per_ns);
    let observed = std::thread::scope(|scope| {
        let watcher = scope.spawn(|| observe_stage(&handle, 0, &counter, true));
        handle.start();
        watcher.join().expect("observer thread")
    })?;
    handle.wait()?;
    let mut trace = observed.trace;
    trace.meta.seed = seed;
    Ok(trace)
}
