//! Traces drawn straight from the cost model, without running the engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CostModel, Mode, ObserverError, TimingTrace, TraceMeta, WindowParams};
use crate::engine::{OperatorKind, OperatorSpec, Work};

/// Event indices (0-based) at which a windowed operator emits, following the
/// engine's count-based semantics. Join events alternate sides starting left.
pub fn heavy_indices(kind: OperatorKind, w: usize, s: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if !kind.is_windowed() || w == 0 || s == 0 {
        return out;
    }
    if kind == OperatorKind::Join {
        let (mut l, mut r) = (0usize, 0usize);
        for i in 0..n {
            if i % 2 == 0 {
                l += 1;
            } else {
                r += 1;
            }
            if l >= w && r >= w {
                out.push(i);
                l -= s;
                r -= s;
            }
        }
    } else {
        let mut held = 0usize;
        for i in 0..n {
            held += 1;
            if held >= w {
                out.push(i);
                held -= s;
            }
        }
    }
    out
}

/// Draws `n` per-record costs for `spec`. Every record pays the boundary I/O
/// cost for `model.payload_bytes` plus its operator work.
pub fn synth_trace(spec: &OperatorSpec, model: &CostModel, n: usize, seed: u64) -> Result<TimingTrace, ObserverError> {
    model.validate()?;
    spec.validate().map_err(|e| ObserverError::InvalidModel(e.to_string()))?;
    let params = spec.window_params().map(|(w, s)| WindowParams { w, s });
    let need = params.map_or(1, |p| p.w.max(1));
    if n < need {
        return Err(ObserverError::TooShort { need, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let io = model.io_cost(model.payload_bytes);
    let mut heavy = params
        .map(|p| heavy_indices(spec.kind, p.w, p.s, n))
        .unwrap_or_default()
        .into_iter()
        .peekable();
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let work = match spec.kind {
            OperatorKind::Map => Work::Map,
            OperatorKind::Filter => {
                if rng.gen::<f64>() < model.filter.selectivity {
                    Work::FilterPass
                } else {
                    Work::FilterDrop
                }
            }
            _ => {
                if heavy.peek() == Some(&i) {
                    heavy.next();
                    Work::Emit { window: params.expect("windowed").w }
                } else {
                    Work::Update
                }
            }
        };
        deltas.push(CostModel::finish(io + model.work_cost(spec, work, &mut rng)));
    }
    let meta = TraceMeta { query_id: None, stage_id: None, mode: Mode::Simulated, seed };
    TimingTrace::new(Some(spec.kind), params, deltas, meta)
}
