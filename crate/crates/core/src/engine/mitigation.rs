//! Spec rewrites that blunt the timing channel.

use super::pipeline::{PipelineSpec, StageId};
use super::EngineError;

/// Merges a linear run of stages into the first one. The fused stage keeps
/// the first stage's id and inbound connections and inherits the last
/// stage's outbound edges and sink role.
pub fn fuse_stages(spec: &PipelineSpec, ids: &[StageId]) -> Result<PipelineSpec, EngineError> {
    let not_chain = || EngineError::NotAChain(ids.to_vec());
    for id in ids {
        spec.stage(*id).ok_or(EngineError::UnknownStage(*id))?;
    }
    if ids.is_empty() {
        return Err(not_chain());
    }
    let mut seen = std::collections::HashSet::new();
    if !ids.iter().all(|id| seen.insert(*id)) {
        return Err(not_chain());
    }
    for pair in ids.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let out: Vec<_> = spec.edges.iter().filter(|e| e[0] == a).collect();
        let inb = spec.edges.iter().filter(|e| e[1] == b).count() + spec.sources.iter().filter(|s| s.stage == b).count();
        if out.len() != 1 || out[0][1] != b || inb != 1 || spec.sinks.contains(&a) {
            return Err(not_chain());
        }
    }
    let head = ids[0];
    let last = *ids.last().expect("non-empty");
    let mut fused = spec.stage(head).expect("checked").clone();
    for id in &ids[1..] {
        let s = spec.stage(*id).expect("checked");
        fused.then.push(s.op.clone());
        fused.then.extend(s.then.iter().cloned());
        fused.pad_cycles = fused.pad_cycles.max(s.pad_cycles);
    }
    let inner = &ids[..ids.len() - 1];
    let mut out = spec.clone();
    out.stages.retain(|s| s.id == head || !ids.contains(&s.id));
    *out.stage_mut(head).expect("head kept") = fused;
    out.edges.retain(|e| !inner.contains(&e[0]));
    for e in &mut out.edges {
        if e[0] == last {
            e[0] = head;
        }
    }
    out.sinks.retain(|s| !ids.contains(s));
    if spec.sinks.contains(&last) {
        out.sinks.push(head);
    }
    out.plan()?;
    Ok(out)
}

/// Pads every record the stage processes up to `target` cycles. A zero target
/// removes padding.
pub fn pad_stage(spec: &PipelineSpec, stage: StageId, target: u64) -> Result<PipelineSpec, EngineError> {
    let mut out = spec.clone();
    let s = out.stage_mut(stage).ok_or(EngineError::UnknownStage(stage))?;
    s.pad_cycles = (target > 0).then_some(target);
    Ok(out)
}

/// Makes the stage pop `batch` records before processing them together.
pub fn batch_stage(spec: &PipelineSpec, stage: StageId, batch: usize) -> Result<PipelineSpec, EngineError> {
    if batch == 0 {
        return Err(EngineError::InvalidPipeline("batch size must be >= 1".into()));
    }
    let mut out = spec.clone();
    let s = out.stage_mut(stage).ok_or(EngineError::UnknownStage(stage))?;
    s.batch = (batch > 1).then_some(batch);
    Ok(out)
}
