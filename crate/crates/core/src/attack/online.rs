use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::offline::{catalog_stage_data, allocate, Artifacts, ProfileConfig};
use super::AttackError;
use crate::engine::{
    batch_stage, fuse_stages, pad_stage, run_pipeline, EventRecord, OperatorKind, PipelineSpec, RunOptions, RunOutput,
    StageId,
};
use crate::features::Featurizer;
use crate::models::{derive_seed, ClassPrediction};
use crate::observer::{observe_stage, MonotonicCounter, ObservedTrace, ObserverError};

/// What the attacker concludes about one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePrediction {
    pub stage: StageId,
    /// Ground truth from the victim spec, kept for scoring only.
    pub truth: OperatorKind,
    pub prediction: Option<ClassPrediction>,
    pub window_size: Option<f64>,
    pub slide: Option<f64>,
    pub deltas: usize,
    pub missed: usize,
    /// Coefficient of variation of the observed deltas.
    pub dispersion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StagePrediction {
    pub fn correct(&self) -> bool {
        self.prediction.is_some_and(|p| p.kind == self.truth)
    }
}

/// The recovered query: the observed DAG shape plus per-stage predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredQuery {
    pub name: String,
    pub edges: Vec<[StageId; 2]>,
    pub stages: Vec<StagePrediction>,
}

impl RecoveredQuery {
    pub fn predicted_kinds(&self) -> Vec<Option<OperatorKind>> {
        self.stages.iter().map(|s| s.prediction.map(|p| p.kind)).collect()
    }
}

fn predict_stage(
    art: &Artifacts,
    stage: StageId,
    truth: OperatorKind,
    observed: Result<ObservedTrace, ObserverError>,
    oracle_kind: bool,
) -> StagePrediction {
    let mut out = StagePrediction {
        stage,
        truth,
        prediction: None,
        window_size: None,
        slide: None,
        deltas: 0,
        missed: 0,
        dispersion: None,
        error: None,
    };
    let obs = match observed {
        Ok(o) => o,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.deltas = obs.trace.len();
    out.missed = obs.missed;
    out.dispersion = Some(obs.trace.coefficient_of_variation());
    if let Err(e) = obs.check() {
        out.error = Some(e.to_string());
    }
    let fv = match Featurizer::<f64>::featurize(&art.featurizer, &obs.trace) {
        Ok(fv) => fv,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    match art.classifier.predict_class(&fv.values) {
        Ok(p) => out.prediction = Some(p),
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    }
    let kind = if oracle_kind { truth } else { out.prediction.expect("set above").kind };
    if let Some(r) = art.regressors.get(&kind) {
        out.window_size = r.window.as_ref().and_then(|m| m.predict_value(&fv.values).ok());
        out.slide = r.slide.as_ref().and_then(|m| m.predict_value(&fv.values).ok());
    }
    out
}

/// Runs the victim, watches every stage's input buffer, and classifies each
/// stage's trace. Regressors are chosen by the predicted kind, or by the
/// true kind when `oracle_kind` is set.
pub fn online_phase(
    name: &str,
    victim: &PipelineSpec,
    inputs: &BTreeMap<String, Vec<EventRecord>>,
    art: &Artifacts,
    run: &RunOptions,
    oracle_kind: bool,
) -> Result<(RecoveredQuery, RunOutput), AttackError> {
    let handle = run_pipeline(victim, inputs, run)?;
    let ids: Vec<StageId> = handle.stage_ids().to_vec();
    let counter = MonotonicCounter::new(run.cycles_per_ns);
    let observed: Vec<Result<ObservedTrace, ObserverError>> = if handle.is_deterministic() {
        ids.iter().map(|&id| observe_stage(&handle, id, &counter, false)).collect()
    } else {
        std::thread::scope(|scope| {
            let (handle, counter) = (&handle, &counter);
            let watchers: Vec<_> =
                ids.iter().map(|&id| scope.spawn(move || observe_stage(handle, id, counter, false))).collect();
            handle.start();
            watchers.into_iter().map(|w| w.join().expect("observer thread")).collect()
        })
    };
    let stages = ids
        .iter()
        .zip(observed)
        .map(|(&id, obs)| {
            let truth = victim.stage(id).expect("planned stage").op.kind;
            predict_stage(art, id, truth, obs, oracle_kind)
        })
        .collect();
    let output = handle.wait()?;
    Ok((RecoveredQuery { name: name.to_owned(), edges: victim.edges.clone(), stages }, output))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mitigation {
    /// Pad every stage to `target` cycles per record; without a target, the
    /// largest unmitigated delta seen across the suite is used.
    Pad { target: Option<u64> },
    /// Fuse the listed chain of stages; an empty list fuses the whole query
    /// when it is a chain.
    Fuse { stages: Vec<StageId> },
    /// Process records in batches of `size` at every stage.
    Batch { size: usize },
}

/// A pipeline to attack and its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Victim {
    pub name: String,
    pub spec: PipelineSpec,
    pub inputs: BTreeMap<String, Vec<EventRecord>>,
}

pub fn apply_mitigation(spec: &PipelineSpec, m: &Mitigation, pad_target: u64) -> Result<PipelineSpec, AttackError> {
    let mut out = spec.clone();
    match m {
        Mitigation::Pad { .. } => {
            for id in spec.stages.iter().map(|s| s.id) {
                out = pad_stage(&out, id, pad_target)?;
            }
        }
        Mitigation::Fuse { stages } => {
            let ids: Vec<StageId> = if stages.is_empty() {
                let plan = spec.plan()?;
                plan.order.iter().map(|&i| plan.ids[i]).collect()
            } else {
                stages.clone()
            };
            if ids.len() > 1 {
                out = fuse_stages(&out, &ids)?;
            }
        }
        Mitigation::Batch { size } => {
            for id in spec.stages.iter().map(|s| s.id) {
                out = batch_stage(&out, id, *size)?;
            }
        }
    }
    Ok(out)
}

/// Attack results over a set of victims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub stages: usize,
    pub correct: usize,
    /// Share of stages classified correctly.
    pub accuracy: f64,
    /// Share of victims with every stage recovered.
    pub recovered_queries: f64,
    pub mean_dispersion: f64,
    pub max_dispersion: f64,
    pub queries: Vec<RecoveredQuery>,
}

fn side_report(queries: Vec<RecoveredQuery>) -> SideReport {
    let stages: usize = queries.iter().map(|q| q.stages.len()).sum();
    let correct: usize = queries.iter().flat_map(|q| &q.stages).filter(|s| s.correct()).count();
    let full = queries.iter().filter(|q| q.stages.iter().all(StagePrediction::correct)).count();
    let disp: Vec<f64> = queries.iter().flat_map(|q| &q.stages).filter_map(|s| s.dispersion).collect();
    SideReport {
        stages,
        correct,
        accuracy: correct as f64 / stages.max(1) as f64,
        recovered_queries: full as f64 / queries.len().max(1) as f64,
        mean_dispersion: disp.iter().sum::<f64>() / disp.len().max(1) as f64,
        max_dispersion: disp.iter().copied().fold(0.0, f64::max),
        queries,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub mitigation: Mitigation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_target: Option<u64>,
    pub before: SideReport,
    pub after: SideReport,
    pub accuracy_delta: f64,
    /// Every victim produced the same sink outputs with and without the mitigation.
    pub outputs_preserved: bool,
}

/// Attacks every victim with and without the mitigation.
pub fn evaluate_mitigation(
    victims: &[Victim],
    m: &Mitigation,
    art: &Artifacts,
    run: &RunOptions,
) -> Result<MitigationReport, AttackError> {
    let opts = |i: usize| RunOptions { seed: derive_seed(run.seed, i as u64), ..run.clone() };
    let mut before = Vec::with_capacity(victims.len());
    let mut outputs = Vec::with_capacity(victims.len());
    let mut max_delta = 0u64;
    for (i, v) in victims.iter().enumerate() {
        let handle = run_pipeline(&v.spec, &v.inputs, &opts(i))?;
        if handle.is_deterministic() {
            for &id in handle.stage_ids() {
                if let Ok(o) = observe_stage(&handle, id, &MonotonicCounter::new(run.cycles_per_ns), false) {
                    max_delta = max_delta.max(o.trace.deltas().iter().copied().max().unwrap_or(0));
                }
            }
        }
        drop(handle);
        let (q, out) = online_phase(&v.name, &v.spec, &v.inputs, art, &opts(i), false)?;
        before.push(q);
        outputs.push(out.sinks);
    }
    let target = match m {
        Mitigation::Pad { target: Some(t) } => *t,
        Mitigation::Pad { target: None } => max_delta.max(1),
        _ => 0,
    };
    let mut after = Vec::with_capacity(victims.len());
    let mut preserved = true;
    for (i, v) in victims.iter().enumerate() {
        let spec = apply_mitigation(&v.spec, m, target)?;
        let (q, out) = online_phase(&v.name, &spec, &v.inputs, art, &opts(i), false)?;
        preserved &= out.sinks.values().collect::<Vec<_>>() == outputs[i].values().collect::<Vec<_>>();
        after.push(q);
    }
    let (before, after) = (side_report(before), side_report(after));
    Ok(MitigationReport {
        mitigation: m.clone(),
        pad_target: matches!(m, Mitigation::Pad { .. }).then_some(target),
        accuracy_delta: after.accuracy - before.accuracy,
        before,
        after,
        outputs_preserved: preserved,
    })
}

/// Single-stage victims, `per_kind` for each listed kind, drawn round-robin
/// from the catalog stages of that kind with their own input data and with
/// window parameters cycled from the profile grid.
pub fn kind_suite(cfg: &ProfileConfig, kinds: &[OperatorKind], per_kind: usize) -> Result<Vec<Victim>, AttackError> {
    let slots = allocate(cfg)?;
    let data = catalog_stage_data(cfg)?;
    let mut out = Vec::new();
    for &kind in kinds {
        let of_kind: Vec<_> = slots.iter().filter(|s| s.op.kind == kind).collect();
        if of_kind.is_empty() {
            return Err(AttackError::InvalidConfig(format!("no profiled query has a {kind} stage")));
        }
        for i in 0..per_kind {
            let slot = of_kind[i % of_kind.len()];
            let mut op = slot.op.clone();
            if op.kind.is_windowed() && !cfg.grid.is_empty() {
                let p = cfg.grid[i % cfg.grid.len()];
                op.window_size = Some(p.w);
                op.slide = Some(p.s);
            }
            let ports = &data[&(slot.query, slot.stage)];
            let names: Vec<String> = (0..ports.len()).map(|p| format!("in{p}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let inputs = names
                .iter()
                .zip(ports)
                .map(|(n, recs)| (n.clone(), recs.iter().take(cfg.events).cloned().collect()))
                .collect();
            out.push(Victim {
                name: format!("{}-{}-{i}", slot.query, kind.name()),
                spec: PipelineSpec::single(op, &refs),
                inputs,
            });
        }
    }
    Ok(out)
}
