//! Pipeline DAG description, validation, and a sequential reference executor.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::operator::{Operator, OperatorKind, OperatorSpec};
use super::record::EventRecord;
use super::{EngineError, OperatorError};

pub type StageId = usize;

/// One enclave-hosted stage. `then` holds operators fused after `op`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: StageId,
    #[serde(flatten)]
    pub op: OperatorSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub then: Vec<OperatorSpec>,
    /// Per-record cycle budget the stage pads up to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_cycles: Option<u64>,
    /// Records popped and processed together.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

impl StageSpec {
    pub fn new(id: StageId, op: OperatorSpec) -> Self {
        StageSpec { id, op, then: Vec::new(), pad_cycles: None, batch: None }
    }

    pub fn chain(&self) -> impl Iterator<Item = &OperatorSpec> {
        std::iter::once(&self.op).chain(self.then.iter())
    }

    pub fn input_ports(&self) -> usize {
        if self.op.kind == OperatorKind::Join {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBinding {
    pub stream: String,
    pub stage: StageId,
}

/// A query DAG. A stage's input ports are numbered over its inbound
/// connections: edges in listed order first, then source bindings in listed
/// order. Joins take port 0 as the left side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub edges: Vec<[StageId; 2]>,
    #[serde(default)]
    pub sources: Vec<SourceBinding>,
    #[serde(default)]
    pub sinks: Vec<StageId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Inbound {
    Edge(usize),
    Source(String),
}

/// Index-based view of a validated pipeline.
#[derive(Clone, Debug)]
pub struct Plan {
    pub ids: Vec<StageId>,
    pub index: HashMap<StageId, usize>,
    /// Topological order of stage indices.
    pub order: Vec<usize>,
    pub inbound: Vec<Vec<Inbound>>,
    pub outbound: Vec<Vec<usize>>,
    pub sink: Vec<bool>,
}

impl PipelineSpec {
    /// Single-stage pipeline fed by `stream`, used for profiling operators in isolation.
    pub fn single(op: OperatorSpec, streams: &[&str]) -> Self {
        PipelineSpec {
            stages: vec![StageSpec::new(0, op)],
            edges: vec![],
            sources: streams.iter().map(|s| SourceBinding { stream: (*s).to_owned(), stage: 0 }).collect(),
            sinks: vec![0],
        }
    }

    pub fn stage(&self, id: StageId) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn stage_mut(&mut self, id: StageId) -> Option<&mut StageSpec> {
        self.stages.iter_mut().find(|s| s.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline specs always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, EngineError> {
        serde_json::from_str(s).map_err(|e| EngineError::InvalidPipeline(e.to_string()))
    }

    pub fn plan(&self) -> Result<Plan, EngineError> {
        let invalid = |m: String| Err(EngineError::InvalidPipeline(m));
        if self.stages.is_empty() {
            return invalid("pipeline has no stages".into());
        }
        let mut index = HashMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if index.insert(s.id, i).is_some() {
                return invalid(format!("duplicate stage id {}", s.id));
            }
            for (pos, op) in s.chain().enumerate() {
                op.validate().map_err(|e| EngineError::Operator { stage: s.id, source: e })?;
                if pos > 0 && op.kind == OperatorKind::Join {
                    return invalid(format!("stage {}: a join can only lead a fused chain", s.id));
                }
            }
            if s.batch == Some(0) {
                return invalid(format!("stage {}: batch size must be >= 1", s.id));
            }
        }
        let n = self.stages.len();
        let lookup = |id: StageId| -> Result<usize, EngineError> {
            index.get(&id).copied().ok_or(EngineError::UnknownStage(id))
        };
        let mut inbound = vec![Vec::new(); n];
        let mut outbound = vec![Vec::new(); n];
        for [from, to] in &self.edges {
            let (f, t) = (lookup(*from)?, lookup(*to)?);
            inbound[t].push(Inbound::Edge(f));
            outbound[f].push(t);
        }
        for src in &self.sources {
            inbound[lookup(src.stage)?].push(Inbound::Source(src.stream.clone()));
        }
        let mut sink = vec![false; n];
        for id in &self.sinks {
            sink[lookup(*id)?] = true;
        }
        for (i, s) in self.stages.iter().enumerate() {
            let want = s.input_ports();
            if inbound[i].len() != want {
                return invalid(format!("stage {} has {} inbound connections, expected {want}", s.id, inbound[i].len()));
            }
        }
        // Kahn's algorithm; ties resolved by listing order.
        let mut indeg: Vec<usize> = (0..n)
            .map(|i| inbound[i].iter().filter(|x| matches!(x, Inbound::Edge(_))).count())
            .collect();
        let mut order = Vec::with_capacity(n);
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        ready.reverse();
        while let Some(i) = ready.pop() {
            order.push(i);
            for &t in outbound[i].iter().rev() {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
        if order.len() != n {
            return invalid("pipeline graph has a cycle".into());
        }
        Ok(Plan { ids: self.stages.iter().map(|s| s.id).collect(), index, order, inbound, outbound, sink })
    }
}

/// Builds the stage's operator chain.
pub(crate) fn build_chain(stage: &StageSpec) -> Result<Vec<Operator>, EngineError> {
    stage
        .chain()
        .map(|op| Operator::new(op).map_err(|e| EngineError::Operator { stage: stage.id, source: e }))
        .collect()
}

/// Runs `rec` through a fused chain. The first operator sees `port`, later ones port 0.
pub(crate) fn run_chain(
    chain: &mut [Operator],
    port: usize,
    rec: EventRecord,
    works: &mut Vec<(usize, super::operator::Work)>,
) -> Result<Vec<EventRecord>, OperatorError> {
    let mut current = vec![(port, rec)];
    for (pos, op) in chain.iter_mut().enumerate() {
        let mut next = Vec::new();
        for (p, r) in current {
            let step = op.process(p, r)?;
            works.push((pos, step.work));
            next.extend(step.outputs.into_iter().map(|o| (0, o)));
        }
        current = next;
        if current.is_empty() {
            break;
        }
    }
    Ok(current.into_iter().map(|(_, r)| r).collect())
}

/// Every stage's output under sequential execution, indexed like `spec.stages`.
fn run_sequential(spec: &PipelineSpec, inputs: &BTreeMap<String, Vec<EventRecord>>) -> Result<(Plan, Vec<Vec<EventRecord>>), EngineError> {
    let plan = spec.plan()?;
    let mut produced: Vec<Option<Vec<EventRecord>>> = vec![None; spec.stages.len()];
    for &i in &plan.order {
        let stage = &spec.stages[i];
        let streams = port_streams(&plan, i, &produced, inputs)?;
        let mut chain = build_chain(stage)?;
        let mut out = Vec::new();
        let mut works = Vec::new();
        for (port, rec) in interleave(&streams) {
            works.clear();
            let o = run_chain(&mut chain, port, rec.clone(), &mut works)
                .map_err(|e| EngineError::Operator { stage: stage.id, source: e })?;
            out.extend(o);
        }
        produced[i] = Some(out);
    }
    Ok((plan, produced.into_iter().map(Option::unwrap_or_default).collect()))
}

fn port_streams<'a>(
    plan: &Plan,
    i: usize,
    produced: &'a [Option<Vec<EventRecord>>],
    inputs: &'a BTreeMap<String, Vec<EventRecord>>,
) -> Result<Vec<&'a [EventRecord]>, EngineError> {
    plan.inbound[i]
        .iter()
        .map(|inb| match inb {
            Inbound::Edge(f) => Ok(produced[*f].as_deref().expect("topological order")),
            Inbound::Source(name) => inputs
                .get(name)
                .map(Vec::as_slice)
                .ok_or_else(|| EngineError::MissingInput(name.clone())),
        })
        .collect()
}

/// Sequential execution without buffers or encryption: every stage consumes
/// its inputs in the same interleaving the engine's feeders use (round-robin
/// over ports while more than one is live).
pub fn execute_reference(
    spec: &PipelineSpec,
    inputs: &BTreeMap<String, Vec<EventRecord>>,
) -> Result<BTreeMap<StageId, Vec<EventRecord>>, EngineError> {
    let (plan, mut produced) = run_sequential(spec, inputs)?;
    Ok(plan
        .sink
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| (plan.ids[i], std::mem::take(&mut produced[i])))
        .collect())
}

/// The records each stage receives, one stream per input port.
pub fn stage_inputs(
    spec: &PipelineSpec,
    inputs: &BTreeMap<String, Vec<EventRecord>>,
) -> Result<BTreeMap<StageId, Vec<Vec<EventRecord>>>, EngineError> {
    let (plan, produced) = run_sequential(spec, inputs)?;
    let produced: Vec<Option<Vec<EventRecord>>> = produced.into_iter().map(Some).collect();
    (0..plan.ids.len())
        .map(|i| {
            let streams = port_streams(&plan, i, &produced, inputs)?;
            Ok((plan.ids[i], streams.into_iter().map(<[EventRecord]>::to_vec).collect()))
        })
        .collect()
}

/// Round-robin merge of port streams, skipping exhausted ports.
pub fn interleave<'a>(streams: &[&'a [EventRecord]]) -> Vec<(usize, &'a EventRecord)> {
    let mut pos = vec![0usize; streams.len()];
    let mut out = Vec::with_capacity(streams.iter().map(|s| s.len()).sum());
    loop {
        let mut any = false;
        for (p, s) in streams.iter().enumerate() {
            if pos[p] < s.len() {
                out.push((p, &s[pos[p]]));
                pos[p] += 1;
                any = true;
            }
        }
        if !any {
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage() -> PipelineSpec {
        PipelineSpec {
            stages: vec![
                StageSpec::new(0, OperatorSpec::filter("gt(x,1)")),
                StageSpec::new(1, OperatorSpec::map("identity")),
            ],
            edges: vec![[0, 1]],
            sources: vec![SourceBinding { stream: "in".into(), stage: 0 }],
            sinks: vec![1],
        }
    }

    #[test]
    fn json_shape() {
        let spec = two_stage();
        let json = spec.to_json();
        assert!(json.contains("\"kind\": \"Filter\""));
        assert!(json.contains("\"expr_id\": \"gt(x,1)\""));
        assert_eq!(PipelineSpec::from_json(&json).unwrap(), spec);
    }

    #[test]
    fn rejects_cycles_and_dangling_stages() {
        let mut spec = two_stage();
        spec.edges.push([1, 0]);
        spec.sources.clear();
        assert!(matches!(spec.plan(), Err(EngineError::InvalidPipeline(_))));

        let mut spec = two_stage();
        spec.edges.clear();
        assert!(spec.plan().is_err());

        let mut spec = two_stage();
        spec.edges.push([0, 7]);
        assert_eq!(spec.plan().unwrap_err(), EngineError::UnknownStage(7));
    }

    #[test]
    fn join_needs_two_inputs() {
        let spec = PipelineSpec::single(
            OperatorSpec::windowed(OperatorKind::Join, None, 2, 1).with_key("x"),
            &["a"],
        );
        assert!(spec.plan().is_err());
        let spec = PipelineSpec::single(
            OperatorSpec::windowed(OperatorKind::Join, None, 2, 1).with_key("x"),
            &["a", "b"],
        );
        assert!(spec.plan().is_ok());
    }

    #[test]
    fn interleave_round_robin() {
        use crate::engine::record::{Fields, SchemaId};
        let r = |i| EventRecord::new(SchemaId::Derived, i, i, Fields::default());
        let a = vec![r(0), r(1), r(2)];
        let b = vec![r(10)];
        let got: Vec<_> = interleave(&[&a, &b]).into_iter().map(|(p, r)| (p, r.seq)).collect();
        assert_eq!(got, vec![(0, 0), (1, 10), (0, 1), (0, 2)]);
    }
}
