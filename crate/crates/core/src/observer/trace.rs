use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ObserverError;
use crate::engine::OperatorKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowParams {
    pub w: usize,
    pub s: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Measured,
    #[default]
    Simulated,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "measured" => Ok(Mode::Measured),
            "simulated" => Ok(Mode::Simulated),
            other => Err(format!("unknown mode `{other}` (expected measured|simulated)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, rename = "stage", skip_serializing_if = "Option::is_none")]
    pub stage_id: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
}

/// Per-record processing durations of one operator run, in cycles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimingTrace {
    label: Option<OperatorKind>,
    params: Option<WindowParams>,
    deltas: Vec<u64>,
    pub meta: TraceMeta,
}

impl TimingTrace {
    pub fn new(
        label: Option<OperatorKind>,
        params: Option<WindowParams>,
        deltas: Vec<u64>,
        meta: TraceMeta,
    ) -> Result<Self, ObserverError> {
        if deltas.is_empty() {
            return Err(ObserverError::EmptyTrace);
        }
        Ok(TimingTrace { label, params, deltas, meta })
    }

    pub fn label(&self) -> Option<OperatorKind> {
        self.label
    }

    pub fn params(&self) -> Option<WindowParams> {
        self.params
    }

    pub fn deltas(&self) -> &[u64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Same trace with the ground truth removed, as an online attacker sees it.
    pub fn unlabeled(&self) -> Self {
        TimingTrace { label: None, params: None, ..self.clone() }
    }

    /// Same label and metadata over a different delta sequence.
    pub fn with_deltas(&self, deltas: Vec<u64>) -> Result<Self, ObserverError> {
        TimingTrace::new(self.label, self.params, deltas, self.meta.clone())
    }

    pub fn mean(&self) -> f64 {
        self.deltas.iter().map(|&d| d as f64).sum::<f64>() / self.deltas.len() as f64
    }

    /// Coefficient of variation (population standard deviation over mean).
    pub fn coefficient_of_variation(&self) -> f64 {
        let mean = self.mean();
        let var = self.deltas.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / self.deltas.len() as f64;
        var.sqrt() / mean
    }
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    label: Option<OperatorKind>,
    params: Option<WindowParams>,
    #[serde(flatten)]
    meta: TraceMeta,
    deltas: Vec<u64>,
}

impl Serialize for TimingTrace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TraceLine { label: self.label, params: self.params, meta: self.meta.clone(), deltas: self.deltas.clone() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TimingTrace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let line = TraceLine::deserialize(d)?;
        TimingTrace::new(line.label, line.params, line.deltas, line.meta).map_err(serde::de::Error::custom)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, traces: &[TimingTrace]) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TimingTrace>, ObserverError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ObserverError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ObserverError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}
