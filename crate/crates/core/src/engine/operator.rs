//! Stream operators with count-based sliding windows.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::expr::{MapExpr, Predicate};
use super::record::{EventRecord, Fields, SchemaId, Value, ValueKey};
use super::OperatorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    Map,
    Filter,
    Join,
    Max,
    Average,
    AveragePartition,
    Count,
    Reduce,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 8] = [
        OperatorKind::Map,
        OperatorKind::Filter,
        OperatorKind::Join,
        OperatorKind::Max,
        OperatorKind::Average,
        OperatorKind::AveragePartition,
        OperatorKind::Count,
        OperatorKind::Reduce,
    ];

    pub fn is_windowed(self) -> bool {
        !matches!(self, OperatorKind::Map | OperatorKind::Filter)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Map => "Map",
            OperatorKind::Filter => "Filter",
            OperatorKind::Join => "Join",
            OperatorKind::Max => "Max",
            OperatorKind::Average => "Average",
            OperatorKind::AveragePartition => "AveragePartition",
            OperatorKind::Count => "Count",
            OperatorKind::Reduce => "Reduce",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown operator kind `{s}`"))
    }
}

/// Operator configuration. For the aggregating kinds `expr_id` names the
/// aggregated field; for Map and Filter it selects an expression from the
/// registry in [`super::expr`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slide: Option<usize>,
    /// Grouping field. Joins accept `left=right` when the sides name the key differently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_field: Option<String>,
}

impl OperatorSpec {
    pub fn map(expr: &str) -> Self {
        OperatorSpec { kind: OperatorKind::Map, expr_id: Some(expr.into()), window_size: None, slide: None, key_field: None }
    }

    pub fn filter(pred: &str) -> Self {
        OperatorSpec { kind: OperatorKind::Filter, ..Self::map(pred) }
    }

    /// Windowed operator over `field` (ignored by Join and unkeyed Count).
    pub fn windowed(kind: OperatorKind, field: Option<&str>, window: usize, slide: usize) -> Self {
        OperatorSpec {
            kind,
            expr_id: field.map(str::to_owned),
            window_size: Some(window),
            slide: Some(slide),
            key_field: None,
        }
    }

    pub fn with_key(mut self, key: &str) -> Self {
        self.key_field = Some(key.to_owned());
        self
    }

    pub fn window_params(&self) -> Option<(usize, usize)> {
        Some((self.window_size?, self.slide?))
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let bad = |m: &str| Err(OperatorError::InvalidSpec(format!("{}: {m}", self.kind)));
        if self.kind.is_windowed() {
            match (self.window_size, self.slide) {
                (Some(w), Some(s)) if w >= 1 && s >= 1 && s <= w => {}
                _ => return bad("window_size >= 1 and 1 <= slide <= window_size required"),
            }
        } else if self.window_size.is_some() || self.slide.is_some() {
            return bad("stateless operators take no window parameters");
        }
        let needs_expr = !matches!(self.kind, OperatorKind::Join | OperatorKind::Count);
        if needs_expr && self.expr_id.is_none() {
            return bad("expr_id required");
        }
        if matches!(self.kind, OperatorKind::Join | OperatorKind::AveragePartition) && self.key_field.is_none() {
            return bad("key_field required");
        }
        Ok(())
    }
}

/// What the operator did for one input; drives the simulated cost of the record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Work {
    Map,
    FilterPass,
    FilterDrop,
    /// State maintenance only.
    Update,
    /// A window of `window` events completed and was aggregated or joined.
    Emit { window: usize },
}

#[derive(Debug, PartialEq)]
pub struct Step {
    pub outputs: Vec<EventRecord>,
    pub work: Work,
}

enum Logic {
    Map(MapExpr),
    Filter(Predicate),
    Max { field: String, win: VecDeque<(f64, EventRecord)> },
    Average { field: String, win: VecDeque<f64> },
    Count { key: Option<String>, win: VecDeque<Option<ValueKey>> },
    Partition { field: String, key: String, wins: BTreeMap<ValueKey, VecDeque<f64>> },
    Join { left_key: String, right_key: String, left: VecDeque<EventRecord>, right: VecDeque<EventRecord> },
}

pub struct Operator {
    spec: OperatorSpec,
    logic: Logic,
    window: usize,
    slide: usize,
    emitted: u64,
}

fn numeric(rec: &EventRecord, field: &str) -> Result<f64, OperatorError> {
    rec.get(field)
        .ok_or_else(|| OperatorError::MissingField(field.to_owned()))?
        .as_f64()
        .ok_or_else(|| OperatorError::TypeMismatch(field.to_owned()))
}

fn key_of(rec: &EventRecord, field: &str) -> Result<ValueKey, OperatorError> {
    rec.get(field).map(Value::key).ok_or_else(|| OperatorError::MissingField(field.to_owned()))
}

impl Operator {
    pub fn new(spec: &OperatorSpec) -> Result<Self, OperatorError> {
        spec.validate()?;
        let expr = || spec.expr_id.clone().unwrap_or_default();
        let logic = match spec.kind {
            OperatorKind::Map => {
                Logic::Map(MapExpr::parse(&expr()).map_err(|e| OperatorError::InvalidSpec(e.to_string()))?)
            }
            OperatorKind::Filter => {
                Logic::Filter(Predicate::parse(&expr()).map_err(|e| OperatorError::InvalidSpec(e.to_string()))?)
            }
            OperatorKind::Max => Logic::Max { field: expr(), win: VecDeque::new() },
            OperatorKind::Average | OperatorKind::Reduce => Logic::Average { field: expr(), win: VecDeque::new() },
            OperatorKind::Count => Logic::Count { key: spec.key_field.clone(), win: VecDeque::new() },
            OperatorKind::AveragePartition => Logic::Partition {
                field: expr(),
                key: spec.key_field.clone().unwrap_or_default(),
                wins: BTreeMap::new(),
            },
            OperatorKind::Join => {
                let k = spec.key_field.clone().unwrap_or_default();
                let (l, r) = match k.split_once('=') {
                    Some((l, r)) => (l.trim().to_owned(), r.trim().to_owned()),
                    None => (k.clone(), k),
                };
                Logic::Join { left_key: l, right_key: r, left: VecDeque::new(), right: VecDeque::new() }
            }
        };
        let (window, slide) = spec.window_params().unwrap_or((1, 1));
        Ok(Operator { spec: spec.clone(), logic, window, slide, emitted: 0 })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn input_ports(&self) -> usize {
        if self.spec.kind == OperatorKind::Join {
            2
        } else {
            1
        }
    }

    /// Events currently held in window state (all keys, both join sides).
    pub fn retained(&self) -> usize {
        match &self.logic {
            Logic::Map(_) | Logic::Filter(_) => 0,
            Logic::Max { win, .. } => win.len(),
            Logic::Average { win, .. } => win.len(),
            Logic::Count { win, .. } => win.len(),
            Logic::Partition { wins, .. } => wins.values().map(VecDeque::len).sum(),
            Logic::Join { left, right, .. } => left.len() + right.len(),
        }
    }

    fn derived(&mut self, ts: u64, fields: Fields) -> EventRecord {
        let seq = self.emitted;
        self.emitted += 1;
        EventRecord::new(SchemaId::Derived, seq, ts, fields)
    }

    pub fn process(&mut self, port: usize, rec: EventRecord) -> Result<Step, OperatorError> {
        if port >= self.input_ports() {
            return Err(OperatorError::BadPort(port));
        }
        let (w, s) = (self.window, self.slide);
        let ts = rec.ts;
        let emit = Work::Emit { window: w };
        match &mut self.logic {
            Logic::Map(expr) => {
                let out = expr.apply(&rec)?;
                self.emitted += 1;
                Ok(Step { outputs: vec![out], work: Work::Map })
            }
            Logic::Filter(pred) => {
                if pred.eval(&rec)? {
                    self.emitted += 1;
                    Ok(Step { outputs: vec![rec], work: Work::FilterPass })
                } else {
                    Ok(Step { outputs: vec![], work: Work::FilterDrop })
                }
            }
            Logic::Max { field, win } => {
                let v = numeric(&rec, field)?;
                win.push_back((v, rec));
                if win.len() < w {
                    return Ok(Step { outputs: vec![], work: Work::Update });
                }
                let mut best = 0;
                for (i, (x, _)) in win.iter().enumerate() {
                    if *x > win[best].0 {
                        best = i;
                    }
                }
                let mut out = win[best].1.clone();
                win.drain(..s);
                out.seq = self.emitted;
                out.ts = ts;
                self.emitted += 1;
                Ok(Step { outputs: vec![out], work: emit })
            }
            Logic::Average { field, win } => {
                win.push_back(numeric(&rec, field)?);
                if win.len() < w {
                    return Ok(Step { outputs: vec![], work: Work::Update });
                }
                let avg = win.iter().sum::<f64>() / w as f64;
                win.drain(..s);
                let mut f = Fields::default();
                f.push("avg", avg);
                let out = self.derived(ts, f);
                Ok(Step { outputs: vec![out], work: emit })
            }
            Logic::Count { key, win } => {
                let k = match key {
                    Some(field) => Some(key_of(&rec, field)?),
                    None => None,
                };
                win.push_back(k);
                if win.len() < w {
                    return Ok(Step { outputs: vec![], work: Work::Update });
                }
                let mut f = Fields::default();
                match key {
                    None => f.push("count", w as i64),
                    Some(field) => {
                        let mut counts: BTreeMap<&ValueKey, i64> = BTreeMap::new();
                        for k in win.iter().flatten() {
                            *counts.entry(k).or_default() += 1;
                        }
                        // Most frequent key; the smallest key wins ties.
                        let (k, c) = counts
                            .iter()
                            .fold(None::<(&ValueKey, i64)>, |acc, (k, c)| match acc {
                                Some((_, best)) if best >= *c => acc,
                                _ => Some((k, *c)),
                            })
                            .expect("window is non-empty");
                        f.push(field.clone(), k.to_value());
                        f.push("count", c);
                    }
                }
                win.drain(..s);
                let out = self.derived(ts, f);
                Ok(Step { outputs: vec![out], work: emit })
            }
            Logic::Partition { field, key, wins } => {
                let v = numeric(&rec, field)?;
                let k = key_of(&rec, key)?;
                let win = wins.entry(k.clone()).or_default();
                win.push_back(v);
                if win.len() < w {
                    return Ok(Step { outputs: vec![], work: Work::Update });
                }
                let avg = win.iter().sum::<f64>() / w as f64;
                win.drain(..s);
                let mut f = Fields::default();
                f.push(key.clone(), k.to_value());
                f.push("avg", avg);
                let out = self.derived(ts, f);
                Ok(Step { outputs: vec![out], work: emit })
            }
            Logic::Join { left_key, right_key, left, right } => {
                // Validate the key on arrival so bad records fail at the offending event.
                if port == 0 {
                    key_of(&rec, left_key)?;
                    left.push_back(rec);
                } else {
                    key_of(&rec, right_key)?;
                    right.push_back(rec);
                }
                if left.len() < w || right.len() < w {
                    return Ok(Step { outputs: vec![], work: Work::Update });
                }
                let mut pairs = Vec::new();
                for l in left.iter().take(w) {
                    let lk = key_of(l, left_key)?;
                    for r in right.iter().take(w) {
                        if key_of(r, right_key)? == lk {
                            pairs.push(join_fields(l, r));
                        }
                    }
                }
                // Independent of how the two sides were interleaved.
                let ts = left[w - 1].ts.max(right[w - 1].ts);
                left.drain(..s);
                right.drain(..s);
                let outputs = pairs.into_iter().map(|f| self.derived(ts, f)).collect();
                Ok(Step { outputs, work: emit })
            }
        }
    }
}

/// Left fields followed by right fields; right names that collide get an `r_` prefix.
pub fn join_fields(l: &EventRecord, r: &EventRecord) -> Fields {
    let mut f = l.fields.clone();
    for (name, v) in r.fields.iter() {
        if l.fields.contains(name) {
            f.push(format!("r_{name}"), v.clone());
        } else {
            f.push(name, v.clone());
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: i64) -> EventRecord {
        let mut f = Fields::default();
        f.push("x", v);
        EventRecord::new(SchemaId::Derived, v as u64, v as u64, f)
    }

    fn run(op: &mut Operator, xs: impl IntoIterator<Item = i64>) -> Vec<(usize, EventRecord)> {
        let mut out = Vec::new();
        for (i, v) in xs.into_iter().enumerate() {
            for r in op.process(0, x(v)).unwrap().outputs {
                out.push((i + 1, r));
            }
        }
        out
    }

    #[test]
    fn average_w3_s2() {
        let mut op = Operator::new(&OperatorSpec::windowed(OperatorKind::Average, Some("x"), 3, 2)).unwrap();
        let out = run(&mut op, 1..=7);
        let got: Vec<_> = out.iter().map(|(i, r)| (*i, r.get("avg").unwrap().as_f64().unwrap())).collect();
        assert_eq!(got, vec![(3, 2.0), (5, 4.0), (7, 6.0)]);
    }

    #[test]
    fn count_tumbling() {
        let mut op = Operator::new(&OperatorSpec::windowed(OperatorKind::Count, None, 5, 5)).unwrap();
        let out = run(&mut op, 0..12);
        let got: Vec<_> = out.iter().map(|(i, r)| (*i, r.get("count").cloned())).collect();
        assert_eq!(got, vec![(5, Some(Value::Int(5))), (10, Some(Value::Int(5)))]);
    }

    #[test]
    fn keyed_count_reports_most_frequent() {
        let spec = OperatorSpec::windowed(OperatorKind::Count, None, 4, 4).with_key("x");
        let mut op = Operator::new(&spec).unwrap();
        let out = run(&mut op, [3, 1, 3, 1]);
        assert_eq!(out[0].1.get("x"), Some(&Value::Int(1)));
        assert_eq!(out[0].1.get("count"), Some(&Value::Int(2)));
    }

    #[test]
    fn max_emits_first_argmax_record() {
        let mut op = Operator::new(&OperatorSpec::windowed(OperatorKind::Max, Some("x"), 3, 1)).unwrap();
        let out = run(&mut op, [5, 9, 2, 1, 0]);
        let got: Vec<_> = out.iter().map(|(_, r)| r.get("x").cloned().unwrap()).collect();
        assert_eq!(got, vec![Value::Int(9), Value::Int(9), Value::Int(2)]);
    }

    #[test]
    fn filter_and_map_outputs() {
        let mut f = Operator::new(&OperatorSpec::filter("gt(x,2)")).unwrap();
        assert_eq!(f.process(0, x(1)).unwrap(), Step { outputs: vec![], work: Work::FilterDrop });
        assert_eq!(f.process(0, x(3)).unwrap().work, Work::FilterPass);
        let mut m = Operator::new(&OperatorSpec::map("scale(x,0.9)")).unwrap();
        let s = m.process(0, x(100)).unwrap();
        assert_eq!(s.outputs[0].get("x").unwrap().as_f64(), Some(90.0));
        assert_eq!(s.work, Work::Map);
    }

    #[test]
    fn join_emits_key_equal_pairs() {
        let spec = OperatorSpec::windowed(OperatorKind::Join, None, 2, 1).with_key("x");
        let mut op = Operator::new(&spec).unwrap();
        assert!(op.process(0, x(1)).unwrap().outputs.is_empty());
        assert!(op.process(0, x(2)).unwrap().outputs.is_empty());
        assert!(op.process(1, x(2)).unwrap().outputs.is_empty());
        let step = op.process(1, x(7)).unwrap();
        assert_eq!(step.work, Work::Emit { window: 2 });
        assert_eq!(step.outputs.len(), 1);
        assert_eq!(step.outputs[0].get("r_x"), Some(&Value::Int(2)));
        assert_eq!(op.retained(), 2);
        assert_eq!(op.process(2, x(1)).unwrap_err(), OperatorError::BadPort(2));
    }

    #[test]
    fn errors_for_bad_fields() {
        let mut op = Operator::new(&OperatorSpec::windowed(OperatorKind::Average, Some("y"), 2, 1)).unwrap();
        assert_eq!(op.process(0, x(1)).unwrap_err(), OperatorError::MissingField("y".into()));
        let mut f = Fields::default();
        f.push("y", "text");
        let r = EventRecord::new(SchemaId::Derived, 0, 0, f);
        assert_eq!(op.process(0, r).unwrap_err(), OperatorError::TypeMismatch("y".into()));
    }

    #[test]
    fn spec_validation() {
        assert!(OperatorSpec::windowed(OperatorKind::Max, Some("x"), 3, 4).validate().is_err());
        assert!(OperatorSpec::windowed(OperatorKind::Max, Some("x"), 0, 0).validate().is_err());
        assert!(OperatorSpec::windowed(OperatorKind::Join, None, 3, 1).validate().is_err());
        let mut m = OperatorSpec::map("identity");
        m.window_size = Some(3);
        assert!(m.validate().is_err());
        assert!(OperatorSpec::windowed(OperatorKind::Count, None, 3, 3).validate().is_ok());
    }
}
