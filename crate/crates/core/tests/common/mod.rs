//! Brute-force references shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use sidestream::engine::{join_fields, EventRecord, Fields, Operator, OperatorKind, OperatorSpec, SchemaId, Value, ValueKey};

pub const WINDOWED: [OperatorKind; 6] = [
    OperatorKind::Max,
    OperatorKind::Average,
    OperatorKind::AveragePartition,
    OperatorKind::Count,
    OperatorKind::Reduce,
    OperatorKind::Join,
];

pub fn rec(i: usize, x: i64, k: i64) -> EventRecord {
    let mut f = Fields::default();
    f.push("x", x);
    f.push("k", k);
    EventRecord::new(SchemaId::Derived, i as u64, i as u64, f)
}

/// `(port, record)` arrivals; port 1 is only used by joins.
pub fn random_stream<R: Rng>(rng: &mut R, kind: OperatorKind, max_len: usize, keys: i64) -> Vec<(usize, EventRecord)> {
    let n = rng.gen_range(0..=max_len);
    (0..n)
        .map(|i| {
            let port = if kind == OperatorKind::Join { rng.gen_range(0..2) } else { 0 };
            (port, rec(i, rng.gen_range(-50..50), rng.gen_range(0..keys)))
        })
        .collect()
}

pub fn spec_for(kind: OperatorKind, w: usize, s: usize, keyed_count: bool) -> OperatorSpec {
    let field = (!matches!(kind, OperatorKind::Join | OperatorKind::Count)).then_some("x");
    let spec = OperatorSpec::windowed(kind, field, w, s);
    match kind {
        OperatorKind::Join | OperatorKind::AveragePartition => spec.with_key("k"),
        OperatorKind::Count if keyed_count => spec.with_key("k"),
        _ => spec,
    }
}

/// Arrival index and output fields of every emission.
pub type Emissions = Vec<(usize, Vec<Fields>)>;

pub fn run_operator(spec: &OperatorSpec, stream: &[(usize, EventRecord)]) -> Emissions {
    let mut op = Operator::new(spec).expect("valid spec");
    let mut out = Vec::new();
    for (i, (port, r)) in stream.iter().enumerate() {
        let step = op.process(*port, r.clone()).expect("well-formed record");
        if matches!(step.work, sidestream::engine::Work::Emit { .. }) {
            out.push((i, step.outputs.into_iter().map(|o| o.fields).collect()));
        }
    }
    out
}

fn x(r: &EventRecord) -> f64 {
    r.get("x").and_then(Value::as_f64).unwrap()
}

fn key(r: &EventRecord) -> ValueKey {
    r.get("k").unwrap().key()
}

/// Starts of every complete window over `n` events.
fn starts(n: usize, w: usize, s: usize) -> impl Iterator<Item = usize> {
    (0..).map(move |j| j * s).take_while(move |&a| a + w <= n)
}

fn fields(pairs: &[(&str, Value)]) -> Fields {
    let mut f = Fields::default();
    for (n, v) in pairs {
        f.push(*n, v.clone());
    }
    f
}

/// Materializes every window explicitly.
pub fn oracle(spec: &OperatorSpec, stream: &[(usize, EventRecord)]) -> Emissions {
    let (w, s) = spec.window_params().unwrap();
    let mean = |win: &[f64]| win.iter().sum::<f64>() / w as f64;
    match spec.kind {
        OperatorKind::Max | OperatorKind::Average | OperatorKind::Reduce | OperatorKind::Count => {
            let recs: Vec<&EventRecord> = stream.iter().map(|(_, r)| r).collect();
            starts(recs.len(), w, s)
                .map(|a| {
                    let win = &recs[a..a + w];
                    let out = match spec.kind {
                        OperatorKind::Max => {
                            let best = win.iter().fold(win[0], |b, r| if x(r) > x(b) { r } else { b });
                            best.fields.clone()
                        }
                        OperatorKind::Count => match &spec.key_field {
                            None => fields(&[("count", Value::Int(w as i64))]),
                            Some(_) => {
                                let mut c: BTreeMap<ValueKey, i64> = BTreeMap::new();
                                win.iter().for_each(|r| *c.entry(key(r)).or_default() += 1);
                                let top = *c.values().max().unwrap();
                                let k = c.iter().find(|(_, n)| **n == top).unwrap().0;
                                fields(&[("k", k.to_value()), ("count", Value::Int(top))])
                            }
                        },
                        _ => {
                            let xs: Vec<f64> = win.iter().map(|r| x(r)).collect();
                            fields(&[("avg", Value::Float(mean(&xs)))])
                        }
                    };
                    (a + w - 1, vec![out])
                })
                .collect()
        }
        OperatorKind::AveragePartition => {
            let mut by_key: BTreeMap<ValueKey, Vec<(usize, f64)>> = BTreeMap::new();
            for (i, (_, r)) in stream.iter().enumerate() {
                by_key.entry(key(r)).or_default().push((i, x(r)));
            }
            let mut out: Vec<(usize, Vec<Fields>)> = Vec::new();
            for (k, evs) in &by_key {
                for a in starts(evs.len(), w, s) {
                    let xs: Vec<f64> = evs[a..a + w].iter().map(|e| e.1).collect();
                    out.push((evs[a + w - 1].0, vec![fields(&[("k", k.to_value()), ("avg", Value::Float(mean(&xs)))])]));
                }
            }
            out.sort_by_key(|e| e.0);
            out
        }
        OperatorKind::Join => {
            let side = |p: usize| -> Vec<(usize, &EventRecord)> {
                stream.iter().enumerate().filter(|(_, (q, _))| *q == p).map(|(i, (_, r))| (i, r)).collect()
            };
            let (l, r) = (side(0), side(1));
            starts(l.len(), w, s)
                .zip(starts(r.len(), w, s))
                .map(|(a, b)| {
                    let mut pairs = Vec::new();
                    for (_, lr) in &l[a..a + w] {
                        for (_, rr) in &r[b..b + w] {
                            if key(lr) == key(rr) {
                                pairs.push(join_fields(lr, rr));
                            }
                        }
                    }
                    (l[a + w - 1].0.max(r[b + w - 1].0), pairs)
                })
                .collect()
        }
        OperatorKind::Map | OperatorKind::Filter => unreachable!("stateless"),
    }
}

/// Single-threaded reference for the ring: a bounded deque with one slot reserved.
pub struct RefQueue {
    pub items: VecDeque<u64>,
    pub capacity: usize,
}

impl RefQueue {
    pub fn usable(&self) -> usize {
        self.capacity - 1
    }
}
