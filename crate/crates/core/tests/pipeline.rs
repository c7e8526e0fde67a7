use std::collections::BTreeMap;
use std::time::Duration;

use sidestream::engine::{
    batch_stage, execute_reference, fuse_stages, pad_stage, run_pipeline, EngineError, EventRecord, ExecMode, Fields,
    OperatorSpec, PipelineSpec, RunOptions, SchemaId,
};
use sidestream::generators::{catalog_query, gen_flights, gen_nexmark, Counts, GeneratorConfig, QueryId};

fn inputs() -> BTreeMap<String, Vec<EventRecord>> {
    let cfg = GeneratorConfig {
        seed: 5,
        counts: Counts { persons: 40, auctions: 800, bids: 800, flights: 600 },
        locality: Some(8),
        ..GeneratorConfig::default()
    };
    let mut m = gen_nexmark(&cfg).unwrap().into_inputs();
    m.insert("flights".into(), gen_flights(&cfg).unwrap());
    m
}

fn all_queries() -> Vec<QueryId> {
    QueryId::NEXMARK.into_iter().chain([QueryId::SecureStream]).collect()
}

fn run(spec: &PipelineSpec, inputs: &BTreeMap<String, Vec<EventRecord>>, mode: ExecMode) -> BTreeMap<usize, Vec<EventRecord>> {
    let opts = RunOptions { mode, capacity: 16, ..RunOptions::default() };
    run_pipeline(spec, inputs, &opts).unwrap().wait().unwrap().sinks
}

#[test]
fn catalog_queries_match_reference_in_both_modes() {
    let inputs = inputs();
    for q in all_queries() {
        let spec = catalog_query(q);
        let expected = execute_reference(&spec, &inputs).unwrap();
        assert!(expected.values().all(|v| !v.is_empty()), "{q} produced nothing");
        assert_eq!(run(&spec, &inputs, ExecMode::Deterministic), expected, "{q} deterministic");
        assert_eq!(run(&spec, &inputs, ExecMode::Threaded), expected, "{q} threaded");
    }
}

#[test]
fn map_preserves_order_and_count() {
    let recs: Vec<EventRecord> = (0..1000)
        .map(|i| {
            let mut f = Fields::default();
            f.push("x", i as i64);
            EventRecord::new(SchemaId::Derived, i, i, f)
        })
        .collect();
    let spec = PipelineSpec::single(OperatorSpec::map("offset(x,1)"), &["in"]);
    let inputs = BTreeMap::from([("in".to_owned(), recs)]);
    let out = run(&spec, &inputs, ExecMode::Threaded);
    let xs: Vec<_> = out[&0].iter().map(|r| r.get("x").cloned().unwrap().as_f64().unwrap() as i64).collect();
    assert_eq!(xs, (1..=1000).collect::<Vec<_>>());
}

#[test]
fn mitigations_preserve_outputs() {
    let inputs = inputs();
    for q in all_queries() {
        let spec = catalog_query(q);
        let expected = execute_reference(&spec, &inputs).unwrap();
        for s in &spec.stages {
            let padded = pad_stage(&spec, s.id, 50_000).unwrap();
            assert_eq!(run(&padded, &inputs, ExecMode::Deterministic), expected);
            for b in [1, 7, 64] {
                let batched = batch_stage(&spec, s.id, b).unwrap();
                assert_eq!(run(&batched, &inputs, ExecMode::Deterministic), expected);
            }
        }
    }
    let q2 = catalog_query(QueryId::Q2);
    let fused = fuse_stages(&q2, &[0, 1]).unwrap();
    let expected = execute_reference(&q2, &inputs).unwrap();
    assert_eq!(run(&fused, &inputs, ExecMode::Deterministic)[&0], expected[&1]);
    assert_eq!(run(&fused, &inputs, ExecMode::Threaded)[&0], expected[&1]);
    let ss = catalog_query(QueryId::SecureStream);
    let fused = fuse_stages(&ss, &[0, 1, 2]).unwrap();
    assert_eq!(run(&fused, &inputs, ExecMode::Deterministic)[&0], execute_reference(&ss, &inputs).unwrap()[&2]);
}

#[test]
fn operator_errors_carry_the_stage() {
    let inputs = inputs();
    let spec = PipelineSpec::single(OperatorSpec::map("scale(nope,2)"), &["bids"]);
    for mode in [ExecMode::Deterministic, ExecMode::Threaded] {
        let opts = RunOptions { mode, stall_timeout: Duration::from_secs(5), ..RunOptions::default() };
        let err = run_pipeline(&spec, &inputs, &opts).unwrap().wait().unwrap_err();
        assert!(matches!(err, EngineError::Operator { stage: 0, .. }), "{err:?}");
    }
}

#[test]
fn missing_input_is_reported() {
    let spec = PipelineSpec::single(OperatorSpec::map("identity"), &["nowhere"]);
    let err = run_pipeline(&spec, &BTreeMap::new(), &RunOptions::default()).err().unwrap();
    assert_eq!(err, EngineError::MissingInput("nowhere".into()));
}
