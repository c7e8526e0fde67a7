use std::collections::BTreeMap;
use std::io::BufReader;

use sidestream::attack::{
    evaluate_mitigation, evaluate_setting1, evaluate_setting2, kind_suite, online_phase, profile_catalog,
    train_artifacts, write_qrsr_csv, write_stage_csv, Artifacts, Mitigation, QrsrReport, Setting, Victim,
};
use sidestream::engine::{ExecMode, OperatorKind, RunOptions};
use sidestream::features::{build_dataset, read_csv, write_csv, CdfFeaturizer, DatasetMeta};
use sidestream::generators::{catalog_query_with, gen_flights, gen_nexmark, write_stream};
use sidestream::models::{evaluate, write_cv_csv};
use sidestream::observer::{read_jsonl, write_jsonl, Mode, TimingTrace};
use sidestream::LabeledDataset;

use crate::config::ExperimentConfig;
use crate::output::{require, Outputs};
use crate::CliError;

pub const TRACES: &str = "traces.jsonl";
pub const DATASET: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset.meta.json";
pub const MODEL_DIR: &str = "model";
pub const QRSR_REPORT: &str = "qrsr_report.json";

fn run_options(cfg: &ExperimentConfig) -> RunOptions {
    let mode = match cfg.mode {
        Mode::Simulated => ExecMode::Deterministic,
        Mode::Measured => ExecMode::Threaded,
    };
    RunOptions { mode, seed: cfg.seed, cost_model: cfg.cost_model.clone(), ..RunOptions::default() }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut out = Outputs::new(&cfg.out)?;
    let data = &cfg.profile.data;
    let nx = gen_nexmark(data)?;
    let flights = gen_flights(data)?;
    for (name, recs) in [("persons", &nx.persons), ("auctions", &nx.auctions), ("bids", &nx.bids), ("flights", &flights)] {
        let mut buf = Vec::new();
        write_stream(&mut buf, recs).expect("in-memory write");
        out.write(&format!("data/{name}.jsonl"), &buf, Some(recs.len()))?;
    }
    out.finish("generate", cfg)?;
    Ok(())
}

pub fn profile(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let traces = profile_catalog(&cfg.profile, &cfg.cost_model, cfg.mode, cfg.seed)?;
    let mut out = Outputs::new(&cfg.out)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &traces).expect("in-memory write");
    out.write(TRACES, &buf, Some(traces.len()))?;
    out.finish("profile", cfg)?;
    eprintln!("profiled {} traces", traces.len());
    Ok(())
}

fn load_traces(cfg: &ExperimentConfig) -> Result<Vec<TimingTrace>, CliError> {
    let p = cfg.out.join(TRACES);
    require(&p)?;
    let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

pub fn featurize(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let traces = load_traces(cfg)?;
    let f = &cfg.featurizer;
    let ds = build_dataset::<f64, _>(&traces, f, f.trim, f.normalize)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write(DATASET, &csv_bytes(|b| Ok(write_csv(b, &ds)?))?, Some(ds.len()))?;
    out.write_json(DATASET_META, &ds.meta)?;
    out.finish("featurize", cfg)?;
    eprintln!("{} rows, {} features, classes {:?}", ds.len(), ds.meta.k, ds.meta.classes);
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset, CliError> {
    let (p, mp) = (cfg.out.join(DATASET), cfg.out.join(DATASET_META));
    require(&p)?;
    require(&mp)?;
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&mp).map_err(|e| CliError::io(&mp, e))?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", mp.display())))?;
    let f = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(read_csv(BufReader::new(f), meta)?)
}

fn featurizer_of(ds: &LabeledDataset) -> CdfFeaturizer {
    CdfFeaturizer { k: ds.meta.k, trim: ds.meta.trim, normalize: ds.meta.normalize }
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let art = train_artifacts(&ds, &featurizer_of(&ds), &cfg.model, cfg.seed)?;
    let mut out = Outputs::new(&cfg.out)?;
    let dir = out.path(MODEL_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    art.save(&dir)?;
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for n in names {
        out.adopt(&format!("{MODEL_DIR}/{n}"))?;
    }
    if let Some(cv) = &art.cv {
        out.write("cv.csv", &csv_bytes(|b| Ok(write_cv_csv(b, cv)?))?, Some(cv.table.len()))?;
    }
    out.write_json("train_metrics.json", &evaluate(&art.classifier, &ds)?)?;
    out.finish("train", cfg)?;
    eprintln!("trained {}", art.classifier.spec.params.describe());
    Ok(())
}

pub fn attack(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = cfg.out.join(MODEL_DIR);
    require(&dir.join("classifier.json"))?;
    let art = Artifacts::load(&dir)?;
    let ds = load_dataset(cfg)?;
    let inputs = gen_nexmark(&cfg.profile.data)?.into_inputs();
    let run = run_options(cfg);
    let mut recovered = Vec::new();
    for q in cfg.victims() {
        let spec = catalog_query_with(q, &cfg.profile.catalog);
        let (rq, _) = online_phase(q.name(), &spec, &inputs, &art, &run, false)?;
        recovered.push(rq);
    }
    let report = match cfg.setting {
        Setting::EvenSplit => evaluate_setting1(&ds, &cfg.model, cfg.split_ratio, cfg.seed)?,
        Setting::LeaveOneQueryOut => evaluate_setting2(&ds, &cfg.model, cfg.seed)?,
    };
    let mut out = Outputs::new(&cfg.out)?;
    out.write_json("recovered_query.json", &recovered)?;
    out.write("stages.csv", &csv_bytes(|b| Ok(write_stage_csv(b, &recovered)?))?, None)?;
    out.write_json(QRSR_REPORT, &report)?;
    out.write("qrsr.csv", &csv_bytes(|b| Ok(write_qrsr_csv(b, &report)?))?, None)?;
    out.finish("attack", cfg)?;
    for rq in &recovered {
        let got: Vec<String> =
            rq.stages.iter().map(|s| s.prediction.map_or("?".into(), |p| p.kind.to_string())).collect();
        eprintln!("{}: {}", rq.name, got.join(" -> "));
    }
    for q in &report.queries {
        match q.qrsr {
            Some(v) => eprintln!("{} QRSR {:.2}%", q.query_id, 100.0 * v),
            None => eprintln!("{} excluded: {}", q.query_id, q.excluded.as_deref().unwrap_or("")),
        }
    }
    Ok(())
}

pub fn mitigate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = cfg.out.join(MODEL_DIR);
    require(&dir.join("classifier.json"))?;
    let art = Artifacts::load(&dir)?;
    let victims = match cfg.mitigation {
        Mitigation::Fuse { .. } => {
            let inputs = gen_nexmark(&cfg.profile.data)?.into_inputs();
            cfg.victims()
                .into_iter()
                .map(|q| Victim {
                    name: q.to_string(),
                    spec: catalog_query_with(q, &cfg.profile.catalog),
                    inputs: inputs.clone(),
                })
                .collect()
        }
        _ => kind_suite(&cfg.profile, &cfg.suite_kinds, cfg.suite_per_kind)?,
    };
    let report = evaluate_mitigation(&victims, &cfg.mitigation, &art, &run_options(cfg))?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write_json("mitigation.json", &report)?;
    out.finish("mitigate", cfg)?;
    eprintln!(
        "accuracy {:.4} -> {:.4}, mean CV {:.4} -> {:.4}, outputs preserved: {}",
        report.before.accuracy,
        report.after.accuracy,
        report.before.mean_dispersion,
        report.after.mean_dispersion,
        report.outputs_preserved
    );
    Ok(())
}

/// At most this many points per CDF curve.
const CDF_POINTS: usize = 256;

/// Empirical CDF of pooled deltas: `(x, P(delta <= x))` at evenly spaced ranks.
pub fn cdf_curve(mut deltas: Vec<u64>) -> Vec<(u64, f64)> {
    deltas.sort_unstable();
    let n = deltas.len();
    if n == 0 {
        return Vec::new();
    }
    let p = CDF_POINTS.min(n);
    let mut pts: Vec<(u64, f64)> = Vec::with_capacity(p);
    for j in 0..p {
        let i = if p == 1 { n - 1 } else { j * (n - 1) / (p - 1) };
        // Ties: report the last rank holding this value.
        let x = deltas[i];
        let last = deltas.partition_point(|d| *d <= x);
        let pt = (x, last as f64 / n as f64);
        if pts.last() != Some(&pt) {
            pts.push(pt);
        }
    }
    pts
}

fn confusion_csv(classes: &[OperatorKind], m: &[Vec<usize>]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["truth".to_owned()];
        header.extend(classes.iter().map(|c| c.to_string()));
        w.write_record(&header).map_err(CliError::csv)?;
        for (c, row) in classes.iter().zip(m) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec).map_err(CliError::csv)?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let traces_path = cfg.out.join(TRACES);
    let qrsr_path = cfg.out.join(QRSR_REPORT);
    if !traces_path.exists() && !qrsr_path.exists() {
        return Err(CliError::MissingInput(traces_path));
    }
    let mut out = Outputs::new(&cfg.out)?;
    if traces_path.exists() {
        let mut pooled: BTreeMap<OperatorKind, Vec<u64>> = BTreeMap::new();
        for t in load_traces(cfg)? {
            if let Some(k) = t.label() {
                pooled.entry(k).or_default().extend_from_slice(t.deltas());
            }
        }
        for (kind, deltas) in pooled {
            let curve = cdf_curve(deltas);
            let bytes = csv_bytes(|b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["x", "y"]).map_err(CliError::csv)?;
                for (x, y) in &curve {
                    w.write_record([x.to_string(), y.to_string()]).map_err(CliError::csv)?;
                }
                w.flush().map_err(|e| CliError::Runtime(e.to_string()))
            })?;
            out.write(&format!("report/cdf_{kind}.csv"), &bytes, Some(curve.len()))?;
        }
    }
    if qrsr_path.exists() {
        let text = std::fs::read_to_string(&qrsr_path).map_err(|e| CliError::io(&qrsr_path, e))?;
        let r: QrsrReport =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", qrsr_path.display())))?;
        if let Some(m) = &r.overall {
            out.write("report/confusion.csv", &confusion_csv(&m.classes, &m.confusion)?, Some(m.classes.len()))?;
            out.write_json("report/metrics.json", m)?;
        }
        out.write("report/qrsr.csv", &csv_bytes(|b| Ok(write_qrsr_csv(b, &r)?))?, None)?;
    }
    out.finish("report", cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_curve_is_monotone_and_ends_at_one() {
        let c = cdf_curve(vec![5, 1, 1, 3, 9, 9, 9]);
        assert_eq!(c, vec![(1, 2.0 / 7.0), (3, 3.0 / 7.0), (5, 4.0 / 7.0), (9, 1.0)]);
        let big = cdf_curve((0..10_000u64).map(|i| (i * 7919) % 1000).collect());
        assert!(big.len() <= CDF_POINTS);
        assert!(big.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        assert_eq!(big.last().unwrap().1, 1.0);
        assert!(cdf_curve(vec![]).is_empty());
    }

    #[test]
    fn confusion_rows() {
        use OperatorKind::*;
        let b = confusion_csv(&[Map, Filter], &[vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "truth,Map,Filter\nMap,3,1\nFilter,0,2\n");
    }
}
