use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, Featurizer};
use crate::engine::OperatorKind;
use crate::observer::{TimingTrace, WindowParams};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Row<T> {
    pub features: Vec<T>,
    pub label: OperatorKind,
    pub params: Option<WindowParams>,
    pub query_id: Option<String>,
    pub stage: Option<usize>,
}

/// Sidecar metadata. `classes` is the ordered class list; a class's index in
/// it is its id everywhere downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub featurizer: String,
    pub k: usize,
    pub trim: f64,
    pub normalize: bool,
    pub classes: Vec<OperatorKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    pub rows: Vec<Row<T>>,
    pub meta: DatasetMeta,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> &[OperatorKind] {
        &self.meta.classes
    }

    pub fn class_index(&self, kind: OperatorKind) -> Option<usize> {
        self.meta.classes.iter().position(|c| *c == kind)
    }

    /// Class index per row.
    pub fn targets(&self) -> Vec<usize> {
        self.rows.iter().map(|r| self.class_index(r.label).expect("label in class set")).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        LabeledDataset { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), meta: self.meta.clone() }
    }

    pub fn filter(&self, keep: impl Fn(&Row<T>) -> bool) -> Self {
        LabeledDataset { rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(), meta: self.meta.clone() }
    }

    /// Distinct query ids in first-seen order.
    pub fn query_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for q in self.rows.iter().filter_map(|r| r.query_id.as_ref()) {
            if !out.contains(q) {
                out.push(q.clone());
            }
        }
        out
    }

    pub fn count_per_class(&self) -> Vec<usize> {
        let mut c = vec![0; self.meta.classes.len()];
        for t in self.targets() {
            c[t] += 1;
        }
        c
    }
}

fn sorted_classes(labels: impl Iterator<Item = OperatorKind>) -> Vec<OperatorKind> {
    let mut v: Vec<_> = labels.collect();
    v.sort();
    v.dedup();
    v
}

/// Featurizes every trace. Row `i` comes from trace `i`.
pub fn build_dataset<T: Scalar, F: Featurizer<T> + ?Sized>(
    traces: &[TimingTrace],
    featurizer: &F,
    trim: f64,
    normalize: bool,
) -> Result<LabeledDataset<T>, FeatureError> {
    if let Some(i) = traces.iter().position(|t| t.label().is_none()) {
        return Err(FeatureError::MissingLabel(i));
    }
    let rows = traces
        .par_iter()
        .map(|t| {
            Ok(Row {
                features: featurizer.featurize(t)?.values,
                label: t.label().expect("checked"),
                params: t.params(),
                query_id: t.meta.query_id.clone(),
                stage: t.meta.stage_id,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    let meta = DatasetMeta {
        featurizer: featurizer.id().to_owned(),
        k: featurizer.dim(),
        trim,
        normalize,
        classes: sorted_classes(rows.iter().map(|r| r.label)),
    };
    Ok(LabeledDataset { rows, meta })
}

/// Header `label,query_id,stage,w,s,f0..f{k-1}`; absent values are empty.
pub fn write_csv<T: Scalar, W: Write>(w: W, ds: &LabeledDataset<T>) -> Result<(), FeatureError> {
    let io = |e: csv::Error| FeatureError::Io(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["label", "query_id", "stage", "w", "s"].iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.meta.k).map(|j| format!("f{j}")));
    out.write_record(&header).map_err(io)?;
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &ds.rows {
        let mut rec = vec![
            r.label.to_string(),
            r.query_id.clone().unwrap_or_default(),
            opt(r.stage),
            opt(r.params.map(|p| p.w)),
            opt(r.params.map(|p| p.s)),
        ];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(|e| FeatureError::Io(e.to_string()))
}

/// Reads rows written by [`write_csv`]; `meta` comes from the sidecar.
pub fn read_csv<T: Scalar, R: Read>(r: R, meta: DatasetMeta) -> Result<LabeledDataset<T>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let perr = |msg: String| FeatureError::Parse { line, msg };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != 5 + meta.k {
            return Err(perr(format!("expected {} columns, got {}", 5 + meta.k, rec.len())));
        }
        let num = |s: &str| -> Result<Option<usize>, FeatureError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| perr(format!("bad integer `{s}`")))
            }
        };
        let label: OperatorKind = rec[0].parse().map_err(perr)?;
        let params = match (num(&rec[3])?, num(&rec[4])?) {
            (Some(w), Some(s)) => Some(WindowParams { w, s }),
            _ => None,
        };
        let features = rec
            .iter()
            .skip(5)
            .map(|v| v.parse::<T>().map_err(|_| perr(format!("bad feature `{v}`"))))
            .collect::<Result<Vec<T>, _>>()?;
        rows.push(Row {
            features,
            label,
            params,
            query_id: (!rec[1].is_empty()).then(|| rec[1].to_owned()),
            stage: num(&rec[2])?,
        });
    }
    let mut meta = meta;
    if meta.classes.is_empty() {
        meta.classes = sorted_classes(rows.iter().map(|r| r.label));
    }
    if let Some(r) = rows.iter().find(|r| !meta.classes.contains(&r.label)) {
        return Err(FeatureError::Parse { line: 0, msg: format!("label {} not in class list", r.label) });
    }
    Ok(LabeledDataset { rows, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::CdfFeaturizer;
    use crate::observer::TraceMeta;

    fn t(label: Option<OperatorKind>, d: Vec<u64>, q: &str) -> TimingTrace {
        let meta = TraceMeta { query_id: Some(q.into()), stage_id: Some(1), ..TraceMeta::default() };
        let params = label.filter(|k| k.is_windowed()).map(|_| WindowParams { w: 8, s: 2 });
        TimingTrace::new(label, params, d, meta).unwrap()
    }

    #[test]
    fn build_and_csv_roundtrip() {
        let traces = vec![
            t(Some(OperatorKind::Max), vec![5, 9, 1, 3], "Q4"),
            t(Some(OperatorKind::Map), vec![2, 2, 2], "Q1"),
        ];
        let f = CdfFeaturizer { k: 4, trim: 0.0, normalize: false };
        let ds: LabeledDataset<f64> = build_dataset(&traces, &f, 0.0, false).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.classes(), &[OperatorKind::Map, OperatorKind::Max]);
        assert_eq!(ds.targets(), vec![1, 0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,query_id,stage,w,s,f0,f1,f2,f3\nMax,Q4,1,8,2,1,3,5,9\nMap,Q1,1,,,2,2,2,2\n"));
        assert_eq!(read_csv::<f64, _>(&buf[..], ds.meta.clone()).unwrap(), ds);
    }

    #[test]
    fn missing_label_and_empty_input() {
        let f = CdfFeaturizer::default();
        let err = build_dataset::<f64, _>(&[t(None, vec![1], "Q1")], &f, 0.05, false).unwrap_err();
        assert_eq!(err, FeatureError::MissingLabel(0));
        assert!(build_dataset::<f32, _>(&[], &f, 0.05, false).unwrap().is_empty());
    }
}
