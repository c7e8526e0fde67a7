use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::offline::ModelConfig;
use super::{qrsr, AttackError};
use crate::engine::OperatorKind;
use crate::features::{leave_one_query_out, split_even};
use crate::models::{
    derive_seed, evaluate, evaluate_regressor, fit, fit_param_regressor, grid_search, GridResult, MetricsReport,
    ModelError, ModelSpec, RegressionReport, Target, TrainingInfo,
};
use crate::{LabeledDataset, TrainedModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Stratified train/test split of the whole dataset.
    #[default]
    EvenSplit,
    /// Every query is held out in turn and tested on alone.
    LeaveOneQueryOut,
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "even_split" | "even" => Ok(Setting::EvenSplit),
            "2" | "leave_one_query_out" | "loqo" => Ok(Setting::LeaveOneQueryOut),
            other => Err(format!("unknown setting `{other}` (expected 1|2)")),
        }
    }
}

/// Test accuracy on one operator (stage) of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorScore {
    pub stage: Option<usize>,
    pub kind: OperatorKind,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub operators: Vec<OperatorScore>,
    /// Absent when the query was excluded.
    pub qrsr: Option<f64>,
    /// Kinds left out of scoring because training never saw them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<OperatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
    /// Model trained for this hold-out (leave-one-query-out only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrsrReport {
    pub setting: Setting,
    /// Winning configuration (even split only).
    pub model: Option<ModelSpec>,
    pub queries: Vec<QueryScore>,
    /// Metrics over every test row (even split only).
    pub overall: Option<MetricsReport>,
}

impl QrsrReport {
    pub fn query(&self, id: &str) -> Option<&QueryScore> {
        self.queries.iter().find(|q| q.query_id == id)
    }
}

/// Grid-searches on `train` (skipped for a single configuration) and fits
/// the winner on all of it.
pub fn train_classifier(
    train: &LabeledDataset,
    mc: &ModelConfig,
    seed: u64,
) -> Result<(TrainedModel, Option<GridResult>), AttackError> {
    let configs = mc.grid.configs();
    let (spec, cv) = match configs.as_slice() {
        [] => return Err(ModelError::InvalidSpec("empty grid".into()).into()),
        [one] => (ModelSpec { params: *one, seed, max_bins: mc.max_bins }, None),
        _ => {
            let r = grid_search(&mc.grid, train, mc.folds, seed, mc.max_bins)?;
            (r.best, Some(r))
        }
    };
    let mut model = fit(&spec, train)?;
    if let Some(cv) = &cv {
        model.info = TrainingInfo { cv_folds: Some(cv.folds), cv_accuracy: Some(cv.best_mean), ..model.info };
    }
    Ok((model, cv))
}

/// Per-operator scores of `model` on `test`, grouped by query in
/// first-seen order and by stage within a query.
fn score_queries(model: &TrainedModel, test: &LabeledDataset) -> Result<Vec<QueryScore>, AttackError> {
    let mut tally: BTreeMap<(String, Option<usize>, OperatorKind), (usize, usize)> = BTreeMap::new();
    for r in &test.rows {
        let q = r.query_id.clone().unwrap_or_default();
        let hit = model.predict_class(&r.features)?.kind == r.label;
        let e = tally.entry((q, r.stage, r.label)).or_default();
        e.0 += 1;
        e.1 += hit as usize;
    }
    let mut order = test.query_ids();
    if test.rows.iter().any(|r| r.query_id.is_none()) {
        order.push(String::new());
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let operators: Vec<OperatorScore> = tally
                .iter()
                .filter(|((qq, _, _), _)| *qq == q)
                .map(|((_, stage, kind), (n, c))| OperatorScore {
                    stage: *stage,
                    kind: *kind,
                    samples: *n,
                    correct: *c,
                    accuracy: *c as f64 / *n as f64,
                })
                .collect();
            let acc: Vec<f64> = operators.iter().map(|o| o.accuracy).collect();
            QueryScore { query_id: q, qrsr: Some(qrsr(&acc)), operators, dropped: Vec::new(), excluded: None, model: None }
        })
        .collect())
}

/// Even split: train on `ratio` of every class, score per query on the rest.
pub fn evaluate_setting1(ds: &LabeledDataset, mc: &ModelConfig, ratio: f64, seed: u64) -> Result<QrsrReport, AttackError> {
    let (train, test) = split_even(ds, ratio, seed)?;
    let (model, _) = train_classifier(&train, mc, derive_seed(seed, 1))?;
    Ok(QrsrReport {
        setting: Setting::EvenSplit,
        model: Some(model.spec),
        queries: score_queries(&model, &test)?,
        overall: Some(evaluate(&model, &test)?),
    })
}

/// Leave-one-query-out. Operators of kinds that occur only in the held-out
/// query are dropped; a query left with nothing to score is excluded.
pub fn evaluate_setting2(ds: &LabeledDataset, mc: &ModelConfig, seed: u64) -> Result<QrsrReport, AttackError> {
    let queries = ds.query_ids();
    if queries.len() < 2 {
        return Err(AttackError::InvalidConfig("leave-one-query-out needs at least two queries".into()));
    }
    let scores = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| -> Result<QueryScore, AttackError> {
            let h = leave_one_query_out(ds, q)?;
            let test = h.test.filter(|r| !h.unseen.contains(&r.label));
            let excluded = |why: String| QueryScore {
                query_id: q.clone(),
                operators: Vec::new(),
                qrsr: None,
                dropped: h.unseen.clone(),
                excluded: Some(why),
                model: None,
            };
            if test.is_empty() {
                let kinds: Vec<&str> = h.unseen.iter().map(|k| k.name()).collect();
                return Ok(excluded(format!("every operator is unique to this query ({})", kinds.join(", "))));
            }
            let (model, _) = match train_classifier(&h.train, mc, derive_seed(seed, i as u64)) {
                Ok(m) => m,
                Err(AttackError::Model(ModelError::DegenerateData)) => {
                    return Ok(excluded("training data has fewer than two classes".into()))
                }
                Err(e) => return Err(e),
            };
            let mut s = score_queries(&model, &test)?.remove(0);
            s.dropped = h.unseen.clone();
            s.model = Some(model.spec);
            Ok(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QrsrReport { setting: Setting::LeaveOneQueryOut, model: None, queries: scores, overall: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub kind: OperatorKind,
    pub target: Target,
    pub report: RegressionReport,
}

/// Fits and scores a regressor per windowed kind and target on an even
/// split. Kinds whose target never varies are skipped.
pub fn evaluate_param_regression(
    ds: &LabeledDataset,
    spec: &ModelSpec,
    ratio: f64,
    seed: u64,
) -> Result<Vec<RegressionRow>, AttackError> {
    let (train, test) = split_even(ds, ratio, seed)?;
    let mut out = Vec::new();
    for &kind in ds.classes().iter().filter(|k| k.is_windowed()) {
        let tr = train.filter(|r| r.label == kind);
        let te = test.filter(|r| r.label == kind);
        if tr.is_empty() || te.is_empty() {
            continue;
        }
        for target in [Target::WindowSize, Target::Slide] {
            match fit_param_regressor(spec, &tr, target) {
                Ok(m) => out.push(RegressionRow { kind, target, report: evaluate_regressor(&m, &te)? }),
                Err(ModelError::DegenerateTarget) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(out)
}
