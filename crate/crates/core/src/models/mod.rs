//! Operator classifiers and window-parameter regressors built from
//! histogram decision-tree ensembles.

mod binning;
mod cv;
mod ensemble;
mod metrics;
mod spec;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binning::{BinnedMatrix, Binner};
pub use cv::{grid_search, stratified_folds, write_cv_csv, CvRow, GridResult};
pub use ensemble::{grow_forest, Booster, Ensemble, Labels, Prepared};
pub use metrics::{classification_report, regression_report, ClassMetrics, MetricsReport, RegressionReport, MSE_SCALE};
pub use spec::{
    BoostParams, ClassifierSpec, Family, ForestParams, Grid, Hyperparams, MaxFeatures, ModelSpec, DEFAULT_MAX_BINS,
    DEPTH_CAP,
};
pub use tree::{derive_seed, GrowParams, Node, NodeRecord, Task, Tree};

use crate::engine::OperatorKind;
use crate::features::{FeatureVector, LabeledDataset, Row};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("training data has fewer than two classes")]
    DegenerateData,
    #[error("row {row}, feature {feature} is not finite")]
    NonFiniteFeature { row: usize, feature: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {0} has no window parameters")]
    MissingTarget(usize),
    #[error("regression target is constant")]
    DegenerateTarget,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("test set is empty")]
    EmptyTest,
    #[error("rows mix operator kinds {0} and {1}")]
    MixedKinds(OperatorKind, OperatorKind),
    #[error("model is a {0}, not a {1}")]
    WrongObjective(&'static str, &'static str),
    #[error("i/o: {0}")]
    Io(String),
    #[error("cannot parse model: {0}")]
    Parse(String),
}

/// Window parameter a regressor predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    WindowSize,
    Slide,
}

impl Target {
    pub fn of<T>(self, row: &Row<T>) -> Option<f64> {
        row.params.map(|p| match self {
            Target::WindowSize => p.w as f64,
            Target::Slide => p.s as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum Objective {
    Classify { classes: Vec<OperatorKind> },
    Regress { target: Target, operator: OperatorKind },
}

impl Objective {
    fn name(&self) -> &'static str {
        match self {
            Objective::Classify { .. } => "classifier",
            Objective::Regress { .. } => "regressor",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel<T> {
    pub spec: ModelSpec,
    pub objective: Objective,
    pub k: usize,
    pub ensemble: Ensemble<T>,
    pub info: TrainingInfo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub kind: OperatorKind,
    pub index: usize,
    /// Vote share for forests, softmax probability for boosted models.
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(ClassPrediction),
    Value(f64),
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_rows<T: Scalar>(rows: &[&[T]], k: usize) -> Result<(), ModelError> {
    for (r, x) in rows.iter().enumerate() {
        if x.len() != k {
            return Err(ModelError::DimensionMismatch { expected: k, got: x.len() });
        }
        if let Some(f) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature { row: r, feature: f });
        }
    }
    Ok(())
}

/// Classes with at least one row, in class-list order.
pub(crate) fn present_classes<T: Scalar>(ds: &LabeledDataset<T>) -> Vec<OperatorKind> {
    let counts = ds.count_per_class();
    ds.classes().iter().zip(counts).filter(|(_, n)| *n > 0).map(|(c, _)| *c).collect()
}

pub(crate) fn fit_ensemble<T: Scalar>(spec: &ModelSpec, prep: &Prepared<T>, labels: &Labels) -> Ensemble<T> {
    match spec.params {
        Hyperparams::RandomForest(p) => Ensemble::Forest { trees: grow_forest(prep, labels, &p, spec.seed) },
        Hyperparams::GradientBoostedTrees(p) => {
            let mut b = Booster::new(prep, labels, p);
            for _ in 0..p.n_estimators {
                b.step();
            }
            b.into_ensemble()
        }
    }
}

pub(crate) fn validate_spec(spec: &ModelSpec) -> Result<(), ModelError> {
    let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_owned()));
    if spec.max_bins < 2 || spec.max_bins > u16::MAX as usize + 1 {
        return bad("max_bins must be in [2, 65536]");
    }
    match spec.params {
        Hyperparams::RandomForest(p) if p.n_estimators == 0 => bad("n_estimators must be >= 1"),
        Hyperparams::RandomForest(ForestParams { max_depth: Some(0), .. }) => bad("max_depth must be >= 1"),
        Hyperparams::GradientBoostedTrees(p) if p.n_estimators == 0 || p.max_depth == 0 => {
            bad("n_estimators and max_depth must be >= 1")
        }
        Hyperparams::GradientBoostedTrees(p) if !(p.eta > 0.0) || p.lambda < 0.0 || p.gamma < 0.0 => {
            bad("eta must be > 0, lambda and gamma >= 0")
        }
        _ => Ok(()),
    }
}

/// Trains an operator classifier. The model's class list holds the classes
/// present in `train`, in class-list order.
pub fn fit<T: Scalar>(spec: &ModelSpec, train: &LabeledDataset<T>) -> Result<TrainedModel<T>, ModelError> {
    validate_spec(spec)?;
    let classes = present_classes(train);
    if classes.len() < 2 {
        return Err(ModelError::DegenerateData);
    }
    let k = train.meta.k;
    let rows: Vec<&[T]> = train.rows.iter().map(|r| r.features.as_slice()).collect();
    check_rows(&rows, k)?;
    let y: Vec<usize> = train.rows.iter().map(|r| classes.iter().position(|c| *c == r.label).expect("present")).collect();
    let labels = Labels::Classes { y, n_classes: classes.len() };
    let prep = Prepared::new(&rows, k, spec.max_bins);
    Ok(TrainedModel {
        spec: *spec,
        objective: Objective::Classify { classes },
        k,
        ensemble: fit_ensemble(spec, &prep, &labels),
        info: TrainingInfo { rows: rows.len(), ..TrainingInfo::default() },
    })
}

/// Trains a regressor for one window parameter over rows of a single operator kind.
pub fn fit_param_regressor<T: Scalar>(
    spec: &ModelSpec,
    ds: &LabeledDataset<T>,
    target: Target,
) -> Result<TrainedModel<T>, ModelError> {
    validate_spec(spec)?;
    let Some(first) = ds.rows.first() else { return Err(ModelError::DegenerateData) };
    let operator = first.label;
    if let Some(r) = ds.rows.iter().find(|r| r.label != operator) {
        return Err(ModelError::MixedKinds(operator, r.label));
    }
    let y = ds
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| target.of(r).ok_or(ModelError::MissingTarget(i)))
        .collect::<Result<Vec<f64>, _>>()?;
    if y.iter().all(|v| *v == y[0]) {
        return Err(ModelError::DegenerateTarget);
    }
    let k = ds.meta.k;
    let rows: Vec<&[T]> = ds.rows.iter().map(|r| r.features.as_slice()).collect();
    check_rows(&rows, k)?;
    let prep = Prepared::new(&rows, k, spec.max_bins);
    Ok(TrainedModel {
        spec: *spec,
        objective: Objective::Regress { target, operator },
        k,
        ensemble: fit_ensemble(spec, &prep, &Labels::Values(y)),
        info: TrainingInfo { rows: rows.len(), ..TrainingInfo::default() },
    })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn classes(&self) -> &[OperatorKind] {
        match &self.objective {
            Objective::Classify { classes } => classes,
            Objective::Regress { .. } => &[],
        }
    }

    fn check(&self, x: &[T]) -> Result<(), ModelError> {
        check_rows(&[x], self.k)
    }

    pub fn predict_class(&self, x: &[T]) -> Result<ClassPrediction, ModelError> {
        let Objective::Classify { classes } = &self.objective else {
            return Err(ModelError::WrongObjective(self.objective.name(), "classifier"));
        };
        self.check(x)?;
        let c = classes.len();
        let raw = self.ensemble.raw(x, Some(c));
        let (index, confidence) = match &self.ensemble {
            Ensemble::Forest { trees } => {
                let i = argmax(&raw);
                (i, raw[i] / trees.len() as f64)
            }
            Ensemble::Boosted { .. } => {
                let mut p = vec![0.0; c];
                ensemble::softmax(&raw, &mut p);
                let i = argmax(&p);
                (i, p[i])
            }
        };
        Ok(ClassPrediction { kind: classes[index], index, confidence })
    }

    pub fn predict_value(&self, x: &[T]) -> Result<f64, ModelError> {
        if !matches!(self.objective, Objective::Regress { .. }) {
            return Err(ModelError::WrongObjective(self.objective.name(), "regressor"));
        }
        self.check(x)?;
        Ok(self.ensemble.raw(x, None)[0])
    }

    pub fn to_json(&self) -> String {
        let ensemble = match &self.ensemble {
            Ensemble::Forest { trees } => EnsembleRecord::Forest { trees: trees.iter().map(Tree::to_record).collect() },
            Ensemble::Boosted { base, rounds } => EnsembleRecord::Boosted {
                base: base.clone(),
                rounds: rounds.iter().map(|r| r.iter().map(Tree::to_record).collect()).collect(),
            },
        };
        let file = ModelFile {
            format: FORMAT.to_owned(),
            version: VERSION,
            spec: self.spec,
            objective: self.objective.clone(),
            k: self.k,
            info: self.info.clone(),
            ensemble,
        };
        serde_json::to_string(&file).expect("models always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let f: ModelFile = serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
        if f.format != FORMAT || f.version != VERSION {
            return Err(ModelError::Parse(format!("unsupported model format {} v{}", f.format, f.version)));
        }
        let ensemble = match f.ensemble {
            EnsembleRecord::Forest { trees } => Ensemble::Forest { trees: trees.iter().map(Tree::from_record).collect() },
            EnsembleRecord::Boosted { base, rounds } => Ensemble::Boosted {
                base,
                rounds: rounds.iter().map(|r| r.iter().map(Tree::from_record).collect()).collect(),
            },
        };
        Ok(TrainedModel { spec: f.spec, objective: f.objective, k: f.k, ensemble, info: f.info })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        Self::from_json(&s)
    }
}

const FORMAT: &str = "sidestream-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    spec: ModelSpec,
    #[serde(flatten)]
    objective: Objective,
    k: usize,
    info: TrainingInfo,
    ensemble: EnsembleRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum EnsembleRecord {
    Forest { trees: Vec<NodeRecord> },
    Boosted { base: Vec<f64>, rounds: Vec<Vec<NodeRecord>> },
}

pub fn predict<T: Scalar>(model: &TrainedModel<T>, fv: &FeatureVector<T>) -> Result<Prediction, ModelError> {
    match model.objective {
        Objective::Classify { .. } => model.predict_class(&fv.values).map(Prediction::Class),
        Objective::Regress { .. } => model.predict_value(&fv.values).map(Prediction::Value),
    }
}

/// Classification metrics over the union of the model's classes and the
/// test labels. Rows of a class the model never saw count as errors.
pub fn evaluate<T: Scalar>(model: &TrainedModel<T>, test: &LabeledDataset<T>) -> Result<MetricsReport, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTest);
    }
    let mut classes: Vec<OperatorKind> = model.classes().to_vec();
    classes.extend(test.rows.iter().map(|r| r.label));
    classes.sort();
    classes.dedup();
    let idx = |k: OperatorKind| classes.iter().position(|c| *c == k).expect("in union");
    let mut truth = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    for r in &test.rows {
        truth.push(idx(r.label));
        pred.push(idx(model.predict_class(&r.features)?.kind));
    }
    Ok(classification_report(&classes, &truth, &pred))
}

pub fn evaluate_regressor<T: Scalar>(
    model: &TrainedModel<T>,
    test: &LabeledDataset<T>,
) -> Result<RegressionReport, ModelError> {
    let Objective::Regress { target, .. } = model.objective else {
        return Err(ModelError::WrongObjective(model.objective.name(), "regressor"));
    };
    if test.is_empty() {
        return Err(ModelError::EmptyTest);
    }
    let mut truth = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    for (i, r) in test.rows.iter().enumerate() {
        truth.push(target.of(r).ok_or(ModelError::MissingTarget(i))?);
        pred.push(model.predict_value(&r.features)?);
    }
    Ok(regression_report(&truth, &pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DatasetMeta;
    use crate::observer::WindowParams;

    fn dataset(rows: Vec<(Vec<f64>, OperatorKind, Option<WindowParams>)>) -> LabeledDataset<f64> {
        let k = rows[0].0.len();
        let mut classes: Vec<OperatorKind> = rows.iter().map(|r| r.1).collect();
        classes.sort();
        classes.dedup();
        LabeledDataset {
            rows: rows
                .into_iter()
                .map(|(features, label, params)| Row { features, label, params, query_id: None, stage: None })
                .collect(),
            meta: DatasetMeta { featurizer: "test".into(), k, trim: 0.0, normalize: false, classes },
        }
    }

    fn blobs(n: usize, seed: u64) -> LabeledDataset<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let kinds = [OperatorKind::Map, OperatorKind::Filter, OperatorKind::Max];
        dataset(
            (0..n)
                .map(|i| {
                    let c = i % 3;
                    let x = (0..6).map(|j| (c * 10 + j) as f64 + rng.gen_range(-4.0..4.0)).collect();
                    (x, kinds[c], None)
                })
                .collect(),
        )
    }

    fn rf(n: usize, depth: Option<usize>, seed: u64) -> ModelSpec {
        ModelSpec::new(
            Hyperparams::RandomForest(ForestParams { n_estimators: n, max_depth: depth, ..ForestParams::default() }),
            seed,
        )
    }

    fn gbt(n: usize) -> ModelSpec {
        ModelSpec::new(Hyperparams::GradientBoostedTrees(BoostParams { n_estimators: n, ..BoostParams::default() }), 0)
    }

    #[test]
    fn separable_constant_classes() {
        let ds = dataset(
            (0..20)
                .map(|i| if i % 2 == 0 { (vec![1.0; 4], OperatorKind::Map, None) } else { (vec![9.0; 4], OperatorKind::Join, None) })
                .collect(),
        );
        for spec in [rf(10, None, 1), gbt(5)] {
            let m = fit(&spec, &ds).unwrap();
            assert_eq!(evaluate(&m, &ds).unwrap().accuracy, 1.0);
        }
    }

    #[test]
    fn single_class_rejected() {
        let ds = dataset(vec![(vec![1.0], OperatorKind::Map, None), (vec![2.0], OperatorKind::Map, None)]);
        assert_eq!(fit(&rf(3, None, 0), &ds).unwrap_err(), ModelError::DegenerateData);
    }

    #[test]
    fn nonfinite_and_dimension_checks() {
        let mut ds = blobs(30, 1);
        let m = fit(&rf(5, None, 0), &ds).unwrap();
        assert_eq!(m.predict_class(&[0.0; 5]).unwrap_err(), ModelError::DimensionMismatch { expected: 6, got: 5 });
        ds.rows[4].features[2] = f64::NAN;
        assert_eq!(fit(&rf(5, None, 0), &ds).unwrap_err(), ModelError::NonFiniteFeature { row: 4, feature: 2 });
    }

    #[test]
    fn single_unlimited_tree_memorizes() {
        let ds = blobs(150, 2);
        let spec = ModelSpec::new(
            Hyperparams::RandomForest(ForestParams {
                n_estimators: 1,
                max_depth: None,
                max_features: MaxFeatures::All,
                bootstrap: false,
            }),
            0,
        );
        let m = fit(&spec, &ds).unwrap();
        assert_eq!(evaluate(&m, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn three_tree_vote() {
        let leaf = |v: f64| Tree::<f64> {
            nodes: vec![Node { feature: 0, bin: 0, threshold: 0.0, left: 0, right: 0, depth: 0, value: v }],
        };
        let m = TrainedModel {
            spec: rf(3, None, 0),
            objective: Objective::Classify { classes: vec![OperatorKind::Map, OperatorKind::Filter] },
            k: 1,
            ensemble: Ensemble::Forest { trees: vec![leaf(0.0), leaf(0.0), leaf(1.0)] },
            info: TrainingInfo::default(),
        };
        let p = m.predict_class(&[0.0]).unwrap();
        assert_eq!(p.kind, OperatorKind::Map);
        assert!((p.confidence - 2.0 / 3.0).abs() < 1e-12);
        // Ties go to the lower class index.
        let m = TrainedModel { ensemble: Ensemble::Forest { trees: vec![leaf(1.0), leaf(0.0)] }, ..m };
        assert_eq!(m.predict_class(&[0.0]).unwrap().kind, OperatorKind::Map);
    }

    #[test]
    fn deterministic_and_reloadable() {
        let ds = blobs(90, 3);
        let probe = blobs(30, 4);
        for spec in [rf(20, Some(5), 7), gbt(10)] {
            let a = fit(&spec, &ds).unwrap();
            let b = fit(&spec, &ds).unwrap();
            let back = TrainedModel::<f64>::from_json(&a.to_json()).unwrap();
            for r in &probe.rows {
                let pa = a.predict_class(&r.features).unwrap();
                assert_eq!(pa, b.predict_class(&r.features).unwrap());
                assert_eq!(pa, back.predict_class(&r.features).unwrap());
            }
        }
    }

    #[test]
    fn positive_scaling_keeps_predictions() {
        let ds = blobs(90, 5);
        let probe = blobs(30, 6);
        let scale = |d: &LabeledDataset<f64>| {
            let mut d = d.clone();
            d.rows.iter_mut().for_each(|r| r.features.iter_mut().for_each(|v| *v *= 4.0));
            d
        };
        let a = fit(&rf(15, None, 2), &ds).unwrap();
        let b = fit(&rf(15, None, 2), &scale(&ds)).unwrap();
        for (r, s) in probe.rows.iter().zip(&scale(&probe).rows) {
            assert_eq!(a.predict_class(&r.features).unwrap().kind, b.predict_class(&s.features).unwrap().kind);
        }
    }

    fn windowed(ws: &[usize]) -> LabeledDataset<f64> {
        dataset(
            ws.iter()
                .flat_map(|&w| {
                    (0..10).map(move |i| {
                        let x = vec![w as f64 + (i % 3) as f64 * 0.1, (i % 5) as f64];
                        (x, OperatorKind::Average, Some(WindowParams { w, s: 2 }))
                    })
                })
                .collect(),
        )
    }

    #[test]
    fn regressor_recovers_window() {
        let ds = windowed(&[8, 16, 32]);
        for spec in [rf(30, None, 1), gbt(40)] {
            let m = fit_param_regressor(&spec, &ds, Target::WindowSize).unwrap();
            let r = evaluate_regressor(&m, &ds).unwrap();
            assert!(r.r2 >= 0.99, "{spec:?} {r:?}");
            assert!(matches!(predict(&m, &FeatureVector { values: ds.rows[0].features.clone(), meta: Default::default() }), Ok(Prediction::Value(_))));
        }
    }

    #[test]
    fn regressor_preconditions() {
        let ds = windowed(&[8, 16]);
        assert_eq!(fit_param_regressor(&rf(3, None, 0), &ds, Target::Slide).unwrap_err(), ModelError::DegenerateTarget);
        let mut mixed = ds.clone();
        mixed.rows[3].label = OperatorKind::Max;
        assert!(matches!(fit_param_regressor(&rf(3, None, 0), &mixed, Target::WindowSize), Err(ModelError::MixedKinds(..))));
        let mut missing = ds;
        missing.rows[5].params = None;
        assert_eq!(
            fit_param_regressor(&rf(3, None, 0), &missing, Target::WindowSize).unwrap_err(),
            ModelError::MissingTarget(5)
        );
    }
}
