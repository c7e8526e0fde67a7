use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::engine::{stage_inputs, EventRecord, ExecMode, OperatorKind, OperatorSpec, RunOptions, StageId};
use crate::features::{build_dataset, CdfFeaturizer};
use crate::generators::{catalog_query_with, gen_flights, gen_nexmark, CatalogParams, Counts, GeneratorConfig, QueryId};
use crate::models::{
    derive_seed, fit_param_regressor, Family, Grid, GridResult, Hyperparams, ModelError, ModelSpec,
    Target, DEFAULT_MAX_BINS,
};
use crate::observer::{profile_operator, CostModel, Mode, ProfileOptions, TimingTrace, WindowParams};
use crate::{LabeledDataset, TrainedModel};

/// What to profile and how much of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub queries: Vec<QueryId>,
    /// Traces per operator kind, split evenly over the catalog stages of that kind.
    pub counts: BTreeMap<OperatorKind, usize>,
    /// Events per trace.
    pub events: usize,
    /// Window parameters cycled through for windowed stages.
    pub grid: Vec<WindowParams>,
    pub payload_spread: f64,
    pub catalog: CatalogParams,
    /// Data the stages are profiled on.
    pub data: GeneratorConfig,
}

impl ProfileConfig {
    /// Dataset sizes of the NEXMark timing dataset, plus Count.
    pub fn nexmark() -> Self {
        use OperatorKind::*;
        let counts = [(Map, 1262), (Filter, 1297), (Join, 1009), (Max, 1059), (Average, 1018), (AveragePartition, 1071), (Count, 750)];
        ProfileConfig { queries: QueryId::NEXMARK.to_vec(), counts: counts.into_iter().collect(), ..Self::base() }
    }

    pub fn securestream() -> Self {
        use OperatorKind::*;
        ProfileConfig {
            queries: vec![QueryId::SecureStream],
            counts: [(Map, 350), (Filter, 350), (Reduce, 350)].into_iter().collect(),
            ..Self::base()
        }
    }

    fn base() -> Self {
        let grid = [8, 16, 32, 64]
            .into_iter()
            .flat_map(|w| [2, 4, 8].into_iter().map(move |s| WindowParams { w, s }))
            .collect();
        ProfileConfig {
            queries: Vec::new(),
            counts: BTreeMap::new(),
            events: 10_000,
            grid,
            payload_spread: 0.1,
            catalog: CatalogParams::default(),
            data: GeneratorConfig {
                counts: Counts { persons: 40, auctions: 4000, bids: 4000, flights: 4000 },
                locality: Some(8),
                ..GeneratorConfig::default()
            },
        }
    }

    /// Every count multiplied by `f` (at least 2 per kind).
    pub fn scaled(mut self, f: f64) -> Self {
        self.counts.values_mut().for_each(|n| *n = ((*n as f64 * f).round() as usize).max(2));
        self
    }
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self::nexmark()
    }
}

/// One catalog stage and how many traces it contributes.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSlot {
    pub query: QueryId,
    pub stage: StageId,
    pub op: OperatorSpec,
    pub reps: usize,
}

/// Splits each kind's trace count evenly over the catalog stages of that
/// kind; earlier stages take the remainder.
pub fn allocate(cfg: &ProfileConfig) -> Result<Vec<StageSlot>, AttackError> {
    let mut by_kind: BTreeMap<OperatorKind, Vec<StageSlot>> = BTreeMap::new();
    for &q in &cfg.queries {
        let spec = catalog_query_with(q, &cfg.catalog);
        for st in &spec.stages {
            by_kind.entry(st.op.kind).or_default().push(StageSlot { query: q, stage: st.id, op: st.op.clone(), reps: 0 });
        }
    }
    let mut out = Vec::new();
    for (&kind, &n) in &cfg.counts {
        let mut slots = by_kind
            .remove(&kind)
            .ok_or_else(|| AttackError::InvalidConfig(format!("no profiled query has a {kind} stage")))?;
        let m = slots.len();
        for (i, s) in slots.iter_mut().enumerate() {
            s.reps = n / m + usize::from(i < n % m);
        }
        out.extend(slots);
    }
    out.sort_by_key(|s| (s.query, s.stage));
    Ok(out)
}

fn extend_to(stream: &[EventRecord], n: usize) -> Vec<EventRecord> {
    if stream.is_empty() || stream.len() >= n {
        return stream.to_vec();
    }
    stream.iter().cycle().take(n).cloned().collect()
}

/// Records each stage of each profiled query receives, per input port.
pub(crate) fn catalog_stage_data(
    cfg: &ProfileConfig,
) -> Result<BTreeMap<(QueryId, StageId), Vec<Vec<EventRecord>>>, AttackError> {
    let mut inputs = BTreeMap::new();
    if cfg.queries.iter().any(|q| *q != QueryId::SecureStream) {
        inputs.extend(gen_nexmark(&cfg.data)?.into_inputs());
    }
    if cfg.queries.contains(&QueryId::SecureStream) {
        inputs.insert("flights".to_owned(), gen_flights(&cfg.data)?);
    }
    let mut out = BTreeMap::new();
    for &q in &cfg.queries {
        let spec = catalog_query_with(q, &cfg.catalog);
        for (stage, ports) in stage_inputs(&spec, &inputs)? {
            let ports = ports.iter().map(|p| extend_to(p, cfg.events)).collect();
            out.insert((q, stage), ports);
        }
    }
    Ok(out)
}

/// Profiles every allocated catalog stage. Traces carry their query and
/// stage in the metadata and come out in slot order.
pub fn profile_catalog(
    cfg: &ProfileConfig,
    model: &CostModel,
    mode: Mode,
    seed: u64,
) -> Result<Vec<TimingTrace>, AttackError> {
    let slots = allocate(cfg)?;
    let data = catalog_stage_data(cfg)?;
    let run = RunOptions { mode: ExecMode::Threaded, cost_model: model.clone(), ..RunOptions::default() };
    let per_slot = |(i, slot): (usize, &StageSlot)| -> Result<Vec<TimingTrace>, AttackError> {
        let opts = ProfileOptions {
            events: cfg.events,
            grid: cfg.grid.clone(),
            model: model.clone(),
            seed: derive_seed(seed, i as u64),
            payload_spread: cfg.payload_spread,
            run: run.clone(),
        };
        let stage_data = &data[&(slot.query, slot.stage)];
        let mut traces = profile_operator(&slot.op, stage_data, mode, slot.reps, &opts)?;
        for t in &mut traces {
            t.meta.query_id = Some(slot.query.name().to_owned());
            t.meta.stage_id = Some(slot.stage);
        }
        Ok(traces)
    };
    let chunks: Vec<Vec<TimingTrace>> = match mode {
        Mode::Simulated => slots.par_iter().enumerate().map(per_slot).collect::<Result<_, _>>()?,
        // Measured runs time real threads; keep them one at a time.
        Mode::Measured => slots.iter().enumerate().map(per_slot).collect::<Result<_, _>>()?,
    };
    Ok(chunks.into_iter().flatten().collect())
}

/// Learner settings for the classifier and the parameter regressors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub grid: Grid,
    pub folds: usize,
    pub max_bins: usize,
    pub regressor: Hyperparams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: Grid::standard(Family::RandomForest),
            folds: 5,
            max_bins: DEFAULT_MAX_BINS,
            regressor: Hyperparams::default_for(Family::RandomForest),
        }
    }
}

/// Window-size and slide regressors for one windowed kind. A target that
/// never varied in training has no model.
#[derive(Clone, Debug, PartialEq)]
pub struct KindRegressors {
    pub window: Option<TrainedModel>,
    pub slide: Option<TrainedModel>,
}

/// Everything the online phase needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub featurizer: CdfFeaturizer,
    pub classifier: TrainedModel,
    pub regressors: BTreeMap<OperatorKind, KindRegressors>,
    pub cv: Option<GridResult>,
}

fn regressor_or_none(r: Result<TrainedModel, ModelError>) -> Result<Option<TrainedModel>, AttackError> {
    match r {
        Ok(m) => Ok(Some(m)),
        Err(ModelError::DegenerateTarget) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Grid-searches and fits the classifier, then fits per-kind regressors.
pub fn train_artifacts(
    ds: &LabeledDataset,
    featurizer: &CdfFeaturizer,
    mc: &ModelConfig,
    seed: u64,
) -> Result<Artifacts, AttackError> {
    let (classifier, cv) = super::train_classifier(ds, mc, seed)?;
    let mut regressors = BTreeMap::new();
    let spec = ModelSpec { params: mc.regressor, seed: derive_seed(seed, 1), max_bins: mc.max_bins };
    for &kind in ds.classes().iter().filter(|k| k.is_windowed()) {
        let rows = ds.filter(|r| r.label == kind && r.params.is_some());
        if rows.is_empty() {
            continue;
        }
        let window = regressor_or_none(fit_param_regressor(&spec, &rows, Target::WindowSize))?;
        let slide = regressor_or_none(fit_param_regressor(&spec, &rows, Target::Slide))?;
        regressors.insert(kind, KindRegressors { window, slide });
    }
    Ok(Artifacts { featurizer: featurizer.clone(), classifier, regressors, cv })
}

/// Profiles, featurizes and trains. Returns the dataset alongside the artifacts.
pub fn offline_phase(
    cfg: &ProfileConfig,
    model: &CostModel,
    mode: Mode,
    featurizer: &CdfFeaturizer,
    mc: &ModelConfig,
    seed: u64,
) -> Result<(LabeledDataset, Artifacts), AttackError> {
    if cfg.counts.len() < 2 {
        return Err(ModelError::DegenerateData.into());
    }
    let traces = profile_catalog(cfg, model, mode, seed)?;
    let ds = build_dataset(&traces, featurizer, featurizer.trim, featurizer.normalize)?;
    let art = train_artifacts(&ds, featurizer, mc, seed)?;
    Ok((ds, art))
}

fn target_name(t: Target) -> &'static str {
    match t {
        Target::WindowSize => "window",
        Target::Slide => "slide",
    }
}

impl Artifacts {
    /// Writes `featurizer.json`, `classifier.json`, one file per regressor
    /// and, if present, `cv.json`.
    pub fn save(&self, dir: &Path) -> Result<(), AttackError> {
        let io = |e: std::io::Error| AttackError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("featurizer.json"), serde_json::to_string_pretty(&self.featurizer).expect("plain data"))
            .map_err(io)?;
        self.classifier.save(&dir.join("classifier.json"))?;
        for (kind, r) in &self.regressors {
            for (t, m) in [(Target::WindowSize, &r.window), (Target::Slide, &r.slide)] {
                if let Some(m) = m {
                    m.save(&dir.join(format!("regressor_{}_{}.json", kind.name(), target_name(t))))?;
                }
            }
        }
        if let Some(cv) = &self.cv {
            std::fs::write(dir.join("cv.json"), serde_json::to_string_pretty(cv).expect("plain data")).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, AttackError> {
        let io = |e: std::io::Error| AttackError::Io(format!("{}: {e}", dir.display()));
        let featurizer: CdfFeaturizer =
            serde_json::from_str(&std::fs::read_to_string(dir.join("featurizer.json")).map_err(io)?)
                .map_err(|e| AttackError::Io(e.to_string()))?;
        let classifier = TrainedModel::load(&dir.join("classifier.json"))?;
        let mut regressors = BTreeMap::new();
        for kind in OperatorKind::ALL.into_iter().filter(|k| k.is_windowed()) {
            let load = |t| {
                let p = dir.join(format!("regressor_{}_{}.json", kind.name(), target_name(t)));
                p.exists().then(|| TrainedModel::load(&p)).transpose()
            };
            let (window, slide) = (load(Target::WindowSize)?, load(Target::Slide)?);
            if window.is_some() || slide.is_some() {
                regressors.insert(kind, KindRegressors { window, slide });
            }
        }
        let cv_path = dir.join("cv.json");
        let cv = if cv_path.exists() {
            Some(
                serde_json::from_str(&std::fs::read_to_string(&cv_path).map_err(io)?)
                    .map_err(|e| AttackError::Io(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Artifacts { featurizer, classifier, regressors, cv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_follows_counts() {
        let cfg = ProfileConfig::nexmark();
        let slots = allocate(&cfg).unwrap();
        for (kind, n) in &cfg.counts {
            let total: usize = slots.iter().filter(|s| s.op.kind == *kind).map(|s| s.reps).sum();
            assert_eq!(total, *n, "{kind}");
        }
        assert_eq!(slots.iter().map(|s| s.reps).sum::<usize>(), 6716 + 750);
        let filters: Vec<usize> = slots.iter().filter(|s| s.op.kind == OperatorKind::Filter).map(|s| s.reps).collect();
        assert_eq!(filters, vec![325, 324, 324, 324]);
    }

    #[test]
    fn kind_without_stage_is_rejected() {
        let mut cfg = ProfileConfig::securestream();
        cfg.counts.insert(OperatorKind::Join, 10);
        assert!(matches!(allocate(&cfg), Err(AttackError::InvalidConfig(_))));
    }

    #[test]
    fn profiled_traces_carry_provenance() {
        let mut cfg = ProfileConfig::nexmark().scaled(0.005);
        cfg.events = 300;
        let traces = profile_catalog(&cfg, &CostModel::default(), Mode::Simulated, 4).unwrap();
        assert_eq!(traces.len(), allocate(&cfg).unwrap().iter().map(|s| s.reps).sum::<usize>());
        assert!(traces.iter().all(|t| t.meta.query_id.is_some() && t.meta.stage_id.is_some() && t.len() == 300));
        let again = profile_catalog(&cfg, &CostModel::default(), Mode::Simulated, 4).unwrap();
        assert_eq!(traces, again);
    }
}
