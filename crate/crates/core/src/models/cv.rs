//! Stratified k-fold cross-validated grid search.
//!
//! Forest configurations that differ only in tree count or depth limit are
//! scored from one shared forest per fold: tree `t` depends only on the seed
//! and `t`, and a depth-limited tree is a truncation of the unlimited one.
//! Boosting configurations that differ only in round count share one run.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{grow_forest, softmax, Booster, Labels, Prepared};
use super::spec::{ForestParams, Grid, Hyperparams, ModelSpec, DEPTH_CAP};
use super::tree::derive_seed;
use super::{check_rows, present_classes, validate_spec, ModelError};
use crate::features::LabeledDataset;
use crate::Scalar;

/// Fold id per row. Each class is shuffled and dealt round-robin, so class
/// counts per fold differ by at most one.
pub fn stratified_folds(y: &[usize], n_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; y.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            out[i] = (offset + j) % folds;
        }
        offset += idx.len();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: Hyperparams,
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelSpec,
    pub best_mean: f64,
    pub folds: usize,
    pub table: Vec<CvRow>,
}

struct Fold<T> {
    prep: Prepared<T>,
    labels: Labels,
    test_x: super::BinnedMatrix,
    test_y: Vec<usize>,
}

/// Accuracy of each configuration of `group` on one fold, in group order.
fn score_forest_group<T: Scalar>(f: &Fold<T>, group: &[(usize, ForestParams)], seed: u64, n_classes: usize) -> Vec<f64> {
    let n_max = group.iter().map(|(_, p)| p.n_estimators).max().unwrap_or(0);
    let depth = |p: &ForestParams| p.max_depth.unwrap_or(DEPTH_CAP).min(DEPTH_CAP);
    let mut depths: Vec<usize> = group.iter().map(|(_, p)| depth(p)).collect();
    depths.sort_unstable();
    depths.dedup();
    let d_max = *depths.last().unwrap_or(&DEPTH_CAP);
    let p0 = ForestParams { n_estimators: n_max, max_depth: Some(d_max), ..group[0].1 };
    let trees = grow_forest(&f.prep, &f.labels, &p0, seed);
    // correct[depth][n] = rows right with the first n trees.
    let mut correct: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let wanted: Vec<(usize, usize)> = group.iter().map(|(_, p)| (depth(p), p.n_estimators)).collect();
    let mut votes = vec![0usize; n_classes];
    for row in 0..f.test_x.rows {
        for &d in &depths {
            votes.iter_mut().for_each(|v| *v = 0);
            for (t, tree) in trees.iter().enumerate() {
                votes[tree.predict_binned(&f.test_x, row, d) as usize] += 1;
                let n = t + 1;
                if wanted.contains(&(d, n)) {
                    let mut best = 0;
                    for (c, &v) in votes.iter().enumerate() {
                        if v > votes[best] {
                            best = c;
                        }
                    }
                    if best == f.test_y[row] {
                        *correct.entry((d, n)).or_default() += 1;
                    }
                }
            }
        }
    }
    let total = f.test_x.rows.max(1) as f64;
    wanted.iter().map(|key| *correct.get(key).unwrap_or(&0) as f64 / total).collect()
}

fn score_boost_group<T: Scalar>(f: &Fold<T>, group: &[(usize, super::BoostParams)], n_classes: usize) -> Vec<f64> {
    let n_max = group.iter().map(|(_, p)| p.n_estimators).max().unwrap_or(0);
    let p0 = super::BoostParams { n_estimators: n_max, ..group[0].1 };
    let mut b = Booster::new(&f.prep, &f.labels, p0);
    let rows = f.test_x.rows;
    let mut scores: Vec<f64> = (0..rows).flat_map(|_| b.base.clone()).collect();
    let mut acc_at = BTreeMap::new();
    let mut prob = vec![0.0; n_classes];
    for r in 1..=n_max {
        b.step();
        let trees = b.rounds.last().expect("just stepped");
        for i in 0..rows {
            for (c, t) in trees.iter().enumerate() {
                scores[i * n_classes + c] += t.predict_binned(&f.test_x, i, DEPTH_CAP);
            }
        }
        if group.iter().any(|(_, p)| p.n_estimators == r) {
            let mut ok = 0;
            for i in 0..rows {
                softmax(&scores[i * n_classes..(i + 1) * n_classes], &mut prob);
                let mut best = 0;
                for c in 0..n_classes {
                    if prob[c] > prob[best] {
                        best = c;
                    }
                }
                ok += (best == f.test_y[i]) as usize;
            }
            acc_at.insert(r, ok as f64 / rows.max(1) as f64);
        }
    }
    group.iter().map(|(_, p)| acc_at[&p.n_estimators]).collect()
}

/// Scores every grid configuration with stratified `folds`-fold CV and
/// returns the one with the highest mean accuracy (first in grid order on
/// ties). Configurations that fail validation are recorded with an error.
pub fn grid_search<T: Scalar>(
    grid: &Grid,
    ds: &LabeledDataset<T>,
    folds: usize,
    seed: u64,
    max_bins: usize,
) -> Result<GridResult, ModelError> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(ModelError::InvalidSpec("empty grid".into()));
    }
    if folds < 2 {
        return Err(ModelError::InvalidSpec(format!("need at least 2 folds, got {folds}")));
    }
    let classes = present_classes(ds);
    if classes.len() < 2 {
        return Err(ModelError::DegenerateData);
    }
    let k = ds.meta.k;
    let rows: Vec<&[T]> = ds.rows.iter().map(|r| r.features.as_slice()).collect();
    check_rows(&rows, k)?;
    let nc = classes.len();
    let y: Vec<usize> = ds.rows.iter().map(|r| classes.iter().position(|c| *c == r.label).expect("present")).collect();
    let fold_of = stratified_folds(&y, nc, folds, seed);

    let mut errors: Vec<Option<String>> = vec![None; configs.len()];
    // Group key: the parameters that cannot be shared.
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in configs.iter().enumerate() {
        if let Err(e) = validate_spec(&ModelSpec { params: *p, seed, max_bins }) {
            errors[i] = Some(e.to_string());
            continue;
        }
        let key = match p {
            Hyperparams::RandomForest(f) => format!("{:?}/{}", f.max_features, f.bootstrap),
            Hyperparams::GradientBoostedTrees(b) => format!("{}/{}/{}/{}", b.max_depth, b.gamma, b.eta, b.lambda),
        };
        groups.entry(key).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    let fold_data: Vec<Fold<T>> = (0..folds)
        .map(|f| {
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for (i, &fo) in fold_of.iter().enumerate() {
                if fo == f { te.push(i) } else { tr.push(i) }
            }
            let tr_rows: Vec<&[T]> = tr.iter().map(|&i| rows[i]).collect();
            let te_rows: Vec<&[T]> = te.iter().map(|&i| rows[i]).collect();
            let prep = Prepared::new(&tr_rows, k, max_bins);
            let test_x = prep.binner.transform(&te_rows);
            Fold {
                labels: Labels::Classes { y: tr.iter().map(|&i| y[i]).collect(), n_classes: nc },
                test_y: te.iter().map(|&i| y[i]).collect(),
                prep,
                test_x,
            }
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let results: Vec<((usize, usize), Vec<f64>)> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let fd = &fold_data[f];
            let fold_seed = derive_seed(seed, f as u64);
            let accs = match configs[groups[g][0]] {
                Hyperparams::RandomForest(_) => {
                    let group: Vec<(usize, ForestParams)> = groups[g]
                        .iter()
                        .map(|&i| match configs[i] {
                            Hyperparams::RandomForest(p) => (i, p),
                            _ => unreachable!("groups are single-family"),
                        })
                        .collect();
                    score_forest_group(fd, &group, fold_seed, nc)
                }
                Hyperparams::GradientBoostedTrees(_) => {
                    let group: Vec<(usize, super::BoostParams)> = groups[g]
                        .iter()
                        .map(|&i| match configs[i] {
                            Hyperparams::GradientBoostedTrees(p) => (i, p),
                            _ => unreachable!("groups are single-family"),
                        })
                        .collect();
                    score_boost_group(fd, &group, nc)
                }
            };
            ((g, f), accs)
        })
        .collect();

    let mut fold_acc = vec![vec![0.0; folds]; configs.len()];
    for ((g, f), accs) in results {
        for (j, &i) in groups[g].iter().enumerate() {
            fold_acc[i][f] = accs[j];
        }
    }
    let table: Vec<CvRow> = configs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if let Some(e) = &errors[i] {
                return CvRow { params: *p, fold_accuracy: Vec::new(), mean: f64::NAN, std: f64::NAN, error: Some(e.clone()) };
            }
            let a = &fold_acc[i];
            let mean = a.iter().sum::<f64>() / folds as f64;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / folds as f64).sqrt();
            CvRow { params: *p, fold_accuracy: a.clone(), mean, std, error: None }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, r) in table.iter().enumerate() {
        if r.error.is_none() && best.is_none_or(|b| r.mean > table[b].mean) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return Err(ModelError::InvalidSpec("no valid configuration in grid".into()));
    };
    Ok(GridResult { best: ModelSpec { params: table[b].params, seed, max_bins }, best_mean: table[b].mean, folds, table })
}

pub fn write_cv_csv<W: Write>(w: W, r: &GridResult) -> Result<(), ModelError> {
    let io = |e: csv::Error| ModelError::Io(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["config".to_owned(), "mean".into(), "std".into()];
    header.extend((0..r.folds).map(|f| format!("fold{f}")));
    header.push("error".into());
    out.write_record(&header).map_err(io)?;
    for row in &r.table {
        let mut rec = vec![row.params.describe(), format!("{:.6}", row.mean), format!("{:.6}", row.std)];
        for f in 0..r.folds {
            rec.push(row.fold_accuracy.get(f).map_or(String::new(), |a| format!("{a:.6}")));
        }
        rec.push(row.error.clone().unwrap_or_default());
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(|e| ModelError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::OperatorKind;
    use crate::features::{DatasetMeta, Row};
    use crate::models::{evaluate, fit, BoostParams, MaxFeatures};
    use rand::Rng;

    fn noisy(n: usize, seed: u64) -> LabeledDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds = [OperatorKind::Map, OperatorKind::Filter, OperatorKind::Count];
        LabeledDataset {
            rows: (0..n)
                .map(|i| {
                    let c = i % 3;
                    let features = (0..8).map(|j| (c * (j % 3)) as f64 + rng.gen_range(-2.0..2.0)).collect();
                    Row { features, label: kinds[c], params: None, query_id: None, stage: None }
                })
                .collect(),
            meta: DatasetMeta { featurizer: "t".into(), k: 8, trim: 0.0, normalize: false, classes: kinds.to_vec() },
        }
    }

    #[test]
    fn folds_are_stratified_and_covering() {
        let y: Vec<usize> = (0..103).map(|i| if i < 50 { 0 } else if i < 90 { 1 } else { 2 }).collect();
        let f = stratified_folds(&y, 3, 5, 9);
        for c in 0..3 {
            let per: Vec<usize> = (0..5).map(|k| (0..103).filter(|&i| y[i] == c && f[i] == k).count()).collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1, "{per:?}");
        }
        assert!(f.iter().all(|&k| k < 5));
    }

    /// The shared-forest shortcut must agree with fitting each configuration separately.
    #[test]
    fn shared_scoring_matches_direct_fits() {
        let ds = noisy(120, 1);
        let grid = Grid::RandomForest {
            n_estimators: vec![3, 7],
            max_depth: vec![None, Some(2)],
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![true, false],
        };
        let res = grid_search(&grid, &ds, 3, 5, 64).unwrap();
        let y = ds.targets();
        let fold_of = stratified_folds(&y, 3, 3, 5);
        for row in &res.table {
            for f in 0..3 {
                let tr: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != f).collect();
                let te: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] == f).collect();
                let m = fit(&ModelSpec { params: row.params, seed: derive_seed(5, f as u64), max_bins: 64 }, &ds.subset(&tr)).unwrap();
                let acc = evaluate(&m, &ds.subset(&te)).unwrap().accuracy;
                assert!((acc - row.fold_accuracy[f]).abs() < 1e-12, "{} fold {f}", row.params.describe());
            }
        }
        assert!(res.table.iter().all(|r| r.mean <= res.best_mean));
    }

    #[test]
    fn shared_boosting_matches_direct_fits() {
        let ds = noisy(60, 2);
        let grid = Grid::GradientBoostedTrees { n_estimators: vec![2, 4], max_depth: vec![2], gamma: vec![0.0] };
        let res = grid_search(&grid, &ds, 2, 1, 64).unwrap();
        let fold_of = stratified_folds(&ds.targets(), 3, 2, 1);
        for row in &res.table {
            for f in 0..2 {
                let tr: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != f).collect();
                let te: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] == f).collect();
                let m = fit(&ModelSpec { params: row.params, seed: 1, max_bins: 64 }, &ds.subset(&tr)).unwrap();
                let acc = evaluate(&m, &ds.subset(&te)).unwrap().accuracy;
                assert!((acc - row.fold_accuracy[f]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_config_wins_and_bad_configs_are_recorded() {
        let ds = noisy(60, 3);
        let one = Hyperparams::GradientBoostedTrees(BoostParams { n_estimators: 3, ..BoostParams::default() });
        let res = grid_search(&Grid::single(one), &ds, 2, 0, 64).unwrap();
        assert_eq!(res.best.params, one);
        let grid = Grid::RandomForest {
            n_estimators: vec![0, 4],
            max_depth: vec![None],
            max_features: vec![MaxFeatures::Log2],
            bootstrap: vec![true],
        };
        let res = grid_search(&grid, &ds, 2, 0, 64).unwrap();
        assert!(res.table[0].error.is_some());
        assert!(matches!(res.best.params, Hyperparams::RandomForest(p) if p.n_estimators == 4));
        let mut buf = Vec::new();
        write_cv_csv(&mut buf, &res).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        assert!(matches!(grid_search(&grid, &ds, 1, 0, 64), Err(ModelError::InvalidSpec(_))));
    }
}
