//! Forests and boosted ensembles built from histogram trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::binning::{BinnedMatrix, Binner};
use super::spec::{BoostParams, ForestParams, DEPTH_CAP};
use super::tree::{derive_seed, GrowParams, Task, Tree};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum Ensemble<T> {
    /// Classification trees hold class indices at their leaves; regression trees hold means.
    Forest { trees: Vec<Tree<T>> },
    /// `rounds[r][o]` adds to output `o`; leaf values already include the learning rate.
    Boosted { base: Vec<f64>, rounds: Vec<Vec<Tree<T>>> },
}

/// Labels as the learners see them.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { y: Vec<usize>, n_classes: usize },
    Values(Vec<f64>),
}

pub struct Prepared<T> {
    pub binner: Binner<T>,
    pub x: BinnedMatrix,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(rows: &[&[T]], cols: usize, max_bins: usize) -> Self {
        let binner = Binner::fit(rows, cols, max_bins);
        let x = binner.transform(rows);
        Prepared { binner, x }
    }
}

fn forest_stats(labels: &Labels) -> (Vec<f64>, Task) {
    match labels {
        Labels::Classes { y, n_classes } => {
            let mut s = vec![0.0; y.len() * n_classes];
            for (i, &c) in y.iter().enumerate() {
                s[i * n_classes + c] = 1.0;
            }
            (s, Task::Gini { classes: *n_classes })
        }
        Labels::Values(v) => (v.iter().flat_map(|y| [1.0, *y]).collect(), Task::Variance),
    }
}

/// Tree `t` of a forest depends only on `(seed, t)`, so a smaller forest is a
/// prefix of a larger one grown with the same seed.
pub fn grow_forest<T: Scalar>(prep: &Prepared<T>, labels: &Labels, p: &ForestParams, seed: u64) -> Vec<Tree<T>> {
    let (stats, task) = forest_stats(labels);
    let n = prep.x.rows;
    let grow = GrowParams {
        max_depth: p.max_depth.unwrap_or(DEPTH_CAP).min(DEPTH_CAP),
        mtry: p.max_features.resolve(prep.x.cols),
        min_split: 2,
        task,
    };
    (0..p.n_estimators as u64)
        .into_par_iter()
        .map(|t| {
            let ts = derive_seed(seed, t);
            let rows: Vec<u32> = if p.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ts, 0));
                (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            Tree::grow(&prep.x, &prep.binner, &stats, rows, grow, ts)
        })
        .collect()
}

pub fn softmax(scores: &[f64], out: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Gradient boosting, one round at a time. Multiclass uses softmax
/// cross-entropy with one tree per class per round; regression uses squared
/// error.
pub struct Booster<'a, T> {
    prep: &'a Prepared<T>,
    labels: &'a Labels,
    p: BoostParams,
    outputs: usize,
    scores: Vec<f64>,
    pub base: Vec<f64>,
    pub rounds: Vec<Vec<Tree<T>>>,
}

impl<'a, T: Scalar> Booster<'a, T> {
    pub fn new(prep: &'a Prepared<T>, labels: &'a Labels, p: BoostParams) -> Self {
        let n = prep.x.rows;
        let (outputs, base) = match labels {
            Labels::Classes { n_classes, .. } => (*n_classes, vec![0.0; *n_classes]),
            Labels::Values(v) => (1, vec![v.iter().sum::<f64>() / v.len().max(1) as f64]),
        };
        let scores = (0..n).flat_map(|_| base.iter().copied()).collect();
        Booster { prep, labels, p, outputs, scores, base, rounds: Vec::new() }
    }

    pub fn step(&mut self) {
        let n = self.prep.x.rows;
        let k = self.outputs;
        let grow = GrowParams {
            max_depth: self.p.max_depth.min(DEPTH_CAP),
            mtry: self.prep.x.cols,
            min_split: 2,
            task: Task::Newton { lambda: self.p.lambda, gamma: self.p.gamma },
        };
        let mut grads = vec![vec![0.0; 2 * n]; k];
        match self.labels {
            Labels::Classes { y, .. } => {
                let mut prob = vec![0.0; k];
                for i in 0..n {
                    softmax(&self.scores[i * k..(i + 1) * k], &mut prob);
                    for c in 0..k {
                        let target = if y[i] == c { 1.0 } else { 0.0 };
                        grads[c][2 * i] = prob[c] - target;
                        grads[c][2 * i + 1] = (prob[c] * (1.0 - prob[c])).max(1e-16);
                    }
                }
            }
            Labels::Values(v) => {
                for i in 0..n {
                    grads[0][2 * i] = self.scores[i] - v[i];
                    grads[0][2 * i + 1] = 1.0;
                }
            }
        }
        let round_seed = self.rounds.len() as u64;
        let eta = self.p.eta;
        let trees: Vec<Tree<T>> = grads
            .par_iter()
            .map(|stats| {
                let mut t = Tree::grow(&self.prep.x, &self.prep.binner, stats, (0..n as u32).collect(), grow, round_seed);
                t.nodes.iter_mut().for_each(|nd| nd.value *= eta);
                t
            })
            .collect();
        for i in 0..n {
            for (c, t) in trees.iter().enumerate() {
                self.scores[i * k + c] += t.predict_binned(&self.prep.x, i, DEPTH_CAP);
            }
        }
        self.rounds.push(trees);
    }

    pub fn into_ensemble(self) -> Ensemble<T> {
        Ensemble::Boosted { base: self.base, rounds: self.rounds }
    }
}

impl<T: Scalar> Ensemble<T> {
    /// Raw outputs: class votes (forest classification), mean (forest
    /// regression), or summed scores (boosting).
    pub fn raw(&self, x: &[T], classify: Option<usize>) -> Vec<f64> {
        match self {
            Ensemble::Forest { trees } => match classify {
                Some(c) => {
                    let mut votes = vec![0.0; c];
                    for t in trees {
                        votes[t.predict(x) as usize] += 1.0;
                    }
                    votes
                }
                None => vec![trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64],
            },
            Ensemble::Boosted { base, rounds } => {
                let mut s = base.clone();
                for r in rounds {
                    for (o, t) in r.iter().enumerate() {
                        s[o] += t.predict(x);
                    }
                }
                s
            }
        }
    }
}
