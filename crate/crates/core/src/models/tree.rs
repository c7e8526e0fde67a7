//! Histogram CART trees over binned features.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::binning::{BinnedMatrix, Binner};
use crate::Scalar;

/// What a tree optimizes. Every task scores a set of rows by a function of
/// summed per-row statistics, and a split's gain is `score(L) + score(R) - score(P)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Task {
    /// Stats: one-hot class weights. Score `sum c_j^2 / n` (Gini decrease). Value: majority class.
    Gini { classes: usize },
    /// Stats: `[1, y]`. Score `(sum y)^2 / n` (variance decrease). Value: mean.
    Variance,
    /// Stats: `[g, h]`. Score `G^2 / (H + lambda)`; splits need `gain / 2 > gamma`. Value: `-G / (H + lambda)`.
    Newton { lambda: f64, gamma: f64 },
}

impl Task {
    pub fn width(&self) -> usize {
        match self {
            Task::Gini { classes } => *classes,
            Task::Variance | Task::Newton { .. } => 2,
        }
    }

    #[inline]
    fn score(&self, s: &[f64]) -> f64 {
        match self {
            Task::Gini { .. } => {
                let n: f64 = s.iter().sum();
                if n > 0.0 {
                    s.iter().map(|c| c * c).sum::<f64>() / n
                } else {
                    0.0
                }
            }
            Task::Variance => {
                if s[0] > 0.0 {
                    s[1] * s[1] / s[0]
                } else {
                    0.0
                }
            }
            Task::Newton { lambda, .. } => s[0] * s[0] / (s[1] + lambda),
        }
    }

    fn accepts(&self, gain: f64, parent_score: f64) -> bool {
        match self {
            Task::Newton { gamma, .. } => gain / 2.0 > *gamma && gain > 1e-12,
            // Impure nodes always split, even without immediate gain, as in CART.
            _ => gain > -1e-9 * (1.0 + parent_score.abs()),
        }
    }

    fn value(&self, s: &[f64]) -> f64 {
        match self {
            Task::Gini { .. } => {
                let mut best = 0;
                for (j, c) in s.iter().enumerate() {
                    if *c > s[best] {
                        best = j;
                    }
                }
                best as f64
            }
            Task::Variance => s[1] / s[0],
            Task::Newton { lambda, .. } => -s[0] / (s[1] + lambda),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowParams {
    pub max_depth: usize,
    /// Features examined per split.
    pub mtry: usize,
    pub min_split: usize,
    pub task: Task,
}

/// `right == 0` marks a leaf. `value` is kept on every node so a tree can be
/// evaluated as if grown to a smaller depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Node<T> {
    pub feature: u32,
    pub bin: u16,
    pub threshold: T,
    pub left: u32,
    pub right: u32,
    pub depth: u16,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed derived from a parent seed and an index; used for trees and nodes.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(0x5851f42d4c957f2d)))
}

struct Scratch {
    hist: Vec<f64>,
    mark: Vec<u32>,
    stamp: u32,
    touched: Vec<u16>,
    left: Vec<f64>,
    right: Vec<f64>,
    parent: Vec<f64>,
}

struct Best {
    gain: f64,
    feature: usize,
    bin: u16,
}

struct Grower<'a, T> {
    x: &'a BinnedMatrix,
    binner: &'a Binner<T>,
    stats: &'a [f64],
    p: GrowParams,
    seed: u64,
    m: usize,
    nodes: Vec<Node<T>>,
    s: Scratch,
}

impl<'a, T: Scalar> Grower<'a, T> {
    fn node_stats(&mut self, rows: &[u32]) {
        let m = self.m;
        self.s.parent.iter_mut().for_each(|v| *v = 0.0);
        for &i in rows {
            let st = &self.stats[i as usize * m..(i as usize + 1) * m];
            for j in 0..m {
                self.s.parent[j] += st[j];
            }
        }
    }

    fn pure(&self, rows: &[u32]) -> bool {
        match self.p.task {
            Task::Gini { .. } => {
                let n: f64 = self.s.parent.iter().sum();
                self.s.parent.contains(&n)
            }
            Task::Variance => {
                let y0 = self.stats[rows[0] as usize * 2 + 1];
                rows.iter().all(|&i| self.stats[i as usize * 2 + 1] == y0)
            }
            Task::Newton { .. } => false,
        }
    }

    fn best_split(&mut self, rows: &[u32], key: u64) -> Option<Best> {
        let m = self.m;
        let d = self.x.cols;
        let parent_score = self.p.task.score(&self.s.parent);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, key));
        // Features are visited in random order until `mtry` non-constant ones
        // have been examined.
        let order = sample(&mut rng, d, d);
        let mut examined = 0;
        let mut best: Option<Best> = None;
        for f in order.iter() {
            if examined == self.p.mtry {
                break;
            }
            let col = self.x.column(f);
            self.s.stamp = self.s.stamp.wrapping_add(1);
            if self.s.stamp == 0 {
                self.s.mark.iter_mut().for_each(|v| *v = 0);
                self.s.stamp = 1;
            }
            self.s.touched.clear();
            for &i in rows {
                let b = col[i as usize] as usize;
                if self.s.mark[b] != self.s.stamp {
                    self.s.mark[b] = self.s.stamp;
                    self.s.touched.push(b as u16);
                    self.s.hist[b * m..(b + 1) * m].iter_mut().for_each(|v| *v = 0.0);
                }
                let st = &self.stats[i as usize * m..(i as usize + 1) * m];
                let h = &mut self.s.hist[b * m..(b + 1) * m];
                for j in 0..m {
                    h[j] += st[j];
                }
            }
            if self.s.touched.len() < 2 {
                continue;
            }
            examined += 1;
            self.s.touched.sort_unstable();
            self.s.left.iter_mut().for_each(|v| *v = 0.0);
            for &b in &self.s.touched[..self.s.touched.len() - 1] {
                let h = &self.s.hist[b as usize * m..(b as usize + 1) * m];
                for j in 0..m {
                    self.s.left[j] += h[j];
                    self.s.right[j] = self.s.parent[j] - self.s.left[j];
                }
                let gain = self.p.task.score(&self.s.left) + self.p.task.score(&self.s.right) - parent_score;
                if best.as_ref().is_none_or(|bst| gain > bst.gain || (gain == bst.gain && f < bst.feature)) {
                    best = Some(Best { gain, feature: f, bin: b });
                }
            }
        }
        best.filter(|b| self.p.task.accepts(b.gain, parent_score))
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize, key: u64) -> u32 {
        self.node_stats(rows);
        let id = self.nodes.len() as u32;
        let value = self.p.task.value(&self.s.parent);
        self.nodes.push(Node { feature: 0, bin: 0, threshold: T::zero(), left: 0, right: 0, depth: depth as u16, value });
        if depth >= self.p.max_depth || rows.len() < self.p.min_split || self.pure(rows) {
            return id;
        }
        let Some(best) = self.best_split(rows, key) else { return id };
        let col = self.x.column(best.feature);
        // Stable partition keeps row order independent of later depth limits.
        let (mut l, mut r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| col[i as usize] <= best.bin);
        let nl = l.len();
        rows[..nl].copy_from_slice(&l);
        rows[nl..].copy_from_slice(&r);
        l.clear();
        r.clear();
        let (lrows, rrows) = rows.split_at_mut(nl);
        let left = self.grow(lrows, depth + 1, splitmix(key.wrapping_mul(2)));
        let right = self.grow(rrows, depth + 1, splitmix(key.wrapping_mul(2).wrapping_add(1)));
        let n = &mut self.nodes[id as usize];
        n.feature = best.feature as u32;
        n.bin = best.bin;
        n.threshold = self.binner.cut(best.feature, best.bin);
        n.left = left;
        n.right = right;
        id
    }
}

impl<T: Scalar> Tree<T> {
    /// Grows a tree over `rows` (indices into `x`, repeats allowed).
    /// `stats` holds `task.width()` values per row of `x`. Feature sampling
    /// at a node depends only on `seed` and the node's path from the root,
    /// so a depth-limited tree is exactly a truncation of a deeper one.
    pub fn grow(x: &BinnedMatrix, binner: &Binner<T>, stats: &[f64], mut rows: Vec<u32>, p: GrowParams, seed: u64) -> Self {
        let m = p.task.width();
        let nb = binner.max_bins();
        let mut g = Grower {
            x,
            binner,
            stats,
            p,
            seed,
            m,
            nodes: Vec::new(),
            s: Scratch {
                hist: vec![0.0; nb * m],
                mark: vec![0; nb],
                stamp: 0,
                touched: Vec::with_capacity(nb),
                left: vec![0.0; m],
                right: vec![0.0; m],
                parent: vec![0.0; m],
            },
        };
        g.grow(&mut rows, 0, 1);
        Tree { nodes: g.nodes }
    }

    pub fn predict(&self, x: &[T]) -> f64 {
        let mut n = &self.nodes[0];
        while n.right != 0 {
            n = &self.nodes[if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize];
        }
        n.value
    }

    /// Prediction on a binned row, stopping at `max_depth`.
    pub fn predict_binned(&self, x: &BinnedMatrix, row: usize, max_depth: usize) -> f64 {
        let mut n = &self.nodes[0];
        while n.right != 0 && (n.depth as usize) < max_depth {
            n = &self.nodes[if x.get(row, n.feature as usize) <= n.bin { n.left } else { n.right } as usize];
        }
        n.value
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth as usize).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.right == 0).count()
    }

    pub fn to_record(&self) -> NodeRecord {
        fn rec<T: Scalar>(t: &Tree<T>, i: usize) -> NodeRecord {
            let n = &t.nodes[i];
            if n.right == 0 {
                NodeRecord::Leaf { leaf_value: n.value }
            } else {
                NodeRecord::Split {
                    feature_idx: n.feature as usize,
                    threshold: n.threshold.as_f64(),
                    left: Box::new(rec(t, n.left as usize)),
                    right: Box::new(rec(t, n.right as usize)),
                }
            }
        }
        rec(self, 0)
    }

    /// Rebuilds a tree for raw-feature prediction. Bin codes are not stored
    /// in the record, so binned prediction is unavailable on the result.
    pub fn from_record(r: &NodeRecord) -> Self {
        fn push<T: Scalar>(r: &NodeRecord, depth: u16, nodes: &mut Vec<Node<T>>) -> u32 {
            let id = nodes.len() as u32;
            let leaf = Node { feature: 0, bin: 0, threshold: T::zero(), left: 0, right: 0, depth, value: f64::NAN };
            nodes.push(leaf);
            match r {
                NodeRecord::Leaf { leaf_value } => nodes[id as usize].value = *leaf_value,
                NodeRecord::Split { feature_idx, threshold, left, right } => {
                    let l = push(left, depth + 1, nodes);
                    let rt = push(right, depth + 1, nodes);
                    let n = &mut nodes[id as usize];
                    n.feature = *feature_idx as u32;
                    n.threshold = T::of_f64(*threshold);
                    n.left = l;
                    n.right = rt;
                }
            }
            id
        }
        let mut nodes = Vec::new();
        push(r, 0, &mut nodes);
        Tree { nodes }
    }
}

/// Serialized tree node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRecord {
    Split { feature_idx: usize, threshold: f64, left: Box<NodeRecord>, right: Box<NodeRecord> },
    Leaf { leaf_value: f64 },
}
