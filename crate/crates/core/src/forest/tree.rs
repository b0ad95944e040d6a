use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::RfHyperparams;
use crate::error::{MerfError, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// CART regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf(value: f64, n_samples: usize, n_features: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, n_samples }],
            n_features,
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Routes `row` down the tree (`value <= threshold` goes left).
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Fits a tree on every row of `x`.
pub fn fit_tree(x: &Matrix, y: &[f64], hp: &RfHyperparams, rng: &mut RngStream) -> Result<DecisionTree> {
    let samples: Vec<usize> = (0..x.rows()).collect();
    fit_tree_on(x, y, &samples, hp, rng)
}

pub fn predict_tree(tree: &DecisionTree, row: &[f64]) -> f64 {
    tree.predict(row)
}

pub(crate) fn check_training_data(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() == 0 {
        return Err(MerfError::InvalidArgument("cannot fit on zero rows".into()));
    }
    if x.rows() != y.len() {
        return Err(MerfError::Dimension(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(MerfError::InvalidArgument(format!("non-finite target at row {i}")));
    }
    Ok(())
}

/// Fits a tree on the (possibly repeated) rows listed in `samples`.
pub(crate) fn fit_tree_on(
    x: &Matrix,
    y: &[f64],
    samples: &[usize],
    hp: &RfHyperparams,
    rng: &mut RngStream,
) -> Result<DecisionTree> {
    check_training_data(x, y)?;
    if samples.is_empty() {
        return Err(MerfError::InvalidArgument("cannot fit on zero samples".into()));
    }
    let p = x.cols();
    let mtry = hp.resolve_max_features(p)?;
    Ok(TreeBuilder::new(x, y, samples, hp, mtry).build(rng))
}

struct Task {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Presorted CART builder: one list of sample slots per feature, sorted by
/// `(x, y)` and partitioned stably as the tree grows, so every node range
/// `[start, end)` holds the same samples in each feature's list.
struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    rows: &'a [usize],
    hp: &'a RfHyperparams,
    mtry: usize,
    m: usize,
    sorted: Vec<usize>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a Matrix, y: &'a [f64], rows: &'a [usize], hp: &'a RfHyperparams, mtry: usize) -> Self {
        let m = rows.len();
        let p = x.cols();
        let mut sorted = Vec::with_capacity(m * p);
        for f in 0..p {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_unstable_by(|&a, &b| {
                let (ra, rb) = (rows[a], rows[b]);
                x[(ra, f)]
                    .total_cmp(&x[(rb, f)])
                    .then_with(|| y[ra].total_cmp(&y[rb]))
            });
            sorted.extend(order);
        }
        Self {
            x,
            y,
            rows,
            hp,
            mtry,
            m,
            sorted,
            goes_left: vec![false; m],
            scratch: Vec::with_capacity(m),
        }
    }

    fn xv(&self, slot: usize, f: usize) -> f64 {
        self.x[(self.rows[slot], f)]
    }

    fn yv(&self, slot: usize) -> f64 {
        self.y[self.rows[slot]]
    }

    fn list(&self, f: usize) -> &[usize] {
        &self.sorted[f * self.m..(f + 1) * self.m]
    }

    fn leaf_value(&self, slots: impl Iterator<Item = usize>) -> (f64, usize) {
        // summing in value order makes the mean independent of row order
        let mut ys: Vec<f64> = slots.map(|s| self.yv(s)).collect();
        ys.sort_unstable_by(f64::total_cmp);
        (ys.iter().sum::<f64>() / ys.len() as f64, ys.len())
    }

    fn build(mut self, rng: &mut RngStream) -> DecisionTree {
        let p = self.x.cols();
        if p == 0 {
            let (value, n) = self.leaf_value(0..self.m);
            return DecisionTree::leaf(value, n, 0);
        }
        let mut nodes = vec![Node::Leaf { value: 0.0, n_samples: 0 }];
        let mut stack = vec![Task {
            node: 0,
            start: 0,
            end: self.m,
            depth: 0,
        }];
        while let Some(task) = stack.pop() {
            let split = if self.can_split(&task) {
                self.best_split(&task, rng)
            } else {
                None
            };
            match split {
                None => {
                    let (value, n_samples) = self.leaf_value(self.list(0)[task.start..task.end].iter().copied());
                    nodes[task.node] = Node::Leaf { value, n_samples };
                }
                Some(best) => {
                    let mid = self.partition(&task, best.feature, best.threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0, n_samples: 0 });
                    nodes.push(Node::Leaf { value: 0.0, n_samples: 0 });
                    nodes[task.node] = Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left,
                        right,
                    };
                    stack.push(Task {
                        node: right,
                        start: mid,
                        end: task.end,
                        depth: task.depth + 1,
                    });
                    stack.push(Task {
                        node: left,
                        start: task.start,
                        end: mid,
                        depth: task.depth + 1,
                    });
                }
            }
        }
        DecisionTree { nodes, n_features: p }
    }

    fn can_split(&self, task: &Task) -> bool {
        let n = task.end - task.start;
        if n < self.hp.min_samples_split || n < 2 * self.hp.min_samples_leaf {
            return false;
        }
        if self.hp.max_depth.is_some_and(|d| task.depth >= d) {
            return false;
        }
        let ys = self.list(0)[task.start..task.end].iter().map(|&s| self.yv(s));
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi > lo
    }

    fn best_split(&self, task: &Task, rng: &mut RngStream) -> Option<BestSplit> {
        let mut candidates = rng.sample_indices(self.x.cols(), self.mtry);
        candidates.sort_unstable();
        let n = task.end - task.start;
        let min_leaf = self.hp.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        for f in candidates {
            let list = &self.list(f)[task.start..task.end];
            let total: f64 = list.iter().map(|&s| self.yv(s)).sum();
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.yv(list[i]);
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let (a, b) = (self.xv(list[i], f), self.xv(list[i + 1], f));
                if a.partial_cmp(&b) != Some(Ordering::Less) {
                    continue;
                }
                let right_sum = total - left_sum;
                // minimising child SSE == maximising this
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (a + b);
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// Stable partition of every feature list over the task range; returns
    /// the first index of the right child.
    fn partition(&mut self, task: &Task, feature: usize, threshold: f64) -> usize {
        let p = self.x.cols();
        for k in task.start..task.end {
            let slot = self.sorted[feature * self.m + k];
            self.goes_left[slot] = self.xv(slot, feature) <= threshold;
        }
        let mut mid = task.start;
        for f in 0..p {
            let base = f * self.m;
            self.scratch.clear();
            let mut write = base + task.start;
            for k in task.start..task.end {
                let slot = self.sorted[base + k];
                if self.goes_left[slot] {
                    self.sorted[write] = slot;
                    write += 1;
                } else {
                    self.scratch.push(slot);
                }
            }
            mid = write - base;
            self.sorted[write..base + task.end].copy_from_slice(&self.scratch);
        }
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::MaxFeatures;
    use proptest::prelude::*;

    fn exhaustive_hp() -> RfHyperparams {
        RfHyperparams {
            n_trees: 1,
            max_depth: None,
            max_features: MaxFeatures::All,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: false,
        }
    }

    fn rng() -> RngStream {
        RngStream::new(0, "tree-test")
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let t = fit_tree(&x, &[4.0; 3], &exhaustive_hp(), &mut rng()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { value: 4.0, n_samples: 3 }]);
    }

    #[test]
    fn single_row_gives_single_leaf() {
        let x = Matrix::from_rows(&[[3.0, 1.0]]).unwrap();
        let t = fit_tree(&x, &[-2.5], &exhaustive_hp(), &mut rng()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { value: -2.5, n_samples: 1 }]);
    }

    /// Brute-force best single split by enumerating every feature and every
    /// threshold between consecutive distinct values.
    fn brute_force_split(rows: &[Vec<f64>], y: &[f64]) -> Option<(usize, f64, f64)> {
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
        };
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..rows[0].len() {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (l, r): (Vec<f64>, Vec<f64>) = {
                    let mut l = vec![];
                    let mut r = vec![];
                    for (row, &t) in rows.iter().zip(y) {
                        if row[f] <= thr { l.push(t) } else { r.push(t) }
                    }
                    (l, r)
                };
                let cost = sse(&l) + sse(&r);
                if best.is_none_or(|b| cost < b.2 - 1e-12) {
                    best = Some((f, thr, cost));
                }
            }
        }
        best
    }

    #[test]
    fn two_point_split_matches_brute_force() {
        let rows = vec![vec![0.0], vec![1.0]];
        let y = [0.0, 10.0];
        let (f, thr, _) = brute_force_split(&rows, &y).unwrap();
        assert_eq!((f, thr), (0, 0.5));

        let t = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &exhaustive_hp(), &mut rng()).unwrap();
        assert_eq!(
            t.nodes(),
            &[
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { value: 0.0, n_samples: 1 },
                Node::Leaf { value: 10.0, n_samples: 1 },
            ]
        );
        assert_eq!(predict_tree(&t, &[0.0]), 0.0);
        assert_eq!(predict_tree(&t, &[0.5]), 0.0);
        assert_eq!(predict_tree(&t, &[0.51]), 10.0);
        assert_eq!(predict_tree(&t, &[-1.0]), 0.0);
    }

    #[test]
    fn single_leaf_predicts_everywhere() {
        let t = DecisionTree::leaf(7.0, 3, 2);
        assert_eq!(predict_tree(&t, &[100.0, -5.0]), 7.0);
    }

    #[test]
    fn root_split_matches_brute_force_on_random_data() {
        let mut r = RngStream::new(77, "data");
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..15).map(|_| (0..3).map(|_| (r.below(6) as f64) - 2.0).collect()).collect();
            let y: Vec<f64> = (0..15).map(|_| r.standard_normal()).collect();
            let mut hp = exhaustive_hp();
            hp.max_depth = Some(1);
            let t = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &hp, &mut rng()).unwrap();
            match (brute_force_split(&rows, &y), &t.nodes()[0]) {
                (Some((_, _, cost)), Node::Split { feature, threshold, .. }) => {
                    // the chosen split must attain the brute-force optimum
                    let (l, rr): (Vec<_>, Vec<_>) = rows.iter().zip(&y).partition(|(row, _)| row[*feature] <= *threshold);
                    let sse = |v: &[(&Vec<f64>, &f64)]| {
                        let m = v.iter().map(|p| *p.1).sum::<f64>() / v.len() as f64;
                        v.iter().map(|p| (p.1 - m).powi(2)).sum::<f64>()
                    };
                    assert!((sse(&l) + sse(&rr) - cost).abs() < 1e-9);
                }
                (None, Node::Leaf { .. }) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn leaves_respect_min_samples_leaf() {
        let mut r = RngStream::new(5, "data");
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![r.standard_normal(), r.standard_normal()]).collect();
        let y: Vec<f64> = rows.iter().map(|v| v[0] * 3.0 + v[1]).collect();
        let mut hp = exhaustive_hp();
        hp.min_samples_leaf = 4;
        hp.min_samples_split = 8;
        let t = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &hp, &mut rng()).unwrap();
        for node in t.nodes() {
            if let Node::Leaf { n_samples, value } = node {
                assert!(*n_samples >= 4);
                assert!(value.is_finite());
            }
        }
        hp.max_depth = Some(2);
        let shallow = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &hp, &mut rng()).unwrap();
        assert!(shallow.depth() <= 2);
    }

    #[test]
    fn errors_on_bad_input() {
        let x = Matrix::zeros(0, 2);
        assert!(fit_tree(&x, &[], &exhaustive_hp(), &mut rng()).is_err());
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(fit_tree(&x, &[1.0, f64::NAN], &exhaustive_hp(), &mut rng()).is_err());
    }

    proptest! {
        #[test]
        fn row_permutation_does_not_change_tree(
            data in prop::collection::vec((0i32..5, 0i32..5, 0i32..4), 2..40),
            perm_seed in 0u64..1000,
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|&(a, b, _)| vec![a as f64, b as f64]).collect();
            let y: Vec<f64> = data.iter().map(|&(_, _, c)| c as f64 * 0.7).collect();
            let mut order: Vec<usize> = (0..rows.len()).collect();
            RngStream::new(perm_seed, "perm").shuffle(&mut order);
            let prow: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
            let py: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            let a = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &exhaustive_hp(), &mut rng()).unwrap();
            let b = fit_tree(&Matrix::from_rows(&prow).unwrap(), &py, &exhaustive_hp(), &mut rng()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
