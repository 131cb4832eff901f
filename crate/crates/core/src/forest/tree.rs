//! CART classification trees grown on a bootstrap sample, keeping the
//! per-sample bookkeeping that the proximity definitions need.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Class-weighted vote distribution over in-bag draws reaching the leaf.
    Leaf { votes: Vec<f64> },
}

/// One fitted tree plus its bootstrap and routing records over the training
/// rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub nodes: Vec<Node>,
    /// In-bag multiplicity of every training row (bootstrap count).
    pub inbag: Vec<u32>,
    /// Leaf node id every training row routes to.
    pub leaf_of: Vec<u32>,
}

impl TreeRecord {
    pub fn is_oob(&self, row: usize) -> bool {
        self.inbag[row] == 0
    }

    pub fn oob_flags(&self) -> Vec<bool> {
        self.inbag.iter().map(|&c| c == 0).collect()
    }

    /// Leaf node id reached by `x`.
    pub fn leaf(&self, x: ArrayView1<'_, f64>) -> u32 {
        let mut id = 0u32;
        loop {
            match &self.nodes[id as usize] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn votes(&self, leaf: u32) -> &[f64] {
        match &self.nodes[leaf as usize] {
            Node::Leaf { votes } => votes,
            Node::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: u32) -> usize {
            match &nodes[id as usize] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub(crate) struct TreeSettings {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub n_classes: usize,
}

/// Grow one tree on the bootstrap described by `inbag`.
pub(crate) fn grow<R: Rng>(
    x: &Array2<f64>,
    y: &[usize],
    class_weight: &[f64],
    inbag: Vec<u32>,
    settings: &TreeSettings,
    rng: &mut R,
) -> TreeRecord {
    let samples: Vec<(u32, u32)> = inbag
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i as u32, c))
        .collect();
    let mut builder = Builder {
        x,
        y,
        class_weight,
        settings,
        nodes: Vec::new(),
        features: (0..x.ncols()).collect(),
    };
    builder.build(samples, 0, rng);
    let mut record = TreeRecord {
        nodes: builder.nodes,
        inbag,
        leaf_of: Vec::new(),
    };
    record.leaf_of = (0..x.nrows()).map(|i| record.leaf(x.row(i))).collect();
    record
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    class_weight: &'a [f64],
    settings: &'a TreeSettings,
    nodes: Vec<Node>,
    features: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn totals(&self, samples: &[(u32, u32)]) -> (Vec<f64>, u64) {
        let mut tot = vec![0.0; self.settings.n_classes];
        let mut draws = 0u64;
        for &(i, c) in samples {
            let y = self.y[i as usize];
            tot[y] += c as f64 * self.class_weight[y];
            draws += c as u64;
        }
        (tot, draws)
    }

    fn build<R: Rng>(&mut self, samples: Vec<(u32, u32)>, depth: usize, rng: &mut R) -> u32 {
        let id = self.nodes.len() as u32;
        let (tot, draws) = self.totals(&samples);
        let pure = tot.iter().filter(|&&w| w > 0.0).count() <= 1;
        let depth_ok = self.settings.max_depth.is_none_or(|d| depth < d);
        let size_ok = draws >= 2 * self.settings.min_leaf as u64;
        let split = if !pure && depth_ok && size_ok {
            self.best_split(&samples, &tot, rng)
        } else {
            None
        };
        match split {
            None => {
                let w: f64 = tot.iter().sum();
                let votes = tot.iter().map(|t| t / w).collect();
                self.nodes.push(Node::Leaf { votes });
            }
            Some(best) => {
                self.nodes.push(Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: 0,
                    right: 0,
                });
                let (l, r): (Vec<_>, Vec<_>) = samples
                    .into_iter()
                    .partition(|&(i, _)| self.x[[i as usize, best.feature]] <= best.threshold);
                let left = self.build(l, depth + 1, rng);
                let right = self.build(r, depth + 1, rng);
                if let Node::Split {
                    left: ln, right: rn, ..
                } = &mut self.nodes[id as usize]
                {
                    *ln = left;
                    *rn = right;
                }
            }
        }
        id
    }

    /// Best Gini split over up to `max_features` non-constant candidate
    /// features. Any valid split is accepted even without impurity decrease,
    /// so parity-like structure can still be split at the root.
    fn best_split<R: Rng>(
        &mut self,
        samples: &[(u32, u32)],
        tot: &[f64],
        rng: &mut R,
    ) -> Option<BestSplit> {
        let n_classes = self.settings.n_classes;
        let min_leaf = self.settings.min_leaf as u64;
        self.features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        let mut sorted: Vec<(f64, u32, u32)> = Vec::with_capacity(samples.len());
        let mut left = vec![0.0; n_classes];
        for fi in 0..self.features.len() {
            if visited >= self.settings.max_features {
                break;
            }
            let f = self.features[fi];
            sorted.clear();
            sorted.extend(
                samples
                    .iter()
                    .map(|&(i, c)| (self.x[[i as usize, f]], i, c)),
            );
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            visited += 1;
            left.iter_mut().for_each(|v| *v = 0.0);
            let total_draws: u64 = sorted.iter().map(|s| s.2 as u64).sum();
            let mut left_draws = 0u64;
            for k in 0..sorted.len() - 1 {
                let (v, i, c) = sorted[k];
                let y = self.y[i as usize];
                left[y] += c as f64 * self.class_weight[y];
                left_draws += c as u64;
                let next = sorted[k + 1].0;
                if next == v {
                    continue;
                }
                if left_draws < min_leaf || total_draws - left_draws < min_leaf {
                    continue;
                }
                let mut wl = 0.0;
                let mut wr = 0.0;
                let mut sl = 0.0;
                let mut sr = 0.0;
                for c in 0..n_classes {
                    let r = tot[c] - left[c];
                    wl += left[c];
                    wr += r;
                    sl += left[c] * left[c];
                    sr += r * r;
                }
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                // Maximizing this proxy minimizes the weighted child Gini.
                let score = sl / wl + sr / wr;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
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
}

/// Weighted Gini impurity of a class-weight vector.
pub fn gini(weights: &[f64]) -> f64 {
    let w: f64 = weights.iter().sum();
    if w <= 0.0 {
        return 0.0;
    }
    1.0 - weights.iter().map(|c| (c / w) * (c / w)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use ndarray::array;

    fn settings(n_classes: usize, max_features: usize, max_depth: Option<usize>) -> TreeSettings {
        TreeSettings {
            max_features,
            max_depth,
            min_leaf: 1,
            n_classes,
        }
    }

    #[test]
    fn single_split_midpoint() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 0, 1, 1];
        let t = grow(&x, &y, &[1.0, 1.0], vec![1; 4], &settings(2, 1, None), &mut seeds::rng(0, 0));
        assert_eq!(t.nodes.len(), 3);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            _ => panic!("root should split"),
        }
        assert_eq!(t.leaf_of[0], t.leaf_of[1]);
        assert_ne!(t.leaf_of[1], t.leaf_of[2]);
        assert_eq!(t.votes(t.leaf_of[3]), &[0.0, 1.0]);
    }

    #[test]
    fn oob_rows_are_routed() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 0, 1, 1];
        let t = grow(&x, &y, &[1.0, 1.0], vec![2, 0, 2, 0], &settings(2, 1, None), &mut seeds::rng(0, 0));
        assert!(t.is_oob(1) && t.is_oob(3));
        assert_eq!(t.leaf_of.len(), 4);
        assert_eq!(t.oob_flags(), vec![false, true, false, true]);
        // Only rows 0 and 2 were seen: the split sits at their midpoint.
        assert_eq!(t.leaf_of[1], t.leaf_of[0]);
        assert_eq!(t.leaf_of[3], t.leaf_of[2]);
        assert_ne!(t.leaf_of[0], t.leaf_of[2]);
    }

    #[test]
    fn depth_limit_and_xor() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let stump = grow(&x, &y, &[1.0, 1.0], vec![1; 4], &settings(2, 2, Some(1)), &mut seeds::rng(1, 0));
        assert_eq!(stump.depth(), 1);
        let deep = grow(&x, &y, &[1.0, 1.0], vec![1; 4], &settings(2, 2, None), &mut seeds::rng(1, 0));
        assert_eq!(deep.n_leaves(), 4);
        for i in 0..4 {
            assert_eq!(deep.votes(deep.leaf_of[i])[y[i]], 1.0);
        }
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[1.0, 1.0]), 0.5);
        assert_eq!(gini(&[3.0, 0.0]), 0.0);
        assert_eq!(gini(&[]), 0.0);
    }
}
