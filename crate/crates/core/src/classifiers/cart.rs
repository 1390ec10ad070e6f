use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};

/// Minimum impurity decrease a split must achieve.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Gini impurity at this node.
        impurity: f64,
        /// Size-weighted Gini impurity of the two children.
        children_impurity: f64,
    },
    Leaf {
        /// Training-sample count per class, in `CartTree::classes` order.
        counts: Vec<u64>,
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub schema: Vec<String>,
    /// Sorted class names.
    pub classes: Vec<String>,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl CartTree {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Syntax {
            line: 0,
            column: 0,
            message: e.to_string(),
        })
    }
}

fn gini(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Argmax with ties to the lowest index, i.e. the lexicographically first class.
fn majority(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a> {
    samples: &'a SampleSet,
    targets: Vec<usize>,
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    weighted: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_classes];
        for &i in idx {
            counts[self.targets[i]] += 1;
        }
        counts
    }

    fn best_split(&self, idx: &[usize], parent_counts: &[u64]) -> Option<BestSplit> {
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in 0..self.samples.schema.len() {
            let x = |i: usize| self.samples.features[i][f];
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
            let mut left = vec![0u64; self.n_classes];
            let mut right = parent_counts.to_vec();
            for pos in 0..n - 1 {
                let t = self.targets[order[pos]];
                left[t] += 1;
                right[t] -= 1;
                let (lo, hi) = (x(order[pos]), x(order[pos + 1]));
                let n_left = pos + 1;
                if lo == hi || n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let weighted = (n_left as f64 * gini(&left, n_left as u64)
                    + (n - n_left) as f64 * gini(&right, (n - n_left) as u64))
                    / n as f64;
                if best.as_ref().is_none_or(|b| weighted < b.weighted) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        weighted,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let impurity = gini(&counts, idx.len() as u64);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            class: majority(&counts),
            counts: counts.clone(),
        });
        if impurity == 0.0 || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return slot;
        }
        let Some(split) = self.best_split(&idx, &counts) else {
            return slot;
        };
        if impurity - split.weighted <= MIN_GAIN {
            return slot;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.samples.features[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            impurity,
            children_impurity: split.weighted,
        };
        slot
    }
}

/// Greedy Gini-minimising binary tree. Thresholds sit midway between
/// consecutive distinct values; ties prefer the lower feature index, then
/// the lower threshold.
pub fn cart_train(samples: &SampleSet, max_depth: usize, min_leaf: usize) -> Result<CartTree> {
    samples.check_non_empty()?;
    if min_leaf == 0 {
        return Err(Error::invalid("min_leaf must be at least 1"));
    }
    let classes = samples.classes();
    let targets = samples
        .labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label drawn from the class list"))
        .collect();
    let mut builder = Builder {
        samples,
        targets,
        n_classes: classes.len(),
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    builder.grow((0..samples.len()).collect(), 0);
    Ok(CartTree {
        schema: samples.schema.clone(),
        classes,
        nodes: builder.nodes,
    })
}

pub fn cart_predict<'t>(tree: &'t CartTree, x: &[f64]) -> Result<&'t str> {
    if x.len() != tree.schema.len() {
        return Err(Error::Arity {
            expected: tree.schema.len(),
            actual: x.len(),
        });
    }
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            Node::Leaf { class, .. } => return Ok(&tree.classes[*class]),
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => i = if x[*feature] <= *threshold { *left } else { *right },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(points: &[(f64, &str)]) -> SampleSet {
        let mut s = SampleSet::new(vec!["x".into()]);
        for (x, l) in points {
            s.push(vec![*x], *l).unwrap();
        }
        s
    }

    #[test]
    fn single_class_is_one_leaf() {
        let s = one_d(&[(1.0, "A"), (2.0, "A"), (3.0, "A")]);
        let t = cart_train(&s, 5, 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        for x in [-10.0, 2.0, 99.0] {
            assert_eq!(cart_predict(&t, &[x]).unwrap(), "A");
        }
    }

    /// Candidate thresholds 0.5, 5.5, 10.5 give weighted Gini 1/3, 0, 1/3.
    #[test]
    fn hand_example_splits_at_midpoint() {
        let s = one_d(&[(0.0, "A"), (1.0, "A"), (10.0, "B"), (11.0, "B")]);
        let t = cart_train(&s, 4, 1).unwrap();
        match &t.nodes[0] {
            Node::Split {
                feature,
                threshold,
                children_impurity,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.5);
                assert_eq!(*children_impurity, 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(cart_predict(&t, &[3.0]).unwrap(), "A");
        assert_eq!(cart_predict(&t, &[7.0]).unwrap(), "B");
        assert_eq!(cart_predict(&t, &[5.5]).unwrap(), "A");
    }

    #[test]
    fn arity_mismatch() {
        let t = cart_train(&one_d(&[(0.0, "A"), (1.0, "B")]), 3, 1).unwrap();
        assert!(matches!(cart_predict(&t, &[1.0, 2.0]), Err(Error::Arity { .. })));
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(cart_train(&one_d(&[]), 3, 1), Err(Error::EmptySample(_))));
    }

    #[test]
    fn tie_goes_to_lower_feature() {
        let mut s = SampleSet::new(vec!["a".into(), "b".into()]);
        s.push(vec![0.0, 0.0], "X").unwrap();
        s.push(vec![1.0, 1.0], "Y").unwrap();
        let t = cart_train(&s, 3, 1).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn leaf_tie_picks_first_class_name() {
        let s = one_d(&[(1.0, "B"), (1.0, "A")]);
        let t = cart_train(&s, 3, 1).unwrap();
        assert_eq!(cart_predict(&t, &[1.0]).unwrap(), "A");
    }

    #[test]
    fn depth_limit_respected() {
        let pts: Vec<(f64, &str)> = (0..64).map(|i| (i as f64, if (i / 2) % 2 == 0 { "A" } else { "B" })).collect();
        let t = cart_train(&one_d(&pts), 3, 1).unwrap();
        assert!(t.depth() <= 3);
    }

    #[test]
    fn toml_round_trip() {
        let t = cart_train(&one_d(&[(0.0, "A"), (1.0, "A"), (10.0, "B"), (11.0, "B")]), 4, 1).unwrap();
        assert_eq!(CartTree::from_toml(&t.to_toml().unwrap()).unwrap(), t);
    }
}
