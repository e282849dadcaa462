//! Gradient-boosted regression trees with squared-error loss.
//!
//! Trees are grown with exact greedy splitting: every midpoint between two
//! consecutive distinct values of a feature is a candidate threshold, and the
//! candidate with the largest reduction in squared error wins. Ties resolve to
//! the lowest feature index and then the lowest threshold, so a fit is a pure
//! function of its inputs and configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const MODEL_FORMAT_VERSION: u64 = 1;
const MODEL_MAGIC: &str = "dialeval-gbt";

/// A split must remove at least this fraction of the node's squared error.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

/// Gains closer than this fraction of the node's squared error are ties, so
/// candidates inducing the same partition resolve by index order, not rounding.
const TIE_RELATIVE_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_trees == 0 {
            return fail("n_trees must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_depth == 0 {
            return fail("max_depth must be positive".into());
        }
        if self.min_samples_leaf == 0 {
            return fail("min_samples_leaf must be positive".into());
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return fail(format!("subsample must be in (0, 1], got {}", self.subsample));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.eval(|f| row[f])
    }

    /// Walks the tree reading feature values through `value_of`.
    #[inline]
    pub fn eval(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if value_of(feature) < threshold { left } else { right },
            }
        }
    }

    pub fn split_features(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub base_value: f64,
    pub learning_rate: f64,
    pub feature_count: usize,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: row.len(),
            });
        }
        Ok(self.predict_raw(row))
    }

    /// Prediction without the dimension check.
    #[inline]
    pub fn predict_raw(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base_value + self.learning_rate * sum
    }

    /// The model made of the first `n` boosting rounds.
    pub fn truncated(&self, n: usize) -> GbtModel {
        GbtModel {
            trees: self.trees.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn split_features(&self) -> BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.split_features()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_FORMAT_VERSION}");
        let _ = writeln!(s, "feature_count {}", self.feature_count);
        let _ = writeln!(s, "learning_rate {:e}", self.learning_rate);
        let _ = writeln!(s, "base_value {:e}", self.base_value);
        let _ = writeln!(s, "tree_count {}", self.trees.len());
        for tree in &self.trees {
            let _ = writeln!(s, "tree {}", tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(s, "S {feature} {threshold:e} {left} {right}");
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(s, "L {value:e}");
                    }
                }
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<GbtModel> {
        ModelParser::new(text).parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_text();
        atomic_write(path.as_ref(), |w| w.write_all(text.as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GbtModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GbtModel::from_text(&text)
    }
}

struct ModelParser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> ModelParser<'a> {
    fn new(text: &'a str) -> Self {
        ModelParser {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Model {
            line: self.line_no,
            message: message.into(),
        }
    }

    fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        match self.lines.next() {
            Some((i, line)) => {
                self.line_no = i + 1;
                Ok(line.split_ascii_whitespace().collect())
            }
            None => {
                self.line_no += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let fields = self.next_fields()?;
        match fields.as_slice() {
            [k, v] if *k == key => Ok(v),
            _ => Err(self.err(format!("expected `{key} <value>`"))),
        }
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("invalid number `{s}`")))
    }

    fn finite(&self, s: &str) -> Result<f64> {
        let v: f64 = self.num(s)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("non-finite value `{s}`")))
        }
    }

    fn parse(mut self) -> Result<GbtModel> {
        let header = self.next_fields()?;
        match header.as_slice() {
            [magic, version] if *magic == MODEL_MAGIC => {
                let v: u64 = self.num(version)?;
                if v != MODEL_FORMAT_VERSION {
                    return Err(Error::Version {
                        what: "model format",
                        found: v,
                        expected: MODEL_FORMAT_VERSION,
                    });
                }
            }
            _ => return Err(self.err("not a dialeval model file")),
        }
        let s = self.keyed("feature_count")?;
        let feature_count: usize = self.num(s)?;
        let s = self.keyed("learning_rate")?;
        let learning_rate = self.finite(s)?;
        let s = self.keyed("base_value")?;
        let base_value = self.finite(s)?;
        let s = self.keyed("tree_count")?;
        let tree_count: usize = self.num(s)?;
        let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
        for _ in 0..tree_count {
            let s = self.keyed("tree")?;
            let node_count: usize = self.num(s)?;
            if node_count == 0 {
                return Err(self.err("tree without nodes"));
            }
            let mut nodes = Vec::with_capacity(node_count.min(1 << 16));
            let mut referenced = vec![false; node_count];
            for idx in 0..node_count {
                let fields = self.next_fields()?;
                let node = match fields.as_slice() {
                    ["L", v] => Node::Leaf {
                        value: self.finite(v)?,
                    },
                    ["S", f, t, l, r] => {
                        let feature: usize = self.num(f)?;
                        let left: usize = self.num(l)?;
                        let right: usize = self.num(r)?;
                        if feature >= feature_count {
                            return Err(self.err(format!("feature index {feature} out of range")));
                        }
                        for child in [left, right] {
                            if child <= idx || child >= node_count || referenced[child] {
                                return Err(self.err(format!("invalid child index {child}")));
                            }
                            referenced[child] = true;
                        }
                        Node::Split {
                            feature,
                            threshold: self.finite(t)?,
                            left,
                            right,
                        }
                    }
                    _ => return Err(self.err("malformed node")),
                };
                nodes.push(node);
            }
            if referenced.iter().skip(1).any(|r| !r) {
                return Err(self.err("tree has unreachable nodes"));
            }
            trees.push(Tree { nodes });
        }
        let end = self.next_fields()?;
        if end.as_slice() != ["end"] {
            return Err(self.err("expected `end`"));
        }
        if self.lines.any(|(_, l)| !l.trim().is_empty()) {
            return Err(self.err("trailing content after `end`"));
        }
        Ok(GbtModel {
            base_value,
            learning_rate,
            feature_count,
            trees,
        })
    }
}

/// Fits a boosted ensemble to `targets` from the rows of `matrix`.
pub fn fit(matrix: &[Vec<f64>], targets: &[f64], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    let n = matrix.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 rows, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: targets.len(),
        });
    }
    let p = matrix[0].len();
    for row in matrix {
        if row.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite feature value".into()));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite target".into()));
    }

    // Every feature's row order, computed once and filtered per node.
    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| matrix[a][j].total_cmp(&matrix[b][j]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let base_value = targets.iter().sum::<f64>() / n as f64;
    let mut predictions = vec![base_value; n];
    let mut residuals = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sample_size = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(config.n_trees);

    for _ in 0..config.n_trees {
        for i in 0..n {
            residuals[i] = targets[i] - predictions[i];
        }
        let mut in_node = vec![false; n];
        if sample_size == n {
            in_node.fill(true);
        } else {
            for i in rand::seq::index::sample(&mut rng, n, sample_size) {
                in_node[i] = true;
            }
        }
        let mut builder = TreeBuilder {
            matrix,
            residuals: &residuals,
            sorted: &sorted,
            config,
            nodes: Vec::new(),
        };
        builder.grow(&mut in_node, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        for (i, pred) in predictions.iter_mut().enumerate() {
            *pred += config.learning_rate * tree.predict(&matrix[i]);
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        base_value,
        learning_rate: config.learning_rate,
        feature_count: p,
        trees,
    })
}

struct TreeBuilder<'a> {
    matrix: &'a [Vec<f64>],
    residuals: &'a [f64],
    sorted: &'a [Vec<usize>],
    config: &'a GbtConfig,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// Grows the subtree over the rows flagged in `members`; returns its index.
    fn grow(&mut self, members: &mut [bool], depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });

        let rows: Vec<usize> = (0..members.len()).filter(|&i| members[i]).collect();
        let count = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.residuals[i]).sum();
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };

        let split = if depth < self.config.max_depth && count >= 2 * self.config.min_samples_leaf {
            self.best_split(members, count, sum, &rows)
        } else {
            None
        };
        let Some(split) = split else {
            self.nodes[idx] = Node::Leaf { value: mean };
            return idx;
        };

        let mut left_members = vec![false; members.len()];
        for &i in &rows {
            if self.matrix[i][split.feature] < split.threshold {
                left_members[i] = true;
                members[i] = false;
            }
        }
        let left = self.grow(&mut left_members, depth + 1);
        let right = self.grow(members, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        idx
    }

    fn best_split(&self, members: &[bool], count: usize, sum: f64, rows: &[usize]) -> Option<SplitChoice> {
        let sse: f64 = {
            let mean = sum / count as f64;
            rows.iter().map(|&i| (self.residuals[i] - mean).powi(2)).sum()
        };
        if sse <= 0.0 {
            return None;
        }
        let min_leaf = self.config.min_samples_leaf;
        let mut best: Option<(f64, SplitChoice)> = None;

        for (feature, order) in self.sorted.iter().enumerate() {
            let node_rows: Vec<usize> = order.iter().copied().filter(|&i| members[i]).collect();
            let mut left_sum = 0.0;
            for k in 0..count - 1 {
                let i = node_rows[k];
                left_sum += self.residuals[i];
                let left_n = k + 1;
                let right_n = count - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let lo = self.matrix[i][feature];
                let hi = self.matrix[node_rows[k + 1]][feature];
                if lo == hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let diff = left_sum / left_n as f64 - right_sum / right_n as f64;
                let gain = (left_n * right_n) as f64 / count as f64 * diff * diff;
                if gain <= MIN_RELATIVE_GAIN * sse {
                    continue;
                }
                if best.as_ref().is_none_or(|(g, _)| gain > *g + TIE_RELATIVE_GAIN * sse) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold <= lo {
                        threshold = hi;
                    }
                    best = Some((gain, SplitChoice { feature, threshold }));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}
