//! Second-order gradient-boosted decision trees for multiclass softmax,
//! trained by exact greedy search over presorted feature columns.

mod split;
mod text;

pub use split::{best_split, grow_tree, SortedColumns, SplitCandidate};
pub use text::{MODEL_HEADER, MODEL_VERSION};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

pub const COMPLIANCE_MAX_TREES: usize = 20;
pub const COMPLIANCE_MAX_DEPTH: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetMode {
    /// `max_trees` counts every class tree.
    TotalTrees,
    /// `max_trees` counts boosting rounds of one tree per class.
    Rounds,
}

impl BudgetMode {
    pub fn name(self) -> &'static str {
        match self {
            BudgetMode::TotalTrees => "total_trees",
            BudgetMode::Rounds => "rounds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "total_trees" => Some(BudgetMode::TotalTrees),
            "rounds" => Some(BudgetMode::Rounds),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbdtConfig {
    pub max_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub reg_gamma: f64,
    pub min_child_weight: f64,
    pub class_count: usize,
    pub budget_mode: BudgetMode,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            max_trees: 20,
            max_depth: 10,
            learning_rate: 0.3,
            reg_lambda: 1.0,
            reg_gamma: 0.0,
            min_child_weight: 1.0,
            class_count: 10,
            budget_mode: BudgetMode::TotalTrees,
        }
    }
}

impl GbdtConfig {
    /// With `compliance`, the ensemble is held to 20 trees in total and depth 10.
    pub fn validate(&self, compliance: bool) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("gbdt.learning_rate {} must be in (0, 1]", self.learning_rate));
        }
        if !(self.reg_lambda >= 0.0) || !self.reg_lambda.is_finite() {
            return bad(format!("gbdt.reg_lambda {} must be >= 0", self.reg_lambda));
        }
        if !(self.reg_gamma >= 0.0) || !self.reg_gamma.is_finite() {
            return bad(format!("gbdt.reg_gamma {} must be >= 0", self.reg_gamma));
        }
        if !(self.min_child_weight >= 0.0) || !self.min_child_weight.is_finite() {
            return bad(format!("gbdt.min_child_weight {} must be >= 0", self.min_child_weight));
        }
        if self.class_count < 2 {
            return bad(format!("gbdt.class_count {} must be at least 2", self.class_count));
        }
        if self.max_depth > 64 {
            return bad(format!("gbdt.max_depth {} exceeds 64", self.max_depth));
        }
        if compliance {
            if self.tree_budget() > COMPLIANCE_MAX_TREES {
                return bad(format!(
                    "{} trees ({} mode) exceeds the {}-tree bound; pass --no-compliance to allow it",
                    self.tree_budget(),
                    self.budget_mode.name(),
                    COMPLIANCE_MAX_TREES
                ));
            }
            if self.max_depth > COMPLIANCE_MAX_DEPTH {
                return bad(format!(
                    "gbdt.max_depth {} exceeds the depth-{} bound; pass --no-compliance to allow it",
                    self.max_depth, COMPLIANCE_MAX_DEPTH
                ));
            }
        }
        Ok(())
    }

    /// Total number of trees training may add.
    pub fn tree_budget(&self) -> usize {
        match self.budget_mode {
            BudgetMode::TotalTrees => self.max_trees,
            BudgetMode::Rounds => self.max_trees * self.class_count,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    /// Samples with `x[feature] < threshold` go left; NaN follows `default`.
    Split {
        feature: usize,
        threshold: f64,
        default: Direction,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0))),
        }
    }

    /// Leaf weight reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    default,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() { *default == Direction::Left } else { v < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: Vec<f64>,
    trees: Vec<(usize, TreeNode)>,
    pub feature_dim: usize,
    pub config: GbdtConfig,
}

impl TreeEnsemble {
    /// Base scores of zero and no trees.
    pub fn empty(feature_dim: usize, config: GbdtConfig) -> Self {
        TreeEnsemble {
            base_score: vec![0.0; config.class_count],
            trees: Vec::new(),
            feature_dim,
            config,
        }
    }

    /// Checked constructor used by the model reader.
    pub fn from_parts(
        base_score: Vec<f64>,
        trees: Vec<(usize, TreeNode)>,
        feature_dim: usize,
        config: GbdtConfig,
    ) -> Result<Self> {
        let k = config.class_count;
        if base_score.len() != k {
            return Err(Error::invalid("TreeEnsemble", format!("{} base scores for {} classes", base_score.len(), k)));
        }
        for (i, (c, t)) in trees.iter().enumerate() {
            if *c >= k {
                return Err(Error::invalid("TreeEnsemble", format!("tree {} has class {} >= {}", i, c, k)));
            }
            if t.max_feature().is_some_and(|f| f >= feature_dim) {
                return Err(Error::invalid("TreeEnsemble", format!("tree {} splits on a feature >= {}", i, feature_dim)));
            }
        }
        Ok(TreeEnsemble {
            base_score,
            trees,
            feature_dim,
            config,
        })
    }

    pub fn trees(&self) -> impl Iterator<Item = (usize, &TreeNode)> {
        self.trees.iter().map(|(c, t)| (*c, t))
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub(crate) fn push(&mut self, class: usize, tree: TreeNode) {
        self.trees.push((class, tree));
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.feature_dim {
            return Err(Error::shape(
                "gbdt predict",
                format!("{} features, ensemble expects {}", cols, self.feature_dim),
            ));
        }
        Ok(())
    }

    /// Margins of one feature row.
    pub fn margins_row(&self, x: &[f64]) -> Vec<f64> {
        let mut m = self.base_score.clone();
        for (c, t) in &self.trees {
            m[*c] += t.predict(x);
        }
        m
    }

    /// Row-major `N × K` margins.
    pub fn predict_margins(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_dim(x.cols)?;
        Ok((0..x.rows).flat_map(|i| self.margins_row(x.row(i))).collect())
    }

    pub fn predict_class(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        let k = self.class_count();
        Ok(self
            .predict_margins(x)?
            .chunks_exact(k)
            .map(crate::backbone::argmax)
            .collect())
    }

    pub fn to_text(&self) -> String {
        text::write_model(self)
    }

    pub fn parse(s: &str) -> Result<Self> {
        text::read_model(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::backbone::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `reactxgb train-gbdt` first".into(),
            },
            _ => Error::io(path, e),
        })?;
        let s = std::str::from_utf8(&bytes).map_err(|e| {
            Error::format("GBDT model", format!("byte {}", e.valid_up_to()), "not UTF-8 text")
        })?;
        Self::parse(s)
    }
}

/// Max-stabilised softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `g = p − onehot`, `h = p(1 − p)` for row-major `N × K` margins.
pub fn softmax_grad_hess(margins: &[f64], labels: &[usize], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 || margins.len() != labels.len() * k {
        return Err(Error::shape(
            "softmax_grad_hess",
            format!("{} margins for {} labels × {} classes", margins.len(), labels.len(), k),
        ));
    }
    let mut g = vec![0.0; margins.len()];
    let mut h = vec![0.0; margins.len()];
    for (i, (row, &y)) in margins.chunks_exact(k).zip(labels).enumerate() {
        if y >= k {
            return Err(Error::invalid(
                "softmax_grad_hess",
                format!("label {} at row {} outside [0, {})", y, i, k),
            ));
        }
        for (j, p) in softmax(row).into_iter().enumerate() {
            g[i * k + j] = p - if j == y { 1.0 } else { 0.0 };
            h[i * k + j] = p * (1.0 - p);
        }
    }
    Ok((g, h))
}

/// Mean multiclass log-loss of row-major margins.
pub fn log_loss(margins: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in margins.chunks_exact(k).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len().max(1) as f64
}

/// Per-round training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub trees: usize,
    pub train_loss: f64,
}

/// Boosts one tree per class per round, in class order, until the tree budget
/// is spent. The returned log holds the loss before any tree (round 0) and
/// after every round.
pub fn train_ensemble(x: &FeatureMatrix, config: &GbdtConfig) -> Result<(TreeEnsemble, Vec<RoundLog>)> {
    if x.rows == 0 {
        return Err(Error::invalid("train_ensemble", "empty dataset"));
    }
    let k = config.class_count;
    if k < 2 {
        return Err(Error::invalid("train_ensemble", "need at least two classes"));
    }
    let labels = x.labels_usize();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid("train_ensemble", format!("label {} outside [0, {})", bad, k)));
    }
    let cols = SortedColumns::new(x);
    let mut ens = TreeEnsemble::empty(x.cols, config.clone());
    let mut margins = vec![0.0; x.rows * k];
    let mut log = vec![RoundLog {
        round: 0,
        trees: 0,
        train_loss: log_loss(&margins, &labels, k),
    }];
    let budget = config.tree_budget();
    let mut round = 0;
    while ens.tree_count() < budget {
        round += 1;
        let (g, h) = softmax_grad_hess(&margins, &labels, k)?;
        for c in 0..k {
            if ens.tree_count() >= budget {
                break;
            }
            let gc: Vec<f64> = (0..x.rows).map(|i| g[i * k + c]).collect();
            let hc: Vec<f64> = (0..x.rows).map(|i| h[i * k + c]).collect();
            let tree = grow_tree(&cols, x, &gc, &hc, config);
            for i in 0..x.rows {
                margins[i * k + c] += tree.predict(x.row(i));
            }
            ens.push(c, tree);
        }
        log.push(RoundLog {
            round,
            trees: ens.tree_count(),
            train_loss: log_loss(&margins, &labels, k),
        });
    }
    Ok((ens, log))
}
