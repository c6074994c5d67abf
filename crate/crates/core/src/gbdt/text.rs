//! Text model format.
//!
//! ```text
//! RXGB-GBDT v1
//! feature_dim=1024
//! class_count=10
//! max_trees=20
//! max_depth=10
//! learning_rate=0.3
//! reg_lambda=1.0
//! reg_gamma=0.0
//! min_child_weight=1.0
//! budget_mode=total_trees
//! base_score=0.0 0.0 ...
//! trees=2
//! (tree class=0 (split f=12 t=0.5 d=L (leaf w=-0.1) (leaf w=0.2)))
//! (tree class=1 (leaf w=0.0))
//! ```
//!
//! Reals are written in shortest round-trip decimal, so reading back gives
//! the same bits. `d=` is the NaN direction (`L` or `R`); a split sends
//! `x[f] < t` to its first child.

use std::fmt::Write as _;

use super::{BudgetMode, Direction, GbdtConfig, TreeEnsemble, TreeNode};
use crate::error::{Error, Result};

pub const MODEL_HEADER: &str = "RXGB-GBDT";
pub const MODEL_VERSION: u32 = 1;

fn write_node(out: &mut String, t: &TreeNode) {
    match t {
        TreeNode::Leaf { weight } => {
            let _ = write!(out, "(leaf w={:?})", weight);
        }
        TreeNode::Split {
            feature,
            threshold,
            default,
            left,
            right,
        } => {
            let d = if *default == Direction::Left { 'L' } else { 'R' };
            let _ = write!(out, "(split f={} t={:?} d={} ", feature, threshold, d);
            write_node(out, left);
            out.push(' ');
            write_node(out, right);
            out.push(')');
        }
    }
}

pub(super) fn write_model(e: &TreeEnsemble) -> String {
    let c = &e.config;
    let mut s = String::new();
    let _ = writeln!(s, "{} v{}", MODEL_HEADER, MODEL_VERSION);
    let _ = writeln!(s, "feature_dim={}", e.feature_dim);
    let _ = writeln!(s, "class_count={}", c.class_count);
    let _ = writeln!(s, "max_trees={}", c.max_trees);
    let _ = writeln!(s, "max_depth={}", c.max_depth);
    let _ = writeln!(s, "learning_rate={:?}", c.learning_rate);
    let _ = writeln!(s, "reg_lambda={:?}", c.reg_lambda);
    let _ = writeln!(s, "reg_gamma={:?}", c.reg_gamma);
    let _ = writeln!(s, "min_child_weight={:?}", c.min_child_weight);
    let _ = writeln!(s, "budget_mode={}", c.budget_mode.name());
    let base: Vec<String> = e.base_score.iter().map(|b| format!("{:?}", b)).collect();
    let _ = writeln!(s, "base_score={}", base.join(" "));
    let _ = writeln!(s, "trees={}", e.tree_count());
    for (class, t) in e.trees() {
        let _ = write!(s, "(tree class={} ", class);
        write_node(&mut s, t);
        s.push_str(")\n");
    }
    s
}

fn err(line: usize, col: usize, detail: impl Into<String>) -> Error {
    Error::format("GBDT model", format!("line {}, column {}", line, col), detail)
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn col(&self) -> usize {
        self.pos + 1
    }

    fn skip_ws(&mut self) {
        while self.s[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        self.skip_ws();
        if self.s[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(err(self.line, self.col(), format!("expected `{}`", lit)))
        }
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let rest = &self.s[self.pos..];
        let end = rest.find([' ', '(', ')']).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.skip_ws();
        let col = self.col();
        let w = self.word();
        let v = w
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| err(self.line, col, format!("expected `{}=`, found `{}`", key, w)))?;
        v.parse()
            .map_err(|_| err(self.line, col, format!("bad value `{}` for {}", v, key)))
    }

    fn node(&mut self, depth: usize) -> Result<TreeNode> {
        if depth > 64 {
            return Err(err(self.line, self.col(), "tree nesting too deep"));
        }
        self.expect("(")?;
        let col = self.col();
        match self.word() {
            "leaf" => {
                let weight: f64 = self.field("w")?;
                self.expect(")")?;
                Ok(TreeNode::Leaf { weight })
            }
            "split" => {
                let feature: usize = self.field("f")?;
                let threshold: f64 = self.field("t")?;
                let dcol = self.col();
                let default = match self.field::<String>("d")?.as_str() {
                    "L" => Direction::Left,
                    "R" => Direction::Right,
                    other => return Err(err(self.line, dcol, format!("direction `{}` is not L or R", other))),
                };
                let left = Box::new(self.node(depth + 1)?);
                let right = Box::new(self.node(depth + 1)?);
                self.expect(")")?;
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    default,
                    left,
                    right,
                })
            }
            other => Err(err(self.line, col, format!("unknown node kind `{}`", other))),
        }
    }
}

pub(super) fn read_model(text: &str) -> Result<TreeEnsemble> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, 1, "empty model file"))?;
    let version = header
        .strip_prefix(MODEL_HEADER)
        .and_then(|r| r.strip_prefix(" v"))
        .ok_or_else(|| err(1, 1, format!("expected header `{} v{}`", MODEL_HEADER, MODEL_VERSION)))?;
    if version != MODEL_VERSION.to_string() {
        return Err(err(1, MODEL_HEADER.len() + 2, format!("unsupported version `{}`", version)));
    }
    let mut kv = |key: &str| -> Result<(usize, String)> {
        let (n, l) = lines.next().ok_or_else(|| err(0, 1, format!("missing `{}`", key)))?;
        let v = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| err(n, 1, format!("expected `{}=`", key)))?;
        Ok((n, v.to_string()))
    };
    fn num<T: std::str::FromStr>((n, v): (usize, String), key: &str) -> Result<T> {
        v.parse()
            .map_err(|_| err(n, key.len() + 2, format!("bad value `{}` for {}", v, key)))
    }
    let feature_dim: usize = num(kv("feature_dim")?, "feature_dim")?;
    let class_count: usize = num(kv("class_count")?, "class_count")?;
    let max_trees: usize = num(kv("max_trees")?, "max_trees")?;
    let max_depth: usize = num(kv("max_depth")?, "max_depth")?;
    let learning_rate: f64 = num(kv("learning_rate")?, "learning_rate")?;
    let reg_lambda: f64 = num(kv("reg_lambda")?, "reg_lambda")?;
    let reg_gamma: f64 = num(kv("reg_gamma")?, "reg_gamma")?;
    let min_child_weight: f64 = num(kv("min_child_weight")?, "min_child_weight")?;
    let (n, mode) = kv("budget_mode")?;
    let budget_mode = BudgetMode::parse(&mode).ok_or_else(|| err(n, 13, format!("unknown budget mode `{}`", mode)))?;
    let (n, base) = kv("base_score")?;
    let base_score = base
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|w| w.parse::<f64>().map_err(|_| err(n, 12, format!("bad base score `{}`", w))))
        .collect::<Result<Vec<_>>>()?;
    let tree_count: usize = num(kv("trees")?, "trees")?;
    let config = GbdtConfig {
        max_trees,
        max_depth,
        learning_rate,
        reg_lambda,
        reg_gamma,
        min_child_weight,
        class_count,
        budget_mode,
    };
    let mut trees = Vec::with_capacity(tree_count);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut c = Cursor { s: line, pos: 0, line: n };
        c.expect("(tree")?;
        let class: usize = c.field("class")?;
        let node = c.node(0)?;
        c.expect(")")?;
        c.skip_ws();
        if c.pos != line.len() {
            return Err(err(n, c.col(), "trailing characters"));
        }
        trees.push((class, node));
    }
    if trees.len() != tree_count {
        return Err(err(0, 1, format!("header declares {} trees, found {}", tree_count, trees.len())));
    }
    TreeEnsemble::from_parts(base_score, trees, feature_dim, config)
        .map_err(|e| Error::format("GBDT model", "trees", e.to_string()))
}
