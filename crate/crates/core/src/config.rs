//! Flat `key = value` run configuration with dotted keys.
//!
//! Every key has a default; files and command-line overrides may only set
//! known keys. The resolved configuration is written into each output
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::backbone::{ModelOptions, NetworkSpec, TrainConfig};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::gbdt::{BudgetMode, GbdtConfig};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for initialisation, shuffling and augmentation"),
    ("threads", "1", "worker threads (0 = one per core); results do not depend on it"),
    ("net.spec", "reference", "`reference`, `reference-half` or a spec file; suffix `:no-head` drops the FC head"),
    ("net.bn_momentum", "0.1", "batch-norm running-statistics momentum"),
    ("net.bn_eps", "1e-5", "batch-norm epsilon"),
    ("binary.weight_scaling", "true", "per-output-channel mean|w| scale on binary convolutions"),
    ("train.epochs", "120", "stage-1 epochs"),
    ("train.batch_size", "128", "stage-1 mini-batch size"),
    ("train.lr", "0.5", "peak learning rate of the backbone, cosine-decayed per step to 0"),
    ("train.head_lr", "0.001", "peak learning rate of the FC head, same schedule"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.weight_decay", "1e-5", "L2 decay on real-valued conv/FC weights"),
    ("train.eval_batch", "500", "batch size for evaluation and extraction"),
    ("data.dir", "data", "dataset cache directory (RXGB_DATA_DIR overrides)"),
    ("data.augment", "false", "pad-4 random crop and horizontal flip during stage 1"),
    ("data.normalize", "symmetric", "`symmetric` (p/127.5 - 1) or `unit` (p/255)"),
    ("data.subset", "0", "use only the first N training images (0 = all)"),
    ("data.test_subset", "0", "use only the first N test images (0 = all)"),
    ("data.val_count", "5000", "training images held out (from the end) for model selection"),
    (
        "data.mirrors",
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/,https://storage.googleapis.com/tensorflow/tf-keras-datasets/",
        "comma-separated download mirrors",
    ),
    ("gbdt.max_trees", "20", "tree budget (see gbdt.budget_mode)"),
    ("gbdt.max_depth", "10", "maximum tree depth"),
    ("gbdt.learning_rate", "0.3", "shrinkage folded into leaf weights"),
    ("gbdt.reg_lambda", "1.0", "L2 penalty on leaf weights"),
    ("gbdt.reg_gamma", "0.0", "minimum split gain"),
    ("gbdt.min_child_weight", "1.0", "minimum hessian sum per child"),
    ("gbdt.budget_mode", "total_trees", "`total_trees` (all class trees) or `rounds` (one tree per class per round)"),
    ("gbdt.compliance", "true", "hold the ensemble to 20 trees and depth 10"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

pub fn is_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_key(key) {
            return Err(Error::Config(format!("unknown key `{}`", key)));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", origin, i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {}", origin, i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{} = `{}` is not a valid value", key, v)))
    }

    fn parse_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(Error::Config(format!("{} = `{}` is not true/false", key, v))),
        }
    }

    /// Checks and converts every key.
    pub fn resolve(&self) -> Result<Resolved> {
        let seed: u64 = self.parse("seed")?;
        let spec = resolve_spec(self.get("net.spec"))?;
        let model = ModelOptions {
            weight_scaling: self.parse_bool("binary.weight_scaling")?,
            bn_eps: self.parse("net.bn_eps")?,
            bn_momentum: self.parse("net.bn_momentum")?,
        };
        if !(model.bn_eps > 0.0) || !(0.0..=1.0).contains(&model.bn_momentum) {
            return Err(Error::Config("net.bn_eps must be > 0 and net.bn_momentum in [0, 1]".into()));
        }
        let normalization = Normalization::parse(self.get("data.normalize"))
            .ok_or_else(|| Error::Config(format!("data.normalize = `{}` is not symmetric/unit", self.get("data.normalize"))))?;
        let train = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            lr: self.parse("train.lr")?,
            head_lr: self.parse("train.head_lr")?,
            momentum: self.parse("train.momentum")?,
            weight_decay: self.parse("train.weight_decay")?,
            seed,
            augment: self.parse_bool("data.augment")?,
            normalization,
            eval_batch: self.parse("train.eval_batch")?,
        };
        if train.batch_size == 0 || train.eval_batch == 0 {
            return Err(Error::Config("train.batch_size and train.eval_batch must be at least 1".into()));
        }
        for (k, v) in [("train.lr", train.lr), ("train.head_lr", train.head_lr)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{} = {} must be finite and >= 0", k, v)));
            }
        }
        if !(0.0..1.0).contains(&train.momentum) {
            return Err(Error::Config(format!("train.momentum = {} must be in [0, 1)", train.momentum)));
        }
        if !(train.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        let budget_mode = BudgetMode::parse(self.get("gbdt.budget_mode")).ok_or_else(|| {
            Error::Config(format!("gbdt.budget_mode = `{}` is not total_trees/rounds", self.get("gbdt.budget_mode")))
        })?;
        let gbdt = GbdtConfig {
            max_trees: self.parse("gbdt.max_trees")?,
            max_depth: self.parse("gbdt.max_depth")?,
            learning_rate: self.parse("gbdt.learning_rate")?,
            reg_lambda: self.parse("gbdt.reg_lambda")?,
            reg_gamma: self.parse("gbdt.reg_gamma")?,
            min_child_weight: self.parse("gbdt.min_child_weight")?,
            class_count: spec.class_count,
            budget_mode,
        };
        let compliance = self.parse_bool("gbdt.compliance")?;
        gbdt.validate(compliance)?;
        let opt = |k: &str| -> Result<Option<usize>> {
            let n: usize = self.parse(k)?;
            Ok((n > 0).then_some(n))
        };
        Ok(Resolved {
            seed,
            threads: self.parse("threads")?,
            spec,
            model,
            train,
            gbdt,
            compliance,
            data_dir: crate::data::fetch::resolve_data_dir(Path::new(self.get("data.dir"))),
            subset: opt("data.subset")?,
            test_subset: opt("data.test_subset")?,
            val_count: self.parse("data.val_count")?,
            mirrors: self
                .get("data.mirrors")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        })
    }
}

/// `reference`, `reference-half` or a path, with an optional `:no-head` suffix.
pub fn resolve_spec(name: &str) -> Result<NetworkSpec> {
    match name.strip_suffix(":no-head") {
        Some(base) => Ok(NetworkSpec::resolve(base)?.without_head()),
        None => NetworkSpec::resolve(name),
    }
}

/// Typed view of a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Resolved {
    pub seed: u64,
    pub threads: usize,
    pub spec: NetworkSpec,
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub gbdt: GbdtConfig,
    pub compliance: bool,
    pub data_dir: PathBuf,
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub val_count: usize,
    pub mirrors: Vec<String>,
}
