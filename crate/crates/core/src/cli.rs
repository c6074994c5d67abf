//! The `reactxgb` command line.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::backbone::{
    accuracy, confusion, evaluate_fc, extract_features, infer_hybrid, train_stage1, write_atomic, Checkpoint,
    Network,
};
use crate::config::{is_key, resolve_spec, Resolved, RunConfig, KEYS};
use crate::cost::{diff_reports, gbdt_cost, network_cost, CostOptions};
use crate::data::{fetch, import_json, Dataset, FeatureMatrix, ImportOptions, Split};
use crate::error::{Error, Result};
use crate::gbdt::{train_ensemble, TreeEnsemble};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LAST_CHECKPOINT_FILE: &str = "last.ckpt";
pub const METRICS_FILE: &str = "metrics.log";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_FEATURES_FILE: &str = "features-train.bin";
pub const TEST_FEATURES_FILE: &str = "features-test.bin";
pub const GBDT_MODEL_FILE: &str = "gbdt.model";
pub const GBDT_LOG_FILE: &str = "gbdt.log";

#[derive(Parser, Debug)]
#[command(
    name = "reactxgb",
    version,
    about = "Binary CNN backbone with a gradient-boosted tree head",
    after_help = "Any configuration key can be overridden as `--key value`, e.g. `--train.epochs 1 --seed 7`.\nRun `reactxgb keys` to list them."
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lift the 20-tree / depth-10 bound on the tree head.
    #[arg(long, global = true)]
    no_compliance: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Head {
    Fc,
    Gbdt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Table,
    Tsv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download and verify the four dataset files.
    FetchData,
    /// Build the IDX files from a per-class JSON image dump.
    ImportJson {
        #[arg(long)]
        src: PathBuf,
    },
    /// Stage 1: train the backbone with the FC head.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write frozen features of the training and test images.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 2: fit the tree ensemble on training features.
    TrainGbdt {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 accuracy and confusion matrix on the test images.
    Eval {
        #[arg(long, value_enum)]
        head: Head,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tree model, required with `--head gbdt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// BOPs / FLOPs / parameter report of a network spec.
    Cost {
        #[arg(long, default_value = "reference")]
        spec: String,
        /// Second spec; prints the change from `--spec` to it.
        #[arg(long)]
        diff: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Also report the cost of a trained tree model.
        #[arg(long)]
        gbdt_model: Option<PathBuf>,
    },
    /// Train, extract, train-gbdt and eval in one run directory.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List configuration keys and defaults.
    Keys,
}

/// Splits `--key value` / `--key=value` overrides for configuration keys off
/// the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if is_key(&key) {
            let value = match inline {
                Some(v) => v,
                None => it
                    .next()
                    .ok_or_else(|| Error::Config(format!("--{} needs a value", key)))?,
            };
            overrides.push((key, value));
        } else if key.contains('.') {
            return Err(Error::Config(format!("unknown key `{}`", key)));
        } else {
            rest.push(a);
        }
    }
    Ok((rest, overrides))
}

pub struct Context {
    pub config: RunConfig,
    pub resolved: Resolved,
}

impl Context {
    fn new(config: RunConfig) -> Result<Self> {
        let resolved = config.resolve()?;
        Ok(Context { config, resolved })
    }

    fn run_dir(&self, out: Option<PathBuf>) -> Result<PathBuf> {
        let dir = out.unwrap_or_else(|| {
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{}-seed{}", ts, self.resolved.seed))
        });
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(&dir.join(CONFIG_FILE), self.config.to_text().as_bytes())?;
        Ok(dir)
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

fn require_dataset(r: &Resolved) -> Result<()> {
    for s in [Split::Train, Split::Test] {
        for f in [s.images_file(), s.labels_file()] {
            let p = r.data_dir.join(f);
            if !p.exists() && !r.data_dir.join(format!("{}.gz", f)).exists() {
                return Err(Error::MissingArtifact {
                    path: p,
                    hint: "run `reactxgb fetch-data` (or `reactxgb import-json --src DIR`) first".into(),
                });
            }
        }
    }
    Ok(())
}

/// Stage-1 training and validation sets, and the test set, after subsetting.
pub fn load_splits(r: &Resolved) -> Result<(Dataset, Dataset, Dataset)> {
    let train_all = Dataset::load(&r.data_dir, Split::Train)?;
    let pool = match r.subset {
        Some(n) => train_all.head(n),
        None => train_all,
    };
    if r.val_count >= pool.len() {
        return Err(Error::Config(format!(
            "data.val_count {} leaves no training images out of {}",
            r.val_count,
            pool.len()
        )));
    }
    let (train, val) = pool.split_tail(r.val_count);
    let test_all = Dataset::load(&r.data_dir, Split::Test)?;
    let test = match r.test_subset {
        Some(n) => test_all.head(n),
        None => test_all,
    };
    Ok((train, val, test))
}

fn log(msg: &str) {
    eprintln!("{}", msg);
}

pub fn cmd_train(ctx: &Context, dir: &Path) -> Result<Checkpoint> {
    let r = &ctx.resolved;
    require_dataset(r)?;
    let (train, val, _) = load_splits(r)?;
    let net = Network::build(&r.spec, r.model, r.seed)?;
    if !net.has_head() {
        return Err(Error::Config("net.spec has no fc_head; stage 1 needs one".into()));
    }
    log(&format!(
        "train: {} images, {} validation, {} epochs, batch {}",
        train.len(),
        val.len(),
        r.train.epochs,
        r.train.batch_size
    ));
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut io_err = None;
    let outcome = train_stage1(net, &train, &val, &r.train, Some(&dir.join(LAST_CHECKPOINT_FILE)), |m| {
        let line = m.to_line();
        log(&line);
        if let Err(e) = writeln!(metrics_file, "{}", line) {
            io_err.get_or_insert(Error::io(&metrics_path, e));
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    outcome.best.save(&dir.join(CHECKPOINT_FILE))?;
    outcome.last.save(&dir.join(LAST_CHECKPOINT_FILE))?;
    log(&format!("train: best epoch {} -> {}", outcome.best_epoch, dir.join(CHECKPOINT_FILE).display()));
    Ok(outcome.best)
}

pub fn cmd_extract(ctx: &Context, checkpoint: &Path, dir: &Path) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let r = &ctx.resolved;
    require(checkpoint, "run `reactxgb train` first")?;
    require_dataset(r)?;
    let ck = Checkpoint::load(checkpoint)?;
    let (train, _, test) = load_splits(r)?;
    let norm = r.train.normalization;
    let ftrain = extract_features(&ck.network, &train, norm, r.train.eval_batch)?;
    ftrain.save(&dir.join(TRAIN_FEATURES_FILE))?;
    let ftest = extract_features(&ck.network, &test, norm, r.train.eval_batch)?;
    ftest.save(&dir.join(TEST_FEATURES_FILE))?;
    log(&format!(
        "extract: {}x{} train, {}x{} test features -> {}",
        ftrain.rows,
        ftrain.cols,
        ftest.rows,
        ftest.cols,
        dir.display()
    ));
    Ok((ftrain, ftest))
}

pub fn cmd_train_gbdt(ctx: &Context, features: &Path, dir: &Path) -> Result<TreeEnsemble> {
    let r = &ctx.resolved;
    require(features, "run `reactxgb extract` first")?;
    let x = FeatureMatrix::load(features)?;
    let (ens, rounds) = train_ensemble(&x, &r.gbdt)?;
    let mut text = String::new();
    for l in &rounds {
        let _ = writeln!(text, "round={} trees={} train_loss={:.9}", l.round, l.trees, l.train_loss);
    }
    log(text.trim_end());
    write_atomic(&dir.join(GBDT_LOG_FILE), text.as_bytes())?;
    ens.save(&dir.join(GBDT_MODEL_FILE))?;
    log(&format!("train-gbdt: {} trees -> {}", ens.tree_count(), dir.join(GBDT_MODEL_FILE).display()));
    Ok(ens)
}

/// Top-1 accuracy and confusion matrix of the chosen head on the test set.
pub fn cmd_eval(ctx: &Context, gbdt: bool, checkpoint: &Path, model: Option<&Path>) -> Result<(f64, String)> {
    let r = &ctx.resolved;
    require(checkpoint, "run `reactxgb train` first")?;
    let model = if gbdt {
        let m = model.ok_or_else(|| Error::Config("--head gbdt needs --model".into()))?;
        require(m, "run `reactxgb train-gbdt` first")?;
        Some(TreeEnsemble::load(m)?)
    } else {
        None
    };
    require_dataset(r)?;
    let ck = Checkpoint::load(checkpoint)?;
    let (_, _, test) = load_splits(r)?;
    let norm = r.train.normalization;
    let (preds, k) = match &model {
        None => (evaluate_fc(&ck.network, &test, norm, r.train.eval_batch)?.1, ck.network.spec().class_count),
        Some(ens) => {
            let backbone = ck.network.without_head();
            let idx: Vec<usize> = (0..test.len()).collect();
            let mut preds = Vec::with_capacity(test.len());
            for chunk in idx.chunks(r.train.eval_batch) {
                preds.extend(infer_hybrid(&backbone, ens, &test.tensor(chunk, norm, None))?.0);
            }
            (preds, ens.class_count())
        }
    };
    let top1 = accuracy(&preds, &test.labels);
    let mut s = format!("head={} top1={:.4} n={}\nconfusion (rows = true class):\n", if gbdt { "gbdt" } else { "fc" }, top1, test.len());
    for row in confusion(&preds, &test.labels, k) {
        let cells: Vec<String> = row.iter().map(|c| format!("{:5}", c)).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    Ok((top1, s))
}

pub fn cmd_cost(spec: &str, diff: Option<&str>, tsv: bool, gbdt_model: Option<&Path>, weight_scaling: bool) -> Result<String> {
    let opts = CostOptions { weight_scaling };
    let a = network_cost(&resolve_spec(spec)?, &opts)?;
    let mut out = if tsv { a.to_tsv() } else { a.to_table() };
    if let Some(b) = diff {
        let b = network_cost(&resolve_spec(b)?, &opts)?;
        let d = diff_reports(&a, &b);
        out.push('\n');
        out.push_str(&if tsv { b.to_tsv() } else { b.to_table() });
        out.push('\n');
        out.push_str(&if tsv { d.to_tsv() } else { d.to_table() });
    }
    if let Some(m) = gbdt_model {
        let row = gbdt_cost(&TreeEnsemble::load(m)?);
        let _ = writeln!(
            out,
            "\ngbdt head (reported separately): compare_flops={} param_bits={} ({:.6} MB)",
            row.flops,
            row.param_bits,
            row.param_bits as f64 / 8.0 / crate::cost::BYTES_PER_MB
        );
    }
    Ok(out)
}

/// Accuracy summary of a pipeline run.
pub struct PipelineSummary {
    pub fc_top1: f64,
    pub gbdt_top1: f64,
    pub dir: PathBuf,
}

pub fn cmd_pipeline(ctx: &Context, dir: &Path) -> Result<PipelineSummary> {
    require_dataset(&ctx.resolved)?;
    cmd_train(ctx, dir)?;
    let ck = dir.join(CHECKPOINT_FILE);
    cmd_extract(ctx, &ck, dir)?;
    cmd_train_gbdt(ctx, &dir.join(TRAIN_FEATURES_FILE), dir)?;
    let (fc_top1, fc_report) = cmd_eval(ctx, false, &ck, None)?;
    let (gbdt_top1, gbdt_report) = cmd_eval(ctx, true, &ck, Some(&dir.join(GBDT_MODEL_FILE)))?;
    let summary = format!(
        "{}\n{}\nfc_top1={:.4}\ngbdt_top1={:.4}\ngap={:+.4}\n",
        fc_report,
        gbdt_report,
        fc_top1,
        gbdt_top1,
        gbdt_top1 - fc_top1
    );
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    print!("{}", summary);
    Ok(PipelineSummary {
        fc_top1,
        gbdt_top1,
        dir: dir.to_path_buf(),
    })
}

fn init_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Entry point; `args` excludes the program name.
pub fn run(args: Vec<String>) -> Result<()> {
    let (rest, overrides) = split_overrides(args)?;
    let cli = match Cli::try_parse_from(std::iter::once("reactxgb".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{}", e);
            return Ok(());
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            return Err(Error::Config(format!("usage: {}", first)));
        }
    };
    let mut config = RunConfig::default();
    if let Some(p) = &cli.config {
        config.apply_file(p)?;
    }
    for (k, v) in &overrides {
        config.set(k, v)?;
    }
    if cli.no_compliance {
        config.set("gbdt.compliance", "false")?;
    }
    let ctx = Context::new(config)?;
    init_threads(ctx.resolved.threads);
    match cli.command {
        Command::Keys => {
            for (k, d, doc) in KEYS {
                println!("{:<24} {:<12} {}", k, if d.len() > 12 { "(list)" } else { d }, doc);
            }
        }
        Command::FetchData => {
            let dir = &ctx.resolved.data_dir;
            for o in fetch::fetch_all(dir, &ctx.resolved.mirrors)? {
                match o {
                    fetch::FetchOutcome::Cached(p) => println!("cached {}", p.display()),
                    fetch::FetchOutcome::Downloaded(p) => println!("downloaded {}", p.display()),
                }
            }
        }
        Command::ImportJson { src } => {
            require(&src, "expected a directory holding 0.json .. 9.json")?;
            let s = import_json(&src, &ctx.resolved.data_dir, &ImportOptions::default())?;
            println!(
                "imported {} training and {} test images into {} ({} rows skipped)",
                s.train,
                s.test,
                ctx.resolved.data_dir.display(),
                s.skipped
            );
        }
        Command::Train { out } => {
            require_dataset(&ctx.resolved)?;
            let dir = ctx.run_dir(out)?;
            cmd_train(&ctx, &dir)?;
            println!("{}", dir.join(CHECKPOINT_FILE).display());
        }
        Command::Extract { checkpoint, out } => {
            require(&checkpoint, "run `reactxgb train` first")?;
            let dir = ctx.run_dir(out)?;
            cmd_extract(&ctx, &checkpoint, &dir)?;
            println!("{}", dir.display());
        }
        Command::TrainGbdt { features, out } => {
            require(&features, "run `reactxgb extract` first")?;
            let dir = ctx.run_dir(out)?;
            cmd_train_gbdt(&ctx, &features, &dir)?;
            println!("{}", dir.join(GBDT_MODEL_FILE).display());
        }
        Command::Eval { head, checkpoint, model } => {
            let (_, report) = cmd_eval(&ctx, matches!(head, Head::Gbdt), &checkpoint, model.as_deref())?;
            print!("{}", report);
        }
        Command::Cost {
            spec,
            diff,
            format,
            gbdt_model,
        } => {
            let out = cmd_cost(
                &spec,
                diff.as_deref(),
                matches!(format, Format::Tsv),
                gbdt_model.as_deref(),
                ctx.resolved.model.weight_scaling,
            )?;
            print!("{}", out);
        }
        Command::Pipeline { out } => {
            require_dataset(&ctx.resolved)?;
            let dir = ctx.run_dir(out)?;
            cmd_pipeline(&ctx, &dir)?;
        }
    }
    Ok(())
}

/// Parses a configuration from overrides alone (no subcommand), as the
/// library entry points expect.
pub fn context_from(overrides: &[(&str, &str)], compliance: bool) -> Result<Context> {
    let mut c = RunConfig::default();
    for (k, v) in overrides {
        c.set(k, v)?;
    }
    if !compliance {
        c.set("gbdt.compliance", "false")?;
    }
    Context::new(c)
}
