//! Drives the `reactxgb` binary.

use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_reactxgb");

pub fn reactxgb(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RXGB_DATA_DIR", data_dir)
        .output()
        .expect("spawn reactxgb")
}

/// Artifacts whose bytes must not depend on thread count.
pub const DETERMINISTIC_FILES: [&str; 4] = ["checkpoint.ckpt", "features-train.bin", "features-test.bin", "gbdt.model"];

/// A one-epoch pipeline of the tiny network on synthetic data, written to
/// `root/tag`.
pub fn small_pipeline(root: &Path, threads: usize, tag: &str) -> Output {
    let data = root.join("data");
    if !data.exists() {
        super::fixtures::write_dataset(&data, 600, 100, 21);
    }
    let spec = root.join("tiny.spec");
    std::fs::write(&spec, super::fixtures::TINY_SPEC).unwrap();
    let out = root.join(tag);
    reactxgb(
        &data,
        &[
            "pipeline",
            "--net.spec",
            spec.to_str().unwrap(),
            "--data.subset",
            "512",
            "--data.val_count",
            "64",
            "--train.epochs",
            "1",
            "--train.batch_size",
            "32",
            "--gbdt.max_depth",
            "4",
            "--threads",
            &threads.to_string(),
            "--out",
            out.to_str().unwrap(),
        ],
    )
}
