//! Builds the IDX files from a per-class JSON image dump
//! (`<dir>/<class>.json` holding `{"data": [[784 pixels], ...]}`).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Split, CLASS_COUNT};
use super::idx::IdxFile;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ImportOptions {
    /// Images per class assigned to the training split; the rest go to test.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            train_per_class: 6000,
            test_per_class: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct ImportSummary {
    pub train: usize,
    pub test: usize,
    pub skipped: usize,
}

fn read_class(path: &Path, side: usize) -> Result<(Vec<Vec<u8>>, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format("JSON image dump", path.display().to_string(), e.to_string()))?;
    let rows = v
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| Error::format("JSON image dump", path.display().to_string(), "missing `data` array"))?;
    let mut out = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    for (i, r) in rows.iter().enumerate() {
        let px = r.as_array().map(|a| a.as_slice()).unwrap_or(&[]);
        if px.len() != side {
            skipped += 1;
            continue;
        }
        let img = px
            .iter()
            .map(|p| p.as_u64().filter(|&x| x <= 255).map(|x| x as u8))
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| {
                Error::format(
                    "JSON image dump",
                    format!("{} row {}", path.display(), i),
                    "pixels must be integers in 0..=255",
                )
            })?;
        out.push(img);
    }
    Ok((out, skipped))
}

/// Splits each class into train/test by position, shuffles each split with
/// `seed`, and writes the four uncompressed IDX files into `dest`.
pub fn import_json(src: &Path, dest: &Path, opts: &ImportOptions) -> Result<ImportSummary> {
    const SIDE: usize = 28;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut skipped = 0;
    for class in 0..CLASS_COUNT {
        let (imgs, s) = read_class(&src.join(format!("{}.json", class)), SIDE * SIDE)?;
        skipped += s;
        let need = opts.train_per_class + opts.test_per_class;
        if imgs.len() < need {
            return Err(Error::format(
                "JSON image dump",
                format!("class {}", class),
                format!("{} usable images, need {}", imgs.len(), need),
            ));
        }
        skipped += imgs.len() - need;
        for (i, img) in imgs.into_iter().take(need).enumerate() {
            if i < opts.train_per_class {
                train.push((img, class as u8));
            } else {
                test.push((img, class as u8));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    for (split, set) in [(Split::Train, &train), (Split::Test, &test)] {
        let images = IdxFile::images(
            set.len() as u32,
            SIDE as u32,
            SIDE as u32,
            set.iter().flat_map(|(img, _)| img.iter().copied()).collect(),
        );
        let labels = IdxFile::labels(set.iter().map(|(_, l)| *l).collect());
        crate::backbone::write_atomic(&dest.join(split.images_file()), &images.to_bytes())?;
        crate::backbone::write_atomic(&dest.join(split.labels_file()), &labels.to_bytes())?;
    }
    Ok(ImportSummary {
        train: train.len(),
        test: test.len(),
        skipped,
    })
}
