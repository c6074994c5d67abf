use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::{parse_idx, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLASS_COUNT: usize = 10;
pub const IMAGE_SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn images_file(self) -> &'static str {
        match self {
            Split::Train => "train-images-idx3-ubyte",
            Split::Test => "t10k-images-idx3-ubyte",
        }
    }

    pub fn labels_file(self) -> &'static str {
        match self {
            Split::Train => "train-labels-idx1-ubyte",
            Split::Test => "t10k-labels-idx1-ubyte",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Pixel mapping applied when a batch tensor is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `p / 127.5 − 1`, onto [−1, 1].
    Symmetric,
    /// `p / 255`, onto [0, 1].
    Unit,
}

impl Normalization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symmetric" => Some(Normalization::Symmetric),
            "unit" => Some(Normalization::Unit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Normalization::Symmetric => "symmetric",
            Normalization::Unit => "unit",
        }
    }

    #[inline]
    pub fn normalize(self, p: u8) -> f64 {
        match self {
            Normalization::Symmetric => p as f64 / 127.5 - 1.0,
            Normalization::Unit => p as f64 / 255.0,
        }
    }

    pub fn denormalize(self, v: f64) -> u8 {
        let p = match self {
            Normalization::Symmetric => (v + 1.0) * 127.5,
            Normalization::Unit => v * 255.0,
        };
        p.round().clamp(0.0, 255.0) as u8
    }
}

/// Raw images (row-major u8) and labels of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub split: Split,
}

/// Padding added on each side before a random crop.
pub const CROP_PAD: usize = 4;

impl Dataset {
    pub fn from_idx(images: &IdxFile, labels: &IdxFile, split: Split) -> Result<Self> {
        if images.magic != IMAGES_MAGIC || labels.magic != LABELS_MAGIC {
            return Err(Error::format("IDX file", "byte 0", "expected an images file and a labels file"));
        }
        if images.dims[1..] != [IMAGE_SIDE as u32; 2] {
            return Err(Error::format(
                "IDX images",
                "byte 8",
                format!("images are {}×{}, expected {}×{}", images.dims[1], images.dims[2], IMAGE_SIDE, IMAGE_SIDE),
            ));
        }
        let n = images.count();
        if labels.count() != n {
            return Err(Error::format(
                "IDX file",
                "byte 4",
                format!("{} images but {} labels", n, labels.count()),
            ));
        }
        if let Some(i) = labels.payload.iter().position(|&l| l as usize >= CLASS_COUNT) {
            return Err(Error::format(
                "IDX labels",
                format!("byte {}", 8 + i),
                format!("label {} is outside 0..{}", labels.payload[i], CLASS_COUNT),
            ));
        }
        Ok(Dataset {
            images: images.payload.clone(),
            labels: labels.payload.clone(),
            height: images.dims[1] as usize,
            width: images.dims[2] as usize,
            split,
        })
    }

    /// Reads the uncompressed IDX pair of `split` from `dir`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let read = |name: &str| -> Result<IdxFile> {
            let path = dir.join(name);
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    let gz = dir.join(format!("{}.gz", name));
                    if gz.exists() {
                        super::fetch::gunzip_file(&gz, &path)?;
                        std::fs::read(&path).map_err(|e| Error::io(&path, e))?
                    } else {
                        return Err(Error::MissingArtifact {
                            path,
                            hint: "run `reactxgb fetch-data` (or `reactxgb import-json`) first".into(),
                        });
                    }
                }
                Err(e) => return Err(Error::io(&path, e)),
            };
            parse_idx(&bytes)
        };
        Self::from_idx(&read(split.images_file())?, &read(split.labels_file())?, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.pixels_per_image());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            height: self.height,
            width: self.width,
            split: self.split,
        }
    }

    /// The first `n` samples (all when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Splits off the last `k` samples: `(first len−k, last k)`.
    pub fn split_tail(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let cut = self.len() - k;
        (
            self.select(&(0..cut).collect::<Vec<_>>()),
            self.select(&(cut..self.len()).collect::<Vec<_>>()),
        )
    }

    pub fn labels_usize(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    /// `N×1×H×W` tensor of the given samples. With an RNG, each image is
    /// padded by [`CROP_PAD`] (background value), randomly cropped back and
    /// flipped horizontally with probability ½.
    pub fn tensor(&self, indices: &[usize], norm: Normalization, augment: Option<&mut ChaCha8Rng>) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(indices.len() * h * w);
        match augment {
            None => {
                for &i in indices {
                    data.extend(self.image(i).iter().map(|&p| norm.normalize(p)));
                }
            }
            Some(rng) => {
                let bg = norm.normalize(0);
                for &i in indices {
                    let img = self.image(i);
                    let dy = rng.gen_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                    let dx = rng.gen_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                    let flip = rng.gen_bool(0.5);
                    for y in 0..h as isize {
                        for x in 0..w as isize {
                            let sx = if flip { w as isize - 1 - x } else { x } + dx;
                            let sy = y + dy;
                            let inside = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                            data.push(if inside {
                                norm.normalize(img[sy as usize * w + sx as usize])
                            } else {
                                bg
                            });
                        }
                    }
                }
            }
        }
        Tensor::new(vec![indices.len(), 1, h, w], data).expect("length matches")
    }
}

/// RNG for `(seed, epoch, stream)`; streams separate shuffling from augmentation.
pub fn epoch_rng(seed: u64, epoch: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(4).wrapping_add(stream));
    rng
}

/// Sample order of one epoch: seeded Fisher–Yates when shuffling, identity otherwise.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut epoch_rng(seed, epoch, 0));
    }
    order
}

/// Consecutive batches of the epoch order; the final short batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batches", "batch_size must be at least 1"));
    }
    Ok(epoch_order(n, seed, epoch, shuffle)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect())
}
