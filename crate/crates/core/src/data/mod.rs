//! FashionMNIST acquisition and IDX parsing, batching, and the frozen-feature
//! file passed from the backbone to the tree head.

mod dataset;
mod features;
pub mod fetch;
mod idx;
mod import;

pub use dataset::{batches, epoch_order, epoch_rng, Dataset, Normalization, Split, CLASS_COUNT, CROP_PAD, IMAGE_SIDE};
pub use features::{FeatureMatrix, FEATURE_HEADER_BYTES, FEATURE_MAGIC, FEATURE_VERSION};
pub use idx::{parse_idx, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
pub use import::{import_json, ImportOptions, ImportSummary};
