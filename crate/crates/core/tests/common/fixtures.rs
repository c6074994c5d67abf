//! Small networks and synthetic FashionMNIST-shaped data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reactxgb::backbone::{ModelOptions, Network, NetworkSpec};
use reactxgb::data::{parse_idx, Dataset, IdxFile, Split, IMAGE_SIDE};

pub const TINY_SPEC: &str = "reactxgb-net v1
input 1 28 28
classes 10
features 8
first_conv 4 kernel=3 stride=2 pad=2
normal 4
reduction 4 8 stride=2
global_pool
fc_head 10
";

/// Stem, one normal and one reduction block at `width` channels.
pub fn spec_with_width(width: usize) -> NetworkSpec {
    let text = TINY_SPEC
        .replace("features 8", &format!("features {}", 2 * width))
        .replace("first_conv 4", &format!("first_conv {}", width))
        .replace("normal 4", &format!("normal {}", width))
        .replace("reduction 4 8", &format!("reduction {} {}", width, 2 * width));
    NetworkSpec::parse(&text).unwrap()
}

pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec::parse(TINY_SPEC).unwrap()
}

pub fn tiny_net(seed: u64) -> Network {
    Network::build(&tiny_spec(), ModelOptions::default(), seed).unwrap()
}

/// Class `c` is a bright 7×7 patch at a class-specific place over noise.
pub fn synthetic_idx(n: usize, seed: u64) -> (IdxFile, IdxFile) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = IMAGE_SIDE;
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..10usize);
        labels.push(c as u8);
        let (y0, x0) = (2 + (c / 4) * 9, 1 + (c % 4) * 7);
        for y in 0..side {
            for x in 0..side {
                let inside = (y0..y0 + 7).contains(&y) && (x0..x0 + 7).contains(&x);
                pixels.push(if inside { rng.gen_range(180..=255) } else { rng.gen_range(0..60) });
            }
        }
    }
    (IdxFile::images(n as u32, side as u32, side as u32, pixels), IdxFile::labels(labels))
}

pub fn synthetic_dataset(n: usize, seed: u64, split: Split) -> Dataset {
    let (i, l) = synthetic_idx(n, seed);
    Dataset::from_idx(&i, &l, split).unwrap()
}

/// Uncompressed IDX train/test files in `dir`.
pub fn write_dataset(dir: &Path, train: usize, test: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for (split, n, s) in [(Split::Train, train, seed), (Split::Test, test, seed + 1)] {
        let (i, l) = synthetic_idx(n, s);
        std::fs::write(dir.join(split.images_file()), i.to_bytes()).unwrap();
        std::fs::write(dir.join(split.labels_file()), l.to_bytes()).unwrap();
    }
}

/// A valid FashionMNIST-shaped pair with `count` blank images.
pub fn canonical(count: u32) -> (Vec<u8>, Vec<u8>) {
    let images = IdxFile::images(count, 28, 28, vec![0; count as usize * 784]).to_bytes();
    let labels = IdxFile::labels((0..count).map(|i| (i % 10) as u8).collect()).to_bytes();
    (images, labels)
}

/// Parse and validate an images/labels pair.
pub fn load(images: &[u8], labels: &[u8]) -> reactxgb::Result<Dataset> {
    Dataset::from_idx(&parse_idx(images)?, &parse_idx(labels)?, Split::Train)
}

/// Twenty malformed images/labels pairs derived from a valid one.
pub fn corruptions() -> Vec<(&'static str, Vec<u8>, Vec<u8>)> {
    let (i, l) = canonical(30);
    let set = |b: &[u8], at: usize, v: &[u8]| {
        let mut b = b.to_vec();
        b[at..at + v.len()].copy_from_slice(v);
        b
    };
    vec![
        ("empty images", vec![], l.clone()),
        ("empty labels", i.clone(), vec![]),
        ("3-byte magic", i[..3].to_vec(), l.clone()),
        ("images magic 0x0804", set(&i, 0, &[0, 0, 8, 4]), l.clone()),
        ("labels magic 0x0802", i.clone(), set(&l, 0, &[0, 0, 8, 2])),
        ("little-endian magic", set(&i, 0, &[3, 8, 0, 0]), l.clone()),
        ("swapped files", l.clone(), i.clone()),
        ("both labels", l.clone(), l.clone()),
        ("truncated image header", i[..12].to_vec(), l.clone()),
        ("truncated label header", i.clone(), l[..6].to_vec()),
        ("image payload short by one", i[..i.len() - 1].to_vec(), l.clone()),
        ("image payload long by one", [&i[..], &[0]].concat(), l.clone()),
        ("label payload short by one", i.clone(), l[..l.len() - 1].to_vec()),
        ("label payload long by one", i.clone(), [&l[..], &[0]].concat()),
        ("image count off by one", set(&i, 4, &29u32.to_be_bytes()), l.clone()),
        ("rows 27", set(&i, 8, &27u32.to_be_bytes()), l.clone()),
        ("cols 0", set(&i, 12, &0u32.to_be_bytes()), l.clone()),
        ("overflowing dims", set(&set(&i, 4, &u32::MAX.to_be_bytes()), 8, &u32::MAX.to_be_bytes()), l.clone()),
        ("label 10", i.clone(), set(&l, 8 + 17, &[10])),
        ("label 255", i.clone(), set(&l, l.len() - 1, &[255])),
    ]
}

