use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flate2::read::GzDecoder;
use md5::{Digest, Md5};

use super::dataset::Split;
use crate::error::{Error, Result};

/// Published MD5 digests of the four gzip distribution files.
pub const FILES: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte.gz", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"),
    ("train-labels-idx1-ubyte.gz", "25c81989df183df01b3e8a0aad5dffbe"),
    ("t10k-images-idx3-ubyte.gz", "bef4ecab320f06d8554ea6380940ec79"),
    ("t10k-labels-idx1-ubyte.gz", "bb300cfdad3c16e7a12a480ee83cd310"),
];

pub const DEFAULT_MIRRORS: [&str; 2] = [
    "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    "https://storage.googleapis.com/tensorflow/tf-keras-datasets/",
];

pub const DATA_DIR_ENV: &str = "RXGB_DATA_DIR";

/// `$RXGB_DATA_DIR` when set, else `fallback`.
pub fn resolve_data_dir(fallback: &Path) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| fallback.to_path_buf())
}

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

/// Decompresses a whole gzip stream; truncated or corrupt input is an error.
pub fn gunzip(bytes: &[u8], what: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::format("gzip stream", what.display().to_string(), e.to_string()))?;
    Ok(out)
}

pub(crate) fn gunzip_file(gz: &Path, dest: &Path) -> Result<()> {
    let bytes = std::fs::read(gz).map_err(|e| Error::io(gz, e))?;
    let raw = gunzip(&bytes, gz)?;
    crate::backbone::write_atomic(dest, &raw)
}

/// Exclusive marker file held for the lifetime of the guard.
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(path: PathBuf, timeout: Duration) -> Result<Lock> {
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Lock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > timeout {
                        return Err(Error::Network(format!(
                            "timed out waiting for {}; remove it if no other fetch is running",
                            path.display()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(200));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn download(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url)
        .timeout(Duration::from_secs(120))
        .call()
        .map_err(|e| Error::Network(format!("{}: {}", url, e)))?;
    let mut body = Vec::new();
    resp.into_reader()
        .read_to_end(&mut body)
        .map_err(|e| Error::Network(format!("{}: {}", url, e)))?;
    Ok(body)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FetchOutcome {
    /// The file was already present with the expected digest.
    Cached(PathBuf),
    Downloaded(PathBuf),
}

/// Ensures `<dir>/<name>` holds a gzip file with digest `md5`, downloading
/// from the first mirror that answers, and writes the decompressed IDX
/// next to it.
pub fn fetch_one(dir: &Path, name: &str, md5: &str, mirrors: &[String]) -> Result<FetchOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gz = dir.join(name);
    let raw = dir.join(name.trim_end_matches(".gz"));
    let _lock = Lock::acquire(dir.join(format!("{}.lock", name)), Duration::from_secs(600))?;
    if let Ok(bytes) = std::fs::read(&gz) {
        let got = md5_hex(&bytes);
        if got == md5 {
            if !raw.exists() {
                gunzip_file(&gz, &raw)?;
            }
            return Ok(FetchOutcome::Cached(gz));
        }
        let _ = std::fs::remove_file(&gz);
    }
    let mut errors = Vec::new();
    for m in mirrors {
        let url = format!("{}/{}", m.trim_end_matches('/'), name);
        match download(&url) {
            Ok(bytes) => {
                let got = md5_hex(&bytes);
                if got != md5 {
                    errors.push(format!("{}: digest {} (expected {})", url, got, md5));
                    continue;
                }
                let unpacked = gunzip(&bytes, &gz)?;
                crate::backbone::write_atomic(&gz, &bytes)?;
                crate::backbone::write_atomic(&raw, &unpacked)?;
                return Ok(FetchOutcome::Downloaded(gz));
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    Err(Error::MissingArtifact {
        path: gz,
        hint: format!(
            "no mirror delivered it ({}); place the verified file there or run `reactxgb import-json`",
            errors.join("; ")
        ),
    })
}

/// Fetches all four files. Files already present and verified need no network.
pub fn fetch_all(dir: &Path, mirrors: &[String]) -> Result<Vec<FetchOutcome>> {
    FILES.iter().map(|(n, d)| fetch_one(dir, n, d, mirrors)).collect()
}

/// True when both uncompressed IDX files of every split are present.
pub fn dataset_present(dir: &Path) -> bool {
    [Split::Train, Split::Test]
        .iter()
        .all(|s| dir.join(s.images_file()).exists() && dir.join(s.labels_file()).exists())
}
