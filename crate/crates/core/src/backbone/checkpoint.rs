//! Self-describing binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"RXGBCKPT"  u32 version
//! u32 len, spec text        (NetworkSpec::to_text)
//! u32 len, options text     (key=value lines)
//! u64 seed  u32 epoch  u32 record_count
//! record*: u16 name_len, name, u8 dtype (1 = f64), u8 ndim, u64 dims[ndim], f64 payload
//! ```
//!
//! Records are parameters, then their momentum buffers (`<name>.velocity`),
//! then batch-norm running statistics, each group in network order.

use std::path::Path;

use super::layers::ModelOptions;
use super::model::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RXGBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub epoch: u32,
}

fn options_text(o: &ModelOptions) -> String {
    format!(
        "weight_scaling={}\nbn_eps={:?}\nbn_momentum={:?}\n",
        o.weight_scaling, o.bn_eps, o.bn_momentum
    )
}

fn parse_options(text: &str) -> Result<ModelOptions> {
    let bad = |line: &str, d: &str| Error::format("checkpoint options", line.to_string(), d.to_string());
    let mut o = ModelOptions::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line, "expected key=value"))?;
        match k {
            "weight_scaling" => o.weight_scaling = v.parse().map_err(|_| bad(line, "expected true/false"))?,
            "bn_eps" => o.bn_eps = v.parse().map_err(|_| bad(line, "expected a number"))?,
            "bn_momentum" => o.bn_momentum = v.parse().map_err(|_| bad(line, "expected a number"))?,
            _ => return Err(bad(line, "unknown key")),
        }
    }
    Ok(o)
}

fn put_blob(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                "checkpoint",
                format!("byte {}", self.pos),
                format!("truncated while reading {}", what),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, len: usize, what: &str) -> Result<&'a str> {
        let at = self.pos;
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::format("checkpoint", format!("byte {}", at), format!("{} is not UTF-8", what)))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut net = self.network.clone();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_blob(&mut out, &net.spec().to_text());
        put_blob(&mut out, &options_text(net.options()));
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let count = 2 * net.params().len() + net.buffers_mut().len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        let params = net.params();
        for p in &params {
            put_record(&mut out, &p.name, p.value.shape(), p.value.data());
        }
        for p in &params {
            put_record(&mut out, &format!("{}.velocity", p.name), p.velocity.shape(), p.velocity.data());
        }
        for b in net.buffers_mut() {
            put_record(&mut out, &b.name, &[b.values.len()], b.values);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "byte 0", "bad magic (expected RXGBCKPT)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                "byte 8",
                format!("unsupported version {} (expected {})", version, CHECKPOINT_VERSION),
            ));
        }
        let n = r.u32("spec length")? as usize;
        let spec = NetworkSpec::parse(r.text(n, "spec")?)?;
        let n = r.u32("options length")? as usize;
        let opts = parse_options(r.text(n, "options")?)?;
        let seed = r.u64("seed")?;
        let epoch = r.u32("epoch")?;
        let count = r.u32("record count")? as usize;

        let mut net = Network::build(&spec, opts, seed)?;
        let mut records = std::collections::BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let nl = r.u16("record name length")? as usize;
            let name = r.text(nl, "record name")?.to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F64 {
                return Err(Error::format("checkpoint", format!("byte {}", at), format!("{}: unknown dtype {}", name, dtype)));
            }
            let nd = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(nd);
            for _ in 0..nd {
                shape.push(r.u64("dim")? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format("checkpoint", format!("byte {}", at), "record too large"))?, &name)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if records.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::format("checkpoint", format!("byte {}", at), format!("duplicate record {}", name)));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", format!("byte {}", r.pos), "trailing bytes"));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = records
                .remove(name)
                .ok_or_else(|| Error::format("checkpoint", name.to_string(), "missing record"))?;
            if t.shape() != shape {
                return Err(Error::format(
                    "checkpoint",
                    name.to_string(),
                    format!("shape {:?}, model expects {:?}", t.shape(), shape),
                ));
            }
            Ok(t)
        };
        for p in net.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = take(&p.name, &shape)?;
            p.velocity = take(&format!("{}.velocity", p.name), &shape)?;
        }
        for b in net.buffers_mut() {
            let len = b.values.len();
            *b.values = take(&b.name, &[len])?.into_data();
        }
        if let Some(name) = records.keys().next() {
            return Err(Error::format("checkpoint", name.clone(), "record not used by the model"));
        }
        Ok(Checkpoint { network: net, seed, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `reactxgb train` first".into(),
            },
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
