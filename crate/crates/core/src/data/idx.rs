use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A decoded IDX container: big-endian magic, one u32 per dimension, then
/// `Π dims` unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn images(count: u32, rows: u32, cols: u32, payload: Vec<u8>) -> Self {
        IdxFile {
            magic: IMAGES_MAGIC,
            dims: vec![count, rows, cols],
            payload,
        }
    }

    pub fn labels(payload: Vec<u8>) -> Self {
        IdxFile {
            magic: LABELS_MAGIC,
            dims: vec![payload.len() as u32],
            payload,
        }
    }

    pub fn count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0) as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

fn bad(offset: usize, detail: impl Into<String>) -> Error {
    Error::format("IDX file", format!("byte {}", offset), detail)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(bad(0, format!("{} bytes is too short for a magic number", bytes.len())));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndim = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        _ => {
            return Err(bad(
                0,
                format!("magic {:#010x} is neither {:#010x} nor {:#010x}", magic, IMAGES_MAGIC, LABELS_MAGIC),
            ))
        }
    };
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad(bytes.len(), format!("header needs {} bytes", header)));
    }
    let dims: Vec<u32> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()))
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| bad(4, "dimension product overflows"))?;
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(bad(
            header,
            format!("dims {:?} declare {} payload bytes, found {}", dims, expected, actual),
        ));
    }
    Ok(IdxFile {
        magic,
        dims,
        payload: bytes[header..].to_vec(),
    })
}
