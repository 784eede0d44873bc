//! `FMAP` feature-map files: magic, version 1, `C H W downsample` as u32,
//! then `C·H·W` f64 values, channel-major, little-endian.

use std::path::Path;

use super::binio::{put_f64s, put_u32, Reader};
use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

const MAGIC: &[u8; 4] = b"FMAP";
const VERSION: u32 = 1;
pub const FMAP_HEADER_BYTES: usize = 24;

pub fn encode_feature_map(fm: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(FMAP_HEADER_BYTES + 8 * fm.tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [fm.channels(), fm.height(), fm.width(), fm.downsample] {
        put_u32(&mut out, v)?;
    }
    put_f64s(&mut out, fm.tensor.data());
    Ok(out)
}

pub fn decode_feature_map(bytes: &[u8], name: &str) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes, name);
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic (expected FMAP)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let c = r.u32("channels")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let downsample = r.u32("downsample")? as usize;
    let expected = (c as u128 * h as u128 * w as u128) * 8 + FMAP_HEADER_BYTES as u128;
    if expected != bytes.len() as u128 {
        return Err(r.err(format!(
            "file is {} bytes, expected {expected} for {c}x{h}x{w}",
            bytes.len()
        )));
    }
    let data = r.f64s(c * h * w, "payload")?;
    Ok(FeatureMap {
        tensor: Tensor::from_vec(&[c, h, w], data)?,
        downsample,
    })
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature_map(fm)?).map_err(|e| Error::io(path, e))
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes, &path.display().to_string())
}
