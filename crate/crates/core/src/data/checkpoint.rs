//! `SGNN` inference checkpoints.
//!
//! Layout: magic, version u32 = 1, u32-length-prefixed JSON [`ModelConfig`],
//! then every parameter in [`Model::params`] order as
//! `(name_len u32, name, rank u32, dims u32…, f64 payload)`. Optimizer
//! moments are not stored.

use std::path::Path;

use super::binio::{put_f64s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::sgnn::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"SGNN";
const VERSION: u32 = 1;

fn ckpt_err(param: Option<&str>, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        param: param.map(str::to_string),
        msg: msg.into(),
    }
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| ckpt_err(None, e.to_string()))?;
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(&config);
    for p in model.params() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.dims().len())?;
        for &d in p.dims() {
            put_u32(&mut out, d)?;
        }
        put_f64s(&mut out, p.value.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], name: &str) -> Result<Model> {
    let mut r = Reader::new(bytes, name);
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic (expected SGNN)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ckpt_err(
            None,
            format!("unknown checkpoint version {version}"),
        ));
    }
    let len = r.u32("config length")? as usize;
    let config_bytes = r.take(len, "config")?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| ckpt_err(None, format!("bad config JSON: {e}")))?;
    let mut model =
        Model::new(config, 0).map_err(|e| ckpt_err(None, format!("config rejected: {e}")))?;
    let expected: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();

    let mut params = model.params_mut();
    let mut index = 0;
    while r.remaining() > 0 {
        let name_len = r.u32("name length")? as usize;
        let pname = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| r.err("parameter name is not UTF-8"))?
            .to_string();
        let Some(slot) = params.get_mut(index) else {
            return Err(ckpt_err(
                Some(&pname),
                "extra parameter not implied by the config",
            ));
        };
        if slot.name != pname {
            let msg = if expected.contains(&pname) {
                format!("out of order: expected `{}` at position {index}", slot.name)
            } else {
                format!("unknown parameter (expected `{}`)", slot.name)
            };
            return Err(ckpt_err(Some(&pname), msg));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(ckpt_err(Some(&pname), format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        if dims != slot.dims() {
            return Err(ckpt_err(
                Some(&pname),
                format!(
                    "stored dims {dims:?} do not match config-implied {:?}",
                    slot.dims()
                ),
            ));
        }
        let values = r.f64s(slot.value.len(), "parameter payload")?;
        slot.value.data_mut().copy_from_slice(&values);
        index += 1;
    }
    if index < params.len() {
        return Err(ckpt_err(Some(&params[index].name), "missing parameter"));
    }
    drop(params);
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
