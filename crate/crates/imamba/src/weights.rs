//! Model configs as JSON and weights as IMWT files.
//!
//! ```text
//! "IMWT"  u8 version (1)  32-byte SHA-256 of the config JSON  u32 record count
//! per record: u16 name length, UTF-8 name, IMTN tensor
//! ```
//!
//! Records follow the declaration order of the model's parameters. Loading
//! checks the hash against the config the caller expects, then every name
//! and extent against the model's declarations.

use std::fs;
use std::path::Path;

use imamba_core::config::ModelConfig;
use imamba_core::model::{Architecture, Model};
use imamba_core::nn::ParamStore;
use sha2::{Digest, Sha256};

use crate::imtn::{self, Reader};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"IMWT";
pub const VERSION: u8 = 1;

/// Canonical config text: pretty JSON with a trailing newline.
pub fn config_to_json(cfg: &ModelConfig) -> Result<String> {
    let mut s = serde_json::to_string_pretty(cfg)?;
    s.push('\n');
    Ok(s)
}

pub fn config_from_json(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    config_from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_config(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, config_to_json(cfg)?).map_err(|e| Error::io(path, e))
}

/// SHA-256 of the compact JSON encoding of `cfg`.
pub fn config_hash(cfg: &ModelConfig) -> Result<[u8; 32]> {
    let digest = Sha256::digest(serde_json::to_vec(cfg)?);
    let mut out = [0; 32];
    out.copy_from_slice(&digest);
    Ok(out)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_weights(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&config_hash(&model.config)?);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Malformed { what: "weights", detail: format!("name of {} bytes", name.len()) })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        imtn::encode_into(t, &mut out)?;
    }
    Ok(out)
}

/// Rebuilds a model of configuration `cfg` from an encoded weight file.
pub fn decode_weights(bytes: &[u8], cfg: &ModelConfig) -> Result<Model<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "weights header")?;
    let version = r.u8("weights header")?;
    if version != VERSION {
        return Err(Error::Version { format: "IMWT", version });
    }
    let hash = r.take(32, "weights header")?;
    let expected = config_hash(cfg)?;
    if hash != expected {
        return Err(Error::ConfigHash { file: hex(hash), expected: hex(&expected) });
    }
    let count = r.u32("weights header")? as usize;
    let mut named = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("record name")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|e| Error::Malformed { what: "record name", detail: e.to_string() })?;
        named.push((name.to_string(), r.tensor()?));
    }
    if r.remaining() > 0 {
        return Err(Error::Trailing(r.remaining()));
    }
    let specs = Architecture::new(cfg)?.specs;
    let params = ParamStore::from_named(&specs, named)?;
    Ok(Model::with_params(cfg.clone(), params)?)
}

pub fn save_weights(path: impl AsRef<Path>, model: &Model<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Model<f32>> {
    let path = path.as_ref();
    decode_weights(&fs::read(path).map_err(|e| Error::io(path, e))?, cfg)
}
