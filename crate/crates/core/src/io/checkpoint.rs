//! Self-describing parameter files: a text manifest holding the model
//! configuration, then named tensors with shape headers and 64-bit
//! little-endian payloads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::keyvalue::KeyValues;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ResidualMode, Variant};
use crate::tensor::Tensor;

const MAGIC: &str = "EDNET-CHECKPOINT 1";
const END_MANIFEST: &str = "end-manifest";

pub fn config_to_kv(config: &ModelConfig) -> KeyValues {
    let mut kv = KeyValues::default();
    let v = &config.variant;
    kv.insert("max_disparity", config.max_disparity);
    kv.insert("width_multiplier", config.width_multiplier);
    kv.insert("input_height", config.input_height);
    kv.insert("input_width", config.input_width);
    kv.insert("seed", config.seed);
    kv.insert("correlation", v.correlation);
    kv.insert("squeezed_concat", v.squeezed_concat);
    kv.insert("residual", v.residual.as_str());
    kv.insert("error_maps", v.error_maps.map(|b| if b { "1" } else { "0" }).join(","));
    kv
}

pub fn config_from_kv(kv: &KeyValues) -> Result<ModelConfig> {
    let flags = kv.get("error_maps").ok_or_else(|| Error::Format("missing key `error_maps`".into()))?;
    let parts: Vec<&str> = flags.split(',').map(str::trim).collect();
    if parts.len() != 3 || parts.iter().any(|p| *p != "0" && *p != "1") {
        return Err(Error::Format(format!("bad error_maps `{flags}`")));
    }
    let residual: ResidualMode = kv
        .get("residual")
        .ok_or_else(|| Error::Format("missing key `residual`".into()))?
        .parse()
        .map_err(|_| Error::Format("bad residual mode".into()))?;
    let config = ModelConfig {
        max_disparity: kv.require("max_disparity")?,
        width_multiplier: kv.require("width_multiplier")?,
        input_height: kv.require("input_height")?,
        input_width: kv.require("input_width")?,
        seed: kv.require("seed")?,
        variant: Variant {
            correlation: kv.require("correlation")?,
            squeezed_concat: kv.require("squeezed_concat")?,
            residual,
            error_maps: [parts[0] == "1", parts[1] == "1", parts[2] == "1"],
        },
    };
    config.validate()?;
    Ok(config)
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = format!("{MAGIC}\n").into_bytes();
    out.extend_from_slice(config_to_kv(params.config()).to_text().as_bytes());
    out.extend_from_slice(format!("tensors = {}\n{END_MANIFEST}\n", params.tensors().len()).as_bytes());
    for (name, t) in params.tensors() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("{name} {}\n", dims.join(" ")).as_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?;
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(Error::Format("truncated tensor payload".into()));
        }
        self.pos += len;
        Ok(rest[..len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.line()? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut manifest = String::new();
    loop {
        let line = r.line()?;
        if line == END_MANIFEST {
            break;
        }
        manifest.push_str(line);
        manifest.push('\n');
    }
    let kv = KeyValues::parse(&manifest)?;
    let config = config_from_kv(&kv)?;
    let count: usize = kv.require("tensors")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let header = r.line()?;
        let mut fields = header.split(' ');
        let name = fields.next().filter(|n| !n.is_empty()).ok_or_else(|| Error::Format("empty tensor name".into()))?;
        let shape = fields
            .map(|d| d.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension in `{header}`"))))
            .collect::<Result<Vec<_>>>()?;
        let data = r.floats(shape.iter().product())?;
        if tensors.insert(name.to_string(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    ModelParams::from_tensors(&config, tensors).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path)?)
}
