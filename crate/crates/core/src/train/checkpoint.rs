//! `NDXC` checkpoint files.
//!
//! Little-endian layout: magic `NDXC` | version u16 | metadata length u32 +
//! UTF-8 `key=value` lines | entry count u32 | entries (name length u16 + name +
//! rank u8 + dims u64[rank] + f64 payload) | CRC-32 of everything after the version.

use std::collections::BTreeMap;
use std::path::Path;

use super::stage::Policy;
use crate::encoder::{EncoderConfig, Target};
use crate::error::{Error, FormatError, Result};
use crate::lora::{init_adapter, MergeRecord};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Parameterized, Tensor};
use crate::signal::format::Reader;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NDXC";
pub const CHECKPOINT_VERSION: u16 = 1;
/// Parameter-table entry holding the fusion gate.
pub const LAMBDA_ENTRY: &str = "stfe.lambda_f";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
}

fn malformed(m: impl Into<String>) -> Error {
    FormatError::Malformed(m.into()).into()
}

impl Checkpoint {
    /// Snapshot of `model` with the given labels. `echo` entries are stored
    /// under `config.<key>`.
    pub fn capture(model: &Model, stage: u8, policy: Policy, seed: u64, echo: &[(String, String)]) -> Checkpoint {
        let mut meta = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            meta.insert(k.to_string(), v);
        };
        put("stage", stage.to_string());
        put("lambda_f", model.stfe.lambda_f().to_string());
        put("seed", seed.to_string());
        put("policy", policy.to_string());
        let c = &model.config;
        put("model.layers", c.encoder.layers.to_string());
        put("model.d", c.encoder.d.to_string());
        put("model.heads", c.encoder.heads.to_string());
        put("model.ffn_mult", c.encoder.ffn_mult.to_string());
        put("model.max_tokens", c.encoder.max_tokens.to_string());
        put("model.rank", c.rank.to_string());
        put("model.alpha", c.alpha.to_string());
        put(
            "model.targets",
            c.targets.iter().map(|t| t.name()).collect::<Vec<_>>().join(","),
        );
        for (name, m) in model.matrices() {
            if !m.adapters.is_empty() {
                let s: Vec<String> = m.adapters.iter().map(|a| format!("{}:{}", a.rank, a.alpha)).collect();
                put(&format!("adapters.{name}"), s.join(","));
            }
            if !m.merge_log.is_empty() {
                let s: Vec<String> = m
                    .merge_log
                    .iter()
                    .map(|r| format!("{}:{}:{}", r.stage, r.rank, r.alpha))
                    .collect();
                put(&format!("merge_log.{name}"), s.join(","));
            }
        }
        for (k, v) in echo {
            put(&format!("config.{k}"), v.clone());
        }
        let mut params = Vec::new();
        model.visit_params("", &mut |n, p| params.push((n.to_string(), p.value.clone())));
        params.push((LAMBDA_ENTRY.to_string(), Tensor::from_vec(vec![model.stfe.lambda_f()])));
        Checkpoint { meta, params }
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| malformed(format!("checkpoint metadata lacks {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| malformed(format!("checkpoint metadata {key}={v:?} does not parse")))
    }

    pub fn stage(&self) -> Result<u8> {
        self.parse("stage")
    }

    pub fn lambda_f(&self) -> Result<f64> {
        self.parse("lambda_f")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn policy(&self) -> Result<Policy> {
        self.get("policy")?.parse()
    }

    /// Per-matrix merge history recorded in the metadata.
    pub fn merge_log(&self) -> Result<BTreeMap<String, Vec<MergeRecord>>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.meta {
            if let Some(name) = k.strip_prefix("merge_log.") {
                let mut records = Vec::new();
                for item in v.split(',') {
                    let f: Vec<&str> = item.split(':').collect();
                    let rec = match f.as_slice() {
                        [stage, rank, alpha] => {
                            rank.parse()
                                .ok()
                                .zip(alpha.parse().ok())
                                .map(|(rank, alpha)| MergeRecord {
                                    stage: stage.to_string(),
                                    rank,
                                    alpha,
                                })
                        }
                        _ => None,
                    };
                    records.push(rec.ok_or_else(|| malformed(format!("merge log entry {item:?} of {name}")))?);
                }
                out.insert(name.to_string(), records);
            }
        }
        Ok(out)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let targets = self
            .get("model.targets")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(Target::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelConfig {
            encoder: EncoderConfig {
                layers: self.parse("model.layers")?,
                d: self.parse("model.d")?,
                heads: self.parse("model.heads")?,
                ffn_mult: self.parse("model.ffn_mult")?,
                max_tokens: self.parse("model.max_tokens")?,
            },
            rank: self.parse("model.rank")?,
            alpha: self.parse("model.alpha")?,
            targets,
        })
    }

    /// Rebuilds the model. Every parameter must be present with its saved shape.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config()?, 0)?;
        let merge_log = self.merge_log()?;
        for (name, m) in model.matrices_mut() {
            if let Some(spec) = self.meta.get(&format!("adapters.{name}")) {
                for item in spec.split(',') {
                    let parsed = item
                        .split_once(':')
                        .and_then(|(r, a)| Some((r.parse::<usize>().ok()?, a.parse::<f64>().ok()?)));
                    let (rank, alpha) = parsed.ok_or_else(|| malformed(format!("adapter entry {item:?} of {name}")))?;
                    m.attach(init_adapter(m.out_dim(), m.in_dim(), rank, alpha, 0)?)?;
                }
            }
            if let Some(log) = merge_log.get(&name) {
                m.merge_log = log.clone();
            }
        }
        let table: BTreeMap<&str, &Tensor> = self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if table.len() != self.params.len() {
            return Err(malformed("duplicate parameter names"));
        }
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        let mut used = 0;
        model.visit_params_mut("", &mut |n, p| match table.get(n) {
            Some(t) if t.shape() == p.value.shape() => {
                p.value = (*t).clone();
                used += 1;
            }
            Some(t) => mismatched.push(format!("{n}: saved {:?}, model {:?}", t.shape(), p.value.shape())),
            None => missing.push(n.to_string()),
        });
        if let Some(n) = missing.first() {
            return Err(malformed(format!("checkpoint lacks parameter {n}")));
        }
        if let Some(m) = mismatched.first() {
            return Err(malformed(format!("parameter shape mismatch {m}")));
        }
        let lambda = table
            .get(LAMBDA_ENTRY)
            .filter(|t| t.len() == 1)
            .ok_or_else(|| malformed(format!("checkpoint lacks {LAMBDA_ENTRY}")))?
            .data()[0];
        if used + 1 != table.len() {
            return Err(malformed("checkpoint has parameters the model does not"));
        }
        model.stfe.set_lambda_f(lambda)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidArgument(format!(
                    "metadata entry {k:?} cannot be encoded"
                )));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        body.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        body.extend_from_slice(meta.as_bytes());
        body.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("parameter name {name:?} is too long")))?;
            let rank =
                u8::try_from(t.rank()).map_err(|_| Error::InvalidArgument(format!("{name} has too many dims")))?;
            body.extend_from_slice(&len.to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.push(rank);
            for &d in t.shape() {
                body.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(body.len() + 10);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            }
            .into());
        }
        if bytes.len() < r.pos + 4 {
            return Err(FormatError::Truncated {
                what: "checksum",
                expected: 4,
                found: (bytes.len() - r.pos) as u64,
            }
            .into());
        }
        let (body, tail) = bytes[r.pos..].split_at(bytes.len() - r.pos - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed }.into());
        }
        let mut r = Reader { buf: body, pos: 0 };
        let meta_len = r.u32("metadata length")? as usize;
        let text =
            std::str::from_utf8(r.take(meta_len, "metadata")?).map_err(|_| malformed("metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("entry count")?;
        let mut params = Vec::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| malformed("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dims")? as usize);
            }
            let n: usize = shape.iter().product();
            if n > (body.len() - r.pos) / 8 {
                return Err(FormatError::Truncated {
                    what: "parameter payload",
                    expected: n as u64 * 8,
                    found: (body.len() - r.pos) as u64,
                }
                .into());
            }
            let data = (0..n)
                .map(|_| r.f64("payload"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
