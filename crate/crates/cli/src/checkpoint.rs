//! Model checkpoints: a text manifest followed by a little-endian `f32`
//! payload.
//!
//! ```text
//! impress-checkpoint
//! version 1
//! kind vgae
//! config model.curvature 1.0
//! tensor gcn.0 [9,16] offset=0
//! tensor gcn.1 [16,16] offset=576
//! payload 1600
//! <1600 bytes>
//! ```
//!
//! Config lines are sorted by key. Offsets are byte offsets into the payload,
//! ascending and contiguous.

use std::collections::BTreeMap;
use std::path::Path;

use impress_core::diffusion::{build_schedule, DenoiserBlock, DiffusionModel};
use impress_core::geometry::Curvature;
use impress_core::tensor::Tensor;
use impress_core::vgae::VgaeModel;
use impress_core::{Error, Result, Scalar};

pub const MAGIC: &str = "impress-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint { kind: kind.to_string(), config: BTreeMap::new(), tensors: Vec::new() }
    }

    pub fn push<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| format_err(format!("missing tensor '{name}'")))?;
        let data = t.data.iter().map(|&v| T::of(v as f64)).collect();
        Ok(Tensor::from_vec(&t.shape, data)?.with_grad())
    }

    pub fn value(&self, key: &str) -> Result<&str> {
        self.config.get(key).map(String::as_str).ok_or_else(|| format_err(format!("missing config key '{key}'")))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.value(key)?;
        raw.parse().map_err(|_| format_err(format!("bad value '{raw}' for '{key}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let clean = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
        if !clean(&self.kind) {
            return Err(format_err(format!("bad kind '{}'", self.kind)));
        }
        let mut head = format!("{MAGIC}\nversion {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.config {
            if !clean(k) || v.contains('\n') {
                return Err(format_err(format!("config entry '{k}' cannot be stored")));
            }
            head.push_str(&format!("config {k} {v}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            if !clean(&t.name) {
                return Err(format_err(format!("bad tensor name '{}'", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(format_err(format!("tensor '{}' has a wrong element count", t.name)));
            }
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            head.push_str(&format!("tensor {} [{}] offset={offset}\n", t.name, dims.join(",")));
            offset += t.data.len() * 4;
        }
        head.push_str(&format!("payload {offset}\n"));
        let mut out = head.into_bytes();
        out.reserve(offset);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| format_err("truncated manifest"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| format_err("manifest is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(format_err("not a checkpoint file"));
        }
        let version = next_line()?;
        let found = version.strip_prefix("version ").ok_or_else(|| format_err("missing version line"))?;
        if found != VERSION.to_string() {
            return Err(Error::Version { found: found.to_string(), expected: VERSION.to_string() });
        }
        let kind = next_line()?.strip_prefix("kind ").ok_or_else(|| format_err("missing kind line"))?.to_string();
        let mut ck = Checkpoint::new(&kind);
        let mut layout: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let payload_len = loop {
            let line = next_line()?;
            if let Some(rest) = line.strip_prefix("config ") {
                let (k, v) = rest.split_once(' ').ok_or_else(|| format_err(format!("bad config line '{line}'")))?;
                ck.config.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                layout.push(parse_tensor_line(rest).ok_or_else(|| format_err(format!("bad tensor line '{line}'")))?);
            } else if let Some(rest) = line.strip_prefix("payload ") {
                break rest.parse::<usize>().map_err(|_| format_err(format!("bad payload line '{line}'")))?;
            } else {
                return Err(format_err(format!("unexpected manifest line '{line}'")));
            }
        };
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(format_err(format!("payload has {} bytes, manifest declares {payload_len}", payload.len())));
        }
        let mut expected = 0usize;
        for (name, shape, offset) in layout {
            if offset != expected {
                return Err(format_err(format!("tensor '{name}' at offset {offset}, expected {expected}")));
            }
            let len = shape.iter().product::<usize>() * 4;
            let chunk = payload
                .get(offset..offset + len)
                .ok_or_else(|| format_err(format!("tensor '{name}' runs past the payload")))?;
            let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            ck.tensors.push(NamedTensor { name, shape, data });
            expected += len;
        }
        if expected != payload_len {
            return Err(format_err(format!("tensors cover {expected} of {payload_len} payload bytes")));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_tensor_line(rest: &str) -> Option<(String, Vec<usize>, usize)> {
    let mut parts = rest.split(' ');
    let name = parts.next()?.to_string();
    let dims = parts.next()?.strip_prefix('[')?.strip_suffix(']')?;
    let shape = dims.split(',').map(|d| d.parse().ok()).collect::<Option<Vec<usize>>>()?;
    let offset = parts.next()?.strip_prefix("offset=")?.parse().ok()?;
    if parts.next().is_some() || shape.contains(&0) {
        return None;
    }
    Some((name, shape, offset))
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    if ck.kind != kind {
        return Err(format_err(format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    Ok(())
}

/// VGAE checkpoint; `echo` is copied into the config block.
pub fn vgae_checkpoint<T: Scalar>(model: &VgaeModel<T>, echo: &BTreeMap<String, String>) -> Checkpoint {
    let mut ck = Checkpoint::new("vgae");
    ck.config.extend(echo.iter().map(|(k, v)| (k.clone(), v.clone())));
    let c = model.curvature.map_or(0.0, Curvature::magnitude);
    ck.config.insert("model.curvature".into(), format!("{c:?}"));
    ck.config.insert("model.layers".into(), model.gcn_weights.len().to_string());
    for (i, w) in model.gcn_weights.iter().enumerate() {
        ck.push(&format!("gcn.{i}"), w);
    }
    ck.push("theta_prime", &model.theta_prime);
    ck.push("theta_mu", &model.theta_mu);
    ck.push("theta_sigma", &model.theta_sigma);
    ck
}

pub fn vgae_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<VgaeModel<T>> {
    expect_kind(ck, "vgae")?;
    let c: f64 = ck.parse("model.curvature")?;
    let curvature = if c == 0.0 { None } else { Some(Curvature::new(c)?) };
    let layers: usize = ck.parse("model.layers")?;
    let gcn = (0..layers).map(|i| ck.tensor(&format!("gcn.{i}"))).collect::<Result<Vec<_>>>()?;
    VgaeModel::from_parts(curvature, gcn, ck.tensor("theta_prime")?, ck.tensor("theta_mu")?, ck.tensor("theta_sigma")?)
}

pub fn diffusion_checkpoint<T: Scalar>(model: &DiffusionModel<T>, echo: &BTreeMap<String, String>) -> Checkpoint {
    let mut ck = Checkpoint::new("diffusion");
    ck.config.extend(echo.iter().map(|(k, v)| (k.clone(), v.clone())));
    let (start, end) = model.schedule.beta_range();
    ck.config.insert("model.steps".into(), model.schedule.steps().to_string());
    ck.config.insert("model.beta_start".into(), format!("{start:?}"));
    ck.config.insert("model.beta_end".into(), format!("{end:?}"));
    ck.config.insert("model.trained".into(), model.trained.to_string());
    ck.push("time_weight", &model.time_weight);
    ck.push("time_bias", &model.time_bias);
    for (i, b) in model.blocks.iter().enumerate() {
        for (part, t) in [("weight", &b.weight), ("bias", &b.bias), ("w_q", &b.w_q), ("w_k", &b.w_k), ("w_v", &b.w_v), ("w_o", &b.w_o)] {
            ck.push(&format!("block.{i}.{part}"), t);
        }
    }
    ck.push("out_weight", &model.out_weight);
    ck.push("out_bias", &model.out_bias);
    ck
}

pub fn diffusion_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<DiffusionModel<T>> {
    expect_kind(ck, "diffusion")?;
    let schedule = build_schedule(ck.parse("model.steps")?, ck.parse("model.beta_start")?, ck.parse("model.beta_end")?)?;
    let block_count = ck.tensors.iter().filter(|t| t.name.ends_with(".w_q")).count();
    let mut blocks = Vec::with_capacity(block_count);
    for i in 0..block_count {
        let part = |p: &str| ck.tensor::<T>(&format!("block.{i}.{p}"));
        blocks.push(DenoiserBlock {
            weight: part("weight")?,
            bias: part("bias")?,
            w_q: part("w_q")?,
            w_k: part("w_k")?,
            w_v: part("w_v")?,
            w_o: part("w_o")?,
        });
    }
    DiffusionModel::from_parts(
        schedule,
        ck.tensor("time_weight")?,
        ck.tensor("time_bias")?,
        blocks,
        ck.tensor("out_weight")?,
        ck.tensor("out_bias")?,
        ck.parse("model.trained")?,
    )
}
