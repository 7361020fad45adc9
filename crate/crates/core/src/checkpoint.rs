//! Plain-text checkpoint format.
//!
//! ```text
//! version = 1
//! aligned_dim = 50
//! ...
//! array gcn/0 50 256
//! <row 0 values, space separated>
//! ...
//! ```
//!
//! Header lines use the `key = value` dialect. Each `array <name> <rows>
//! <cols>` line is followed by `rows` lines of shortest round-trip decimals,
//! so save → load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::adapt::DualPrompts;
use crate::align::{DimensionAligner, DomainTokens};
use crate::encoder::GcnParams;
use crate::error::{Error, Result};
use crate::pretrain::{BundleConfig, PretrainedBundle};
use crate::tensor::{Matrix, Tensor};

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub arrays: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            header: vec![("version".into(), VERSION.to_string())],
            arrays: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn push_array(&mut self, name: impl Into<String>, m: &Matrix) {
        self.arrays.push((name.into(), m.clone()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing header key `{key}`")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn array(&self, name: &str) -> Result<&Matrix> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, m) in &self.arrays {
            let _ = writeln!(out, "array {name} {} {}", m.nrows(), m.ncols());
            for row in m.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ck = Checkpoint::default();
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: String| Error::Checkpoint(format!("line {}: {msg}", line + 1));
        while let Some((i, raw)) = lines.next() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(spec) = line.strip_prefix("array ") {
                let parts: Vec<&str> = spec.split_whitespace().collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(err(i, format!("malformed array header `{line}`")));
                };
                let rows: usize = rows.parse().map_err(|_| err(i, "bad row count".into()))?;
                let cols: usize = cols.parse().map_err(|_| err(i, "bad column count".into()))?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (j, row) = lines
                        .next()
                        .ok_or_else(|| err(i, format!("array `{name}` truncated")))?;
                    let before = values.len();
                    for tok in row.split_whitespace() {
                        values.push(
                            tok.parse::<f64>()
                                .map_err(|_| err(j, format!("bad number `{tok}`")))?,
                        );
                    }
                    if values.len() - before != cols {
                        return Err(err(j, format!("expected {cols} values in `{name}`")));
                    }
                }
                let m = Matrix::from_shape_vec((rows, cols), values).expect("counted");
                ck.arrays.push((name.to_string(), m));
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| err(i, format!("expected `key = value`, got `{line}`")))?;
                ck.header.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let version: u32 = ck.parse_value("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_domain_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == ',' || c == '/' || c == '=') {
        return Err(Error::Checkpoint(format!(
            "domain id `{id}` cannot be stored (no whitespace, `,`, `/` or `=`)"
        )));
    }
    Ok(())
}

pub fn bundle_to_checkpoint(b: &PretrainedBundle) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    let ids: Vec<&str> = b.tokens.ids().collect();
    for id in &ids {
        check_domain_id(id)?;
    }
    ck.set("aligned_dim", b.config.aligned_dim);
    ck.set("hidden", b.config.hidden);
    ck.set("layers", b.config.layers);
    ck.set("tau", b.config.tau);
    ck.set("domain_tokens", b.config.domain_tokens);
    ck.set("source_domains", ids.join(","));
    for a in &b.aligners {
        ck.push_array(format!("aligner/{}", a.domain_id), a.projection());
    }
    for (id, t) in b.tokens.iter() {
        ck.push_array(format!("token/{id}"), t.data());
    }
    for (l, w) in b.gcn.weights().iter().enumerate() {
        ck.push_array(format!("gcn/{l}"), w.data());
    }
    Ok(ck)
}

pub fn bundle_from_checkpoint(ck: &Checkpoint) -> Result<PretrainedBundle> {
    let config = BundleConfig {
        aligned_dim: ck.parse_value("aligned_dim")?,
        hidden: ck.parse_value("hidden")?,
        layers: ck.parse_value("layers")?,
        tau: ck.parse_value("tau")?,
        domain_tokens: ck.parse_value("domain_tokens")?,
    };
    let ids: Vec<String> = ck.get("source_domains")?.split(',').map(str::to_string).collect();
    let aligners = ids
        .iter()
        .map(|id| DimensionAligner::from_projection(id.clone(), ck.array(&format!("aligner/{id}"))?.clone()))
        .collect::<Result<Vec<_>>>()?;
    let tokens = DomainTokens::from_entries(
        ids.iter()
            .map(|id| Ok((id.clone(), Tensor::constant(ck.array(&format!("token/{id}"))?.clone()))))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let weights = (0..config.layers)
        .map(|l| Ok(Tensor::constant(ck.array(&format!("gcn/{l}"))?.clone())))
        .collect::<Result<Vec<_>>>()?;
    PretrainedBundle::new(GcnParams::from_weights(weights)?, tokens, aligners, config)
}

pub fn save_bundle(b: &PretrainedBundle, path: impl AsRef<Path>) -> Result<()> {
    bundle_to_checkpoint(b)?.save(path)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<PretrainedBundle> {
    bundle_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn prompts_to_checkpoint(p: &DualPrompts) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push_array("p_uni", p.p_uni.data());
    ck.push_array("gamma", p.gamma.data());
    ck
}

pub fn prompts_from_checkpoint(ck: &Checkpoint) -> Result<DualPrompts> {
    DualPrompts::from_values(ck.array("p_uni")?.clone(), ck.array("gamma")?.clone())
}
