//! Experiment configuration in the flat `key = value` dialect.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::adapt::{AdaptConfig, Branches};
use crate::align::DEFAULT_ALIGNED_DIM;
use crate::encoder::{DEFAULT_HIDDEN, DEFAULT_LAYERS};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_EGO_HOPS;
use crate::io::parse_key_values;
use crate::pretrain::PretrainConfig;

/// The five rows of the component ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// No tokens, plain encoding of the aligned features.
    V1,
    /// No tokens, unifying prompt only.
    V2,
    /// Tokens in pre-training, plain encoding downstream.
    V3,
    /// Tokens, mixing prompt only.
    V4,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::Full];

    /// `(domain_token, mixing_prompt, unifying_prompt)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::V1 => (false, false, false),
            Variant::V2 => (false, false, true),
            Variant::V3 => (true, false, false),
            Variant::V4 => (true, true, false),
            Variant::Full => (true, true, true),
        }
    }

    pub fn from_flags(token: bool, mixing: bool, unifying: bool) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.flags() == (token, mixing, unifying))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unsupported component combination: domain_token={token} mixing_prompt={mixing} unifying_prompt={unifying}"
                ))
            })
    }

    pub fn branches(self) -> Branches {
        let (_, mixing, unifying) = self.flags();
        Branches { unifying, mixing }
    }

    pub fn domain_tokens(self) -> bool {
        self.flags().0
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Variant::V1),
            "2" => Ok(Variant::V2),
            "3" => Ok(Variant::V3),
            "4" => Ok(Variant::V4),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected 1|2|3|4|full)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "1",
            Variant::V2 => "2",
            Variant::V3 => "3",
            Variant::V4 => "4",
            Variant::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub aligned_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tau: f64,
    pub negatives: usize,
    /// `None` means `min(|E|, 2000)` per domain.
    pub triplets_per_domain: Option<usize>,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    pub ego_hops: usize,
    pub eval_tasks: usize,
    pub eval_seeds: Vec<u64>,
    pub shots: usize,
    pub seed: u64,
    pub domain_token: bool,
    pub mixing_prompt: bool,
    pub unifying_prompt: bool,
    pub include_positive_in_denominator: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            aligned_dim: DEFAULT_ALIGNED_DIM,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            tau: 1.0,
            negatives: 5,
            triplets_per_domain: None,
            pretrain_epochs: 100,
            pretrain_lr: 1e-3,
            adapt_steps: 100,
            adapt_lr: 1e-2,
            ego_hops: DEFAULT_EGO_HOPS,
            eval_tasks: 100,
            eval_seeds: vec![0, 1, 2, 3, 4],
            shots: 1,
            seed: 0,
            domain_token: true,
            mixing_prompt: true,
            unifying_prompt: true,
            include_positive_in_denominator: false,
        }
    }
}

const KEYS: &[&str] = &[
    "aligned_dim",
    "hidden",
    "layers",
    "tau",
    "negatives",
    "triplets_per_domain",
    "pretrain_epochs",
    "pretrain_lr",
    "adapt_steps",
    "adapt_lr",
    "ego_hops",
    "eval_tasks",
    "eval_seeds",
    "shots",
    "seed",
    "domain_token",
    "mixing_prompt",
    "unifying_prompt",
    "include_positive_in_denominator",
];

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{}` in `{s}`", t.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Parses a config file; absent keys keep their defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_key_values(text, path).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = Self::default();
        for e in &entries {
            let (k, v, l) = (e.key.as_str(), e.value.as_str(), e.line);
            match k {
                "aligned_dim" => c.aligned_dim = parse(k, v, l)?,
                "hidden" => c.hidden = parse(k, v, l)?,
                "layers" => c.layers = parse(k, v, l)?,
                "tau" => c.tau = parse(k, v, l)?,
                "negatives" => c.negatives = parse(k, v, l)?,
                "triplets_per_domain" => {
                    c.triplets_per_domain = if v == "auto" { None } else { Some(parse(k, v, l)?) }
                }
                "pretrain_epochs" => c.pretrain_epochs = parse(k, v, l)?,
                "pretrain_lr" => c.pretrain_lr = parse(k, v, l)?,
                "adapt_steps" => c.adapt_steps = parse(k, v, l)?,
                "adapt_lr" => c.adapt_lr = parse(k, v, l)?,
                "ego_hops" => c.ego_hops = parse(k, v, l)?,
                "eval_tasks" => c.eval_tasks = parse(k, v, l)?,
                "eval_seeds" => c.eval_seeds = parse_seed_list(v)?,
                "shots" => c.shots = parse(k, v, l)?,
                "seed" => c.seed = parse(k, v, l)?,
                "domain_token" => c.domain_token = parse(k, v, l)?,
                "mixing_prompt" => c.mixing_prompt = parse(k, v, l)?,
                "unifying_prompt" => c.unifying_prompt = parse(k, v, l)?,
                "include_positive_in_denominator" => c.include_positive_in_denominator = parse(k, v, l)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {l}: unknown key `{other}` in {}",
                        path.display()
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical form: every key, fixed order.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.eval_seeds.iter().map(u64::to_string).collect();
        let triplets = self
            .triplets_per_domain
            .map_or_else(|| "auto".to_string(), |t| t.to_string());
        let values = [
            self.aligned_dim.to_string(),
            self.hidden.to_string(),
            self.layers.to_string(),
            self.tau.to_string(),
            self.negatives.to_string(),
            triplets,
            self.pretrain_epochs.to_string(),
            self.pretrain_lr.to_string(),
            self.adapt_steps.to_string(),
            self.adapt_lr.to_string(),
            self.ego_hops.to_string(),
            self.eval_tasks.to_string(),
            seeds.join(","),
            self.shots.to_string(),
            self.seed.to_string(),
            self.domain_token.to_string(),
            self.mixing_prompt.to_string(),
            self.unifying_prompt.to_string(),
            self.include_positive_in_denominator.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("aligned_dim", self.aligned_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("negatives", self.negatives),
            ("ego_hops", self.ego_hops),
            ("eval_tasks", self.eval_tasks),
            ("shots", self.shots),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.triplets_per_domain == Some(0) {
            return Err(Error::Config("`triplets_per_domain` must be positive".into()));
        }
        for (k, v) in [("tau", self.tau), ("pretrain_lr", self.pretrain_lr), ("adapt_lr", self.adapt_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be a positive number, got {v}")));
            }
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("`eval_seeds` must not be empty".into()));
        }
        self.variant().map(|_| ())
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_flags(self.domain_token, self.mixing_prompt, self.unifying_prompt)
    }

    pub fn set_variant(&mut self, v: Variant) {
        (self.domain_token, self.mixing_prompt, self.unifying_prompt) = v.flags();
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            aligned_dim: self.aligned_dim,
            hidden: self.hidden,
            layers: self.layers,
            tau: self.tau,
            negatives: self.negatives,
            triplets_per_domain: self.triplets_per_domain,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            seed: self.seed,
            domain_tokens: self.domain_token,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            steps: self.adapt_steps,
            lr: self.adapt_lr,
            tau: self.tau,
            branches: Branches {
                unifying: self.unifying_prompt,
                mixing: self.mixing_prompt,
            },
        }
    }
}
