//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smoothtail::model::validate_model;
use smoothtail::WeightModel;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 0x5EED0;
pub const SEED_ENV: &str = "SMOOTHTAIL_SEED";

/// A 64-bit seed; TOML integers are signed, so seeds may also be given as
/// decimal or `0x`-prefixed hex strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Seed {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            Some(h) => u64::from_str_radix(&h.replace('_', ""), 16),
            None => s.replace('_', "").parse::<u64>(),
        };
        parsed.map(Seed).map_err(|e| format!("invalid seed `{s}`: {e}"))
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 <= i64::MAX as u64 {
            s.serialize_i64(self.0 as i64)
        } else {
            s.serialize_str(&format!("{:#x}", self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) if i >= 0 => Ok(Seed(i as u64)),
            Raw::Int(i) => Err(serde::de::Error::custom(format!("seed must be nonnegative, got {i}"))),
            Raw::Text(t) => Seed::parse(&t).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analytics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hill_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_quantile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolation: Option<smoothtail::tail::Extrapolation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degeneracy_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degeneracy_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_budget: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Special {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m2_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub charfn_t: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<Format>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_generations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarKind>,
    /// Exit with a configuration error when condition (A) fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub require_assumptions: Option<bool>,
    pub model: WeightModel,
    #[serde(default, skip_serializing_if = "is_default")]
    pub analytics: Analytics,
    #[serde(default, skip_serializing_if = "is_default")]
    pub special: Special,
    #[serde(default, skip_serializing_if = "is_default")]
    pub output: Output,
}

fn is_default<T: Default + PartialEq>(t: &T) -> bool {
    *t == T::default()
}

impl RunConfig {
    pub fn pool_size(&self) -> usize {
        self.pool_size.unwrap_or(100_000)
    }

    pub fn max_generations(&self) -> u64 {
        self.max_generations.unwrap_or(60)
    }

    pub fn min_generations(&self) -> u64 {
        self.min_generations.unwrap_or(10)
    }

    pub fn convergence_tol(&self) -> f64 {
        self.convergence_tol.unwrap_or(5e-3)
    }

    pub fn scalar(&self) -> ScalarKind {
        self.scalar.unwrap_or(ScalarKind::F64)
    }

    pub fn require_assumptions(&self) -> bool {
        self.require_assumptions.unwrap_or(false)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("smoothtail-out"))
    }

    pub fn formats(&self) -> Vec<Format> {
        self.output.formats.clone().unwrap_or_else(|| vec![Format::Json, Format::Csv])
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Validation { key: key.into(), message: msg });
        if self.pool_size() < 100 {
            return bad("pool_size", format!("must be at least 100, got {}", self.pool_size()));
        }
        if self.min_generations() > self.max_generations() {
            return bad("min_generations", "exceeds max_generations".into());
        }
        if self.convergence_tol().is_nan() || self.convergence_tol() < 0.0 {
            return bad("convergence_tol", "must be nonnegative".into());
        }
        if let Some([lo, hi]) = self.analytics.window {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return bad("analytics.window", "need 0 < lo < hi < 1".into());
            }
        }
        if let Some(g) = self.analytics.grid_points {
            if g < 4 {
                return bad("analytics.grid_points", "need at least 4 points".into());
            }
        }
        if let Some(v) = self.special.v {
            if v.is_nan() || v < 0.0 {
                return bad("special.v", "must be nonnegative".into());
            }
        }
        validate_model(self.model.clone()).map_err(|e| CliError::Validation { key: "model".into(), message: e.to_string() })?;
        Ok(())
    }
}

/// Parses and validates a TOML config string.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

/// Where the effective seed came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Environment,
    Config,
    Default,
}

/// Flag, then `SMOOTHTAIL_SEED`, then the config file, then the default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, cfg: &RunConfig) -> Result<(u64, SeedSource), CliError> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(e) = env.filter(|e| !e.trim().is_empty()) {
        let s = Seed::parse(e).map_err(|m| CliError::Validation { key: SEED_ENV.into(), message: m })?;
        return Ok((s.0, SeedSource::Environment));
    }
    if let Some(s) = cfg.seed {
        return Ok((s.0, SeedSource::Config));
    }
    Ok((DEFAULT_SEED, SeedSource::Default))
}
