//! Resolved run configuration: built-in profile, then a JSON file, then the
//! `LUMEN_DA_SEED` environment variable, then dotted `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::GeneratorConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "LUMEN_DA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Default,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Profile::Default),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::ConfigInvalid(format!("unknown profile {other:?} (expected default or desk)"))),
        }
    }
}

/// Everything a pipeline command needs. `seed` is authoritative and is
/// copied into the generator and trainer sections on resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        let cfg = match p {
            Profile::Default => RunConfig {
                seed: 0,
                generator: GeneratorConfig::default(),
                model: ModelConfig::default(),
                train: TrainConfig::default(),
                eval: EvalConfig::default(),
            },
            Profile::Desk => RunConfig {
                seed: 0,
                generator: GeneratorConfig::desk(),
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                eval: EvalConfig::default(),
            },
        };
        cfg.synced()
    }

    fn synced(mut self) -> Self {
        self.generator.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    /// Layers a config file (may be partial), the seed environment variable
    /// and `--set` style overrides on top of a profile, then validates.
    pub fn resolve(
        profile: Profile,
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[String],
    ) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::profile(profile)).expect("config serializes");
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: Value =
                serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
            merge(&mut tree, patch, "")?;
        }
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            tree["seed"] = Value::from(seed);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::ConfigInvalid(format!("config does not parse: {e}")))?;
        let cfg = cfg.synced();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_env(profile: Profile, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(profile, file, env.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.generator.image_size != self.model.image_size {
            return Err(Error::ConfigInvalid(format!(
                "generator.image_size {} differs from model.image_size {}",
                self.generator.image_size, self.model.image_size
            )));
        }
        if (self.eval.max_depth_mm - self.model.max_depth_mm).abs() > 1e-12 {
            return Err(Error::ConfigInvalid("eval.max_depth_mm must equal model.max_depth_mm".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Writes the resolved config; loading it back with no overrides yields
    /// the same value.
    pub fn echo(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| Error::ConfigInvalid(format!("unknown config key {path}")))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| Error::ConfigInvalid(format!("override {spec:?} is not key=value")))?;
    let mut slot = &mut *tree;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::ConfigInvalid(format!("unknown config key {key}")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
