//! Experiment configuration: a TOML file mirroring the training and model
//! schemas, plus dotted-path command-line overrides. Unknown keys are
//! rejected everywhere, in files and in overrides alike.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::MelParams;
use crate::error::{Error, Result};
use crate::models::{DetectorConfig, DiscriminatorConfig, GeneratorConfig};
use crate::training::config::TrainingConfig;

/// Model structure knobs that are independent of the training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Generator base width; stages halve it four times.
    pub gen_width: usize,
    pub discriminator: DiscriminatorConfig,
    pub detector: DetectorConfig,
    pub mel: MelParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gen_width: 128,
            discriminator: DiscriminatorConfig::default(),
            detector: DetectorConfig::default(),
            mel: MelParams::default(),
        }
    }
}

impl ModelConfig {
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig::toy(self.mel.n_mels, self.gen_width)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config().validate(self.mel.hop)?;
        self.discriminator.validate()?;
        self.detector.validate()?;
        Ok(())
    }
}

/// The full experiment configuration tree.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub training: TrainingConfig,
    pub model: ModelConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.model.validate()?;
        if self.training.crop_len % self.model.mel.hop != 0 {
            return Err(Error::Config(format!(
                "crop_len {} must be a multiple of the mel hop {}",
                self.training.crop_len, self.model.mel.hop
            )));
        }
        Ok(())
    }

    /// Parse a TOML document, then apply `key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Config> {
        let mut tree: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse: {e}")))?;
        for entry in overrides {
            apply_override(&mut tree, entry)?;
        }
        let cfg: Config = tree
            .try_into()
            .map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Apply one `a.b.c=value` override onto a TOML tree. The value is parsed as
/// a TOML literal, falling back to a bare string. Intermediate tables are
/// created; the final deserialization rejects paths outside the schema.
fn apply_override(tree: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{entry}` must look like key.path=value"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override `{entry}` has an empty key")));
    }
    let value = parse_literal(raw);

    let mut node = tree;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override `{path}`: `{seg}` is not a table"))
        })?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("override path was empty");
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    }
}
