//! The JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::environments::{EnvSpec, Placement, Region};
use crate::error::{Error, Result};
use crate::lifecycle::LifecycleConfig;
use crate::neat::EvolutionConfig;
use crate::physics::PhysicsParams;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    /// Steps between rendered frames.
    pub frame_every: usize,
    pub log_level: String,
    /// Generations between checkpoints; the last generation is always saved.
    pub checkpoint_every: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            frame_every: 10,
            log_level: "info".into(),
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub evolution: EvolutionConfig,
    pub physics: PhysicsParams,
    pub lifecycle: LifecycleConfig,
    /// One spec or a list; fitness is averaged over the list.
    #[serde(deserialize_with = "one_or_many")]
    pub environment: Vec<EnvSpec>,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            evolution: EvolutionConfig::default(),
            physics: PhysicsParams::default(),
            lifecycle: LifecycleConfig::default(),
            environment: vec![default_environment()],
            io: IoConfig::default(),
        }
    }
}

/// A 32x32 open arena with a food patch next to a central seed.
pub fn default_environment() -> EnvSpec {
    let mut env = EnvSpec::open_arena(32, 32, (16, 16));
    env.food = vec![Placement { region: Region::new(18, 15, 21, 18), amount: 1.0 }];
    env
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<EnvSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<EnvSpec>),
        Many(Vec<EnvSpec>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(e) => vec![*e],
        OneOrMany::Many(v) => v,
    })
}

/// A configuration problem tied to a place in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
            if let Some(c) = self.column {
                write!(f, ":{c}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.evolution.validate()?;
        self.physics.validate()?;
        self.lifecycle.validate()?;
        if self.environment.is_empty() {
            return Err(Error::Config("environment list is empty".into()));
        }
        for env in &self.environment {
            env.validate()?;
        }
        if self.io.frame_every == 0 {
            return Err(Error::Config("io.frame_every must be >= 1".into()));
        }
        if self.io.checkpoint_every == 0 {
            return Err(Error::Config("io.checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses and validates `text`; every error carries the best line the
    /// message can be tied to.
    pub fn parse(text: &str, path: &Path) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| {
            let message = e.to_string();
            ConfigError { path: path.to_path_buf(), line: anchor_line(text, &message), column: None, message }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn k_hidden(&self) -> usize {
        self.lifecycle.k_hidden
    }
}

/// Finds the line of the key a validation message is about. Messages start
/// with a dotted path such as `physics.beta`; the deepest key that occurs
/// in the text wins, falling back to the section name.
fn anchor_line(text: &str, message: &str) -> Option<usize> {
    let detail = message.split_once(": ").map(|(_, d)| d).unwrap_or(message);
    let head = detail.split_whitespace().next()?;
    let keys: Vec<&str> = head.split('.').filter(|k| !k.is_empty()).collect();
    let mut found = None;
    for key in &keys {
        let quoted = format!("\"{key}\"");
        if let Some(n) = text.lines().position(|l| l.contains(&quoted)) {
            found = Some(n + 1);
        }
    }
    found.or_else(|| {
        ["environment", "io"]
            .iter()
            .filter(|k| message.contains(*k))
            .find_map(|k| text.lines().position(|l| l.contains(&format!("\"{k}\""))).map(|n| n + 1))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_roundtrips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text, Path::new("c.json")).unwrap(), cfg);
    }

    #[test]
    fn empty_object_fills_defaults() {
        assert_eq!(RunConfig::parse("{}", Path::new("c.json")).unwrap(), RunConfig::default());
    }

    #[test]
    fn single_environment_is_accepted() {
        let env = serde_json::to_string(&default_environment()).unwrap();
        let cfg = RunConfig::parse(&format!("{{\"environment\": {env}}}"), Path::new("c.json")).unwrap();
        assert_eq!(cfg.environment.len(), 1);
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let text = "{\n  \"evolution\": {\n    \"population_sise\": 8\n  }\n}";
        let err = RunConfig::parse(text, Path::new("c.json")).unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("population_sise"));
    }

    #[test]
    fn invalid_value_points_at_its_key() {
        let text = "{\n  \"physics\": {\n    \"beta\": 0.0\n  }\n}";
        let err = RunConfig::parse(text, Path::new("c.json")).unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
        assert!(err.to_string().starts_with("c.json:3: "));
    }
}
