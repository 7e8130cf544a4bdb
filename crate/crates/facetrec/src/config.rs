//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use facetrec_core::trainer::TrainConfig;

/// Keys beyond the training ones, with their documented defaults.
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("interactions", "(required) user<TAB>item file"),
    ("item_entity", "(required) item<TAB>[relation<TAB>]entity file"),
    ("entity_entity", "(optional) entity<TAB>[relation<TAB>]entity file"),
    ("output_dir", "root for run directories; default $FACETREC_OUT or ./runs"),
    ("k_list", "2,10,50,100"),
    ("n_val", "200"),
    ("n_test", "200"),
    ("train_frac", "0.8"),
    ("split_seed", "0"),
];

/// Where a value came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: PathBuf, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Flag => write!(f, "command line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config key `{key}` ({origin}): {message}")]
pub struct ConfigError {
    pub key: String,
    pub origin: Origin,
    pub message: String,
}

impl ConfigError {
    /// Line number when the offending value came from a file.
    pub fn line(&self) -> Option<usize> {
        match self.origin {
            Origin::File { line, .. } => Some(line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub interactions: Option<PathBuf>,
    pub item_entity: Option<PathBuf>,
    pub entity_entity: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub ks: Vec<usize>,
    pub n_val: usize,
    pub n_test: usize,
    pub train_frac: f64,
    pub split_seed: u64,
    origins: BTreeMap<String, Origin>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            interactions: None,
            item_entity: None,
            entity_entity: None,
            output_dir: None,
            ks: vec![2, 10, 50, 100],
            n_val: 200,
            n_test: 200,
            train_frac: 0.8,
            split_seed: 0,
            origins: BTreeMap::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

pub fn parse_list(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|s| parse::<usize>(s.trim()))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(v) })
}

impl RunConfig {
    fn set_value(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), String> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }
        };
        match key {
            "interactions" => self.interactions = Some(path(value)),
            "item_entity" => self.item_entity = Some(path(value)),
            "entity_entity" => self.entity_entity = Some(path(value)),
            "output_dir" => self.output_dir = Some(path(value)),
            "k_list" => self.ks = parse_list(value)?,
            "n_val" => self.n_val = parse(value)?,
            "n_test" => self.n_test = parse(value)?,
            "train_frac" => self.train_frac = parse(value)?,
            "split_seed" => self.split_seed = parse(value)?,
            _ => match self.train.set(key, value) {
                Ok(true) => {}
                Ok(false) => return Err("unknown key".into()),
                Err(facetrec_core::Error::Config { message, .. }) => return Err(message),
                Err(e) => return Err(e.to_string()),
            },
        }
        Ok(())
    }

    fn set_from(&mut self, key: &str, value: &str, origin: Origin, base: Option<&Path>) -> Result<(), ConfigError> {
        self.set_value(key, value, base).map_err(|message| ConfigError {
            key: key.to_string(),
            origin: origin.clone(),
            message,
        })?;
        if key == "factors" {
            self.origins.insert("entity_factors".into(), origin.clone());
            self.origins.insert("item_factors".into(), origin.clone());
        }
        self.origins.insert(key.to_string(), origin);
        Ok(())
    }

    /// Parses config text. Relative paths resolve against `path`'s directory.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let base = path.parent();
        for (n, raw) in text.lines().enumerate() {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: n + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    key: line.to_string(),
                    origin,
                    message: "expected `key = value`".into(),
                });
            };
            cfg.set_from(key.trim(), value.trim(), origin, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_config(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            key: "config".into(),
            origin: Origin::Flag,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse_str(&text, path)
    }

    /// Applies a command-line override; paths resolve against the working directory.
    pub fn set_flag(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_from(key, value, Origin::Flag, None)
    }

    fn origin(&self, key: &str) -> Origin {
        self.origins.get(key).cloned().unwrap_or(Origin::Default)
    }

    fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: key.to_string(),
            origin: self.origin(key),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Err(e) = self.train.validate() {
            return Err(match e {
                facetrec_core::Error::Config { key, message } => self.error(&key, message),
                other => self.error("config", other.to_string()),
            });
        }
        if self.ks.contains(&0) {
            return Err(self.error("k_list", "cut-offs must be positive"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(self.error("train_frac", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// The raw data paths, or an error naming the first missing one.
    pub fn data_paths(&self) -> Result<(&Path, &Path, Option<&Path>), ConfigError> {
        let interactions = self
            .interactions
            .as_deref()
            .ok_or_else(|| self.error("interactions", "required data path is missing"))?;
        let item_entity = self
            .item_entity
            .as_deref()
            .ok_or_else(|| self.error("item_entity", "required data path is missing"))?;
        Ok((interactions, item_entity, self.entity_entity.as_deref()))
    }

    /// Every key with its resolved value, training keys first.
    pub fn entries(&self) -> Vec<(String, String)> {
        let show = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut out: Vec<(String, String)> =
            self.train.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let ks: Vec<String> = self.ks.iter().map(usize::to_string).collect();
        out.extend([
            ("interactions".to_string(), show(&self.interactions)),
            ("item_entity".to_string(), show(&self.item_entity)),
            ("entity_entity".to_string(), show(&self.entity_entity)),
            ("output_dir".to_string(), show(&self.output_dir)),
            ("k_list".to_string(), ks.join(",")),
            ("n_val".to_string(), self.n_val.to_string()),
            ("n_test".to_string(), self.n_test.to_string()),
            ("train_frac".to_string(), format!("{:?}", self.train_frac)),
            ("split_seed".to_string(), self.split_seed.to_string()),
        ]);
        out
    }

    /// `key = value` text that parses back to the same configuration.
    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
