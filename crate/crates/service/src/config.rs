//! Service configuration: a TOML file, then `MYFOOD_*` environment overrides.
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use myfood_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// `oracle`, `reference`, `constant-<class id>` or a backend name.
    pub model: String,
    /// Weights file for the reference model.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Backend registry for plugin models.
    #[serde(default)]
    pub backends: Option<PathBuf>,
    /// Dataset directory; supplies the taxonomy and the oracle's masks.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub nutrition: PathBuf,
    pub calibration: PathBuf,
    pub diary: PathBuf,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    /// Concurrent inferences; further requests queue in arrival order.
    #[serde(default = "default_workers")]
    pub inference_workers: usize,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_upload() -> usize {
    10 * 1024 * 1024
}

fn default_workers() -> usize {
    2
}

impl ServiceConfig {
    /// Reads, applies the process environment and checks paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::parse(&text, base)?;
        config.apply_env(std::env::vars())?;
        config.check_paths()?;
        Ok(config)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: ServiceConfig = toml::from_str(text).map_err(|e| Error::Parse {
            entry: "service config".into(),
            message: e.to_string(),
        })?;
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    /// Overrides fields from `MYFOOD_<FIELD>` variables, e.g.
    /// `MYFOOD_LISTEN` or `MYFOOD_MAX_UPLOAD_BYTES`. Paths given this way are
    /// taken as they are.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (key, value) in vars {
            let Some(field) = key.strip_prefix("MYFOOD_") else {
                continue;
            };
            let number = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| Error::Validation(format!("{key}={v}: {e}")))
            };
            match field {
                "LISTEN" => self.listen = value,
                "MODEL" => self.model = value,
                "WEIGHTS" => self.weights = Some(value.into()),
                "BACKENDS" => self.backends = Some(value.into()),
                "DATASET" => self.dataset = Some(value.into()),
                "NUTRITION" => self.nutrition = value.into(),
                "CALIBRATION" => self.calibration = value.into(),
                "DIARY" => self.diary = value.into(),
                "MAX_UPLOAD_BYTES" => self.max_upload_bytes = number(&value)?,
                "INFERENCE_WORKERS" => self.inference_workers = number(&value)?,
                _ => log::warn!("ignoring unknown setting {key}"),
            }
        }
        self.validate()
    }

    /// Every input file must exist; the diary may be created, but its
    /// directory must exist.
    pub fn check_paths(&self) -> Result<()> {
        let missing = |p: &Path| Error::Io {
            path: p.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
        };
        let inputs = [Some(&self.nutrition), Some(&self.calibration), self.weights.as_ref(), self.backends.as_ref(), self.dataset.as_ref()];
        if let Some(p) = inputs.into_iter().flatten().find(|p| !p.exists()) {
            return Err(missing(p));
        }
        let diary_dir = self.diary.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !diary_dir.is_dir() {
            return Err(missing(diary_dir));
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        if self.max_upload_bytes == 0 {
            return Err(Error::Validation("max_upload_bytes must be positive".into()));
        }
        if self.inference_workers == 0 {
            return Err(Error::Validation("inference_workers must be at least 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Validation("model must be named".into()));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.nutrition);
        abs(&mut self.calibration);
        abs(&mut self.diary);
        for p in [&mut self.weights, &mut self.backends, &mut self.dataset].into_iter().flatten() {
            abs(p);
        }
    }
}
