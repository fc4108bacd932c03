//! Settings file plus `WOC_*` environment overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use woc_core::augment::{StopList, Thresholds};
use woc_core::store::ShardConfig;
use woc_core::xref::BuildOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {var}")]
    Env { var: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_root: PathBuf,
    pub corpus_list: Option<PathBuf>,
    /// Bare clones of remote repositories live here.
    pub cache_dir: Option<PathBuf>,
    pub object_shard_bits: u8,
    pub map_shard_bits: u8,
    pub pathological_commit_cap: usize,
    pub ubiquitous_blob_cap: usize,
    pub min_shared_commits: usize,
    pub thresholds: Thresholds,
    /// One stop word per line; the built-in list when absent.
    pub stop_list: Option<PathBuf>,
    pub blocking_bucket_cap: usize,
    pub sort_memory_mb: usize,
}

impl Default for Config {
    fn default() -> Self {
        let shards = ShardConfig::default();
        let build = BuildOptions::default();
        Config {
            store_root: PathBuf::from("woc-store"),
            corpus_list: None,
            cache_dir: None,
            object_shard_bits: shards.object_shard_bits,
            map_shard_bits: shards.map_shard_bits,
            pathological_commit_cap: build.pathological_commit_cap,
            ubiquitous_blob_cap: build.ubiquitous_blob_cap,
            min_shared_commits: 1,
            thresholds: Thresholds::default(),
            stop_list: None,
            blocking_bucket_cap: 200,
            sort_memory_mb: 256,
        }
    }
}

pub const DEFAULT_CONFIG_FILE: &str = "woc.toml";

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.message().to_owned(),
        })?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Paths in a config file are relative to the file's directory.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_root);
        for p in [&mut self.corpus_list, &mut self.cache_dir, &mut self.stop_list]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Reads `path`, or `woc.toml` in the working directory when it
    /// exists, or falls back to defaults; then applies the environment.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let explicit = path.map(Path::to_path_buf);
        let candidate = explicit.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG_FILE));
        let mut cfg = match fs::read_to_string(&candidate) {
            Ok(text) => Config::from_toml(&text, &candidate)?,
            Err(e) if explicit.is_none() && e.kind() == std::io::ErrorKind::NotFound => Config::default(),
            Err(source) => {
                return Err(ConfigError::Read {
                    path: candidate,
                    source,
                })
            }
        };
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env<I>(&mut self, env: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        fn num<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env {
                var: var.to_owned(),
                value: value.to_owned(),
            })
        }
        for (var, value) in env {
            match var.as_str() {
                "WOC_STORE_ROOT" => self.store_root = value.into(),
                "WOC_CORPUS_LIST" => self.corpus_list = Some(value.into()),
                "WOC_CACHE_DIR" => self.cache_dir = Some(value.into()),
                "WOC_STOP_LIST" => self.stop_list = Some(value.into()),
                "WOC_OBJECT_SHARD_BITS" => self.object_shard_bits = num(&var, &value)?,
                "WOC_MAP_SHARD_BITS" => self.map_shard_bits = num(&var, &value)?,
                "WOC_PATHOLOGICAL_COMMIT_CAP" => self.pathological_commit_cap = num(&var, &value)?,
                "WOC_UBIQUITOUS_BLOB_CAP" => self.ubiquitous_blob_cap = num(&var, &value)?,
                "WOC_MIN_SHARED_COMMITS" => self.min_shared_commits = num(&var, &value)?,
                "WOC_EMAIL_THRESHOLD" => self.thresholds.email = num(&var, &value)?,
                "WOC_NAME_THRESHOLD" => self.thresholds.name = num(&var, &value)?,
                "WOC_FILE_THRESHOLD" => self.thresholds.files = num(&var, &value)?,
                "WOC_BLOCKING_BUCKET_CAP" => self.blocking_bucket_cap = num(&var, &value)?,
                "WOC_SORT_MEMORY_MB" => self.sort_memory_mb = num(&var, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.shard_config()?;
        for (name, v) in [
            ("thresholds.email", self.thresholds.email),
            ("thresholds.name", self.thresholds.name),
            ("thresholds.files", self.thresholds.files),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} must be within [0, 1], got {v}")));
            }
        }
        if self.min_shared_commits == 0 {
            return Err(ConfigError::Invalid("min_shared_commits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn shard_config(&self) -> Result<ShardConfig, ConfigError> {
        ShardConfig::new(self.object_shard_bits, self.map_shard_bits)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            pathological_commit_cap: self.pathological_commit_cap,
            ubiquitous_blob_cap: self.ubiquitous_blob_cap,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.store_root.join("clones"))
    }

    pub fn stop_list(&self) -> Result<StopList, ConfigError> {
        match &self.stop_list {
            None => Ok(StopList::default()),
            Some(p) => fs::read_to_string(p)
                .map(|t| StopList::from_text(&t))
                .map_err(|source| ConfigError::Read {
                    path: p.clone(),
                    source,
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("woc.toml");
        fs::write(
            &path,
            "store_root = \"data\"\nmap_shard_bits = 3\n[thresholds]\nname = 0.8\n",
        )
        .unwrap();
        let cfg = Config::load(Some(&path), env(&[])).unwrap();
        assert_eq!(cfg.store_root, dir.path().join("data"));
        assert_eq!(cfg.map_shard_bits, 3);
        assert_eq!(cfg.thresholds.name, 0.8);
        assert_eq!(cfg.thresholds.email, 0.95);

        let cfg = Config::load(
            Some(&path),
            env(&[("WOC_MAP_SHARD_BITS", "4"), ("WOC_STORE_ROOT", "/x"), ("OTHER", "1")]),
        )
        .unwrap();
        assert_eq!(cfg.map_shard_bits, 4);
        assert_eq!(cfg.store_root, PathBuf::from("/x"));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "object_shard_bits = 9\n").unwrap();
        assert!(Config::load(Some(&path), env(&[])).is_err());
        fs::write(&path, "no_such_key = 1\n").unwrap();
        assert!(Config::load(Some(&path), env(&[])).is_err());
        fs::write(&path, "").unwrap();
        assert!(Config::load(Some(&path), env(&[("WOC_MAP_SHARD_BITS", "x")])).is_err());
        assert!(Config::load(Some(&path), env(&[("WOC_EMAIL_THRESHOLD", "1.5")])).is_err());
        assert!(Config::load(Some(&dir.path().join("missing.toml")), env(&[])).is_err());
    }
}
