//! Run configuration: a flat `key = value` file merged with flag overrides,
//! plus the manifest written beside every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DatagenConfig;
use crate::policy::BootstrapConfig;
use crate::retrieval::Bm25Params;
use crate::reward::RewardConfig;
use crate::rollout::RolloutConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?}: cannot parse {value:?} as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub budget: usize,
    pub k: usize,
    pub initial_retrieval: bool,
    pub count_initial: bool,
    pub k1: f64,
    pub b: f64,
    pub r_max: f64,
    pub alpha: f64,
    pub tau: f64,
    pub mixture: f64,
    pub v: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub limit: Option<usize>,
    pub steps: usize,
    pub learning_rate: f64,
    pub candidates: usize,
    pub keep: usize,
    pub demos: usize,
    pub timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reward = RewardConfig::default();
        let bm25 = Bm25Params::default();
        let boot = BootstrapConfig::default();
        Self {
            budget: 6,
            k: crate::retrieval::DEFAULT_K,
            initial_retrieval: true,
            count_initial: true,
            k1: bm25.k1,
            b: bm25.b,
            r_max: reward.r_max,
            alpha: reward.alpha,
            tau: reward.tau,
            mixture: 0.9,
            v: crate::reward::DEFAULT_GROUP_SIZE,
            seed: 17,
            threads: None,
            limit: None,
            steps: 2000,
            learning_rate: 0.2,
            candidates: boot.candidate_count,
            keep: boot.keep,
            demos: boot.demos_per_set,
            timeout_secs: 30,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        key: key.to_owned(),
        value: value.to_owned(),
        expected,
    })
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value, expected).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        const U: &str = "a non-negative integer";
        const F: &str = "a number";
        const B: &str = "a boolean";
        let v = value.trim();
        match key.replace('-', "_").as_str() {
            "budget" => self.budget = parse(key, v, U)?,
            "k" => self.k = parse(key, v, U)?,
            "initial_retrieval" => self.initial_retrieval = parse(key, v, B)?,
            "count_initial" => self.count_initial = parse(key, v, B)?,
            "k1" => self.k1 = parse(key, v, F)?,
            "b" => self.b = parse(key, v, F)?,
            "r_max" => self.r_max = parse(key, v, F)?,
            "alpha" => self.alpha = parse(key, v, F)?,
            "tau" => self.tau = parse(key, v, F)?,
            "mixture" => self.mixture = parse(key, v, F)?,
            "v" => self.v = parse(key, v, U)?,
            "seed" => self.seed = parse(key, v, U)?,
            "threads" => self.threads = parse_opt(key, v, U)?,
            "limit" => self.limit = parse_opt(key, v, U)?,
            "steps" => self.steps = parse(key, v, U)?,
            "learning_rate" => self.learning_rate = parse(key, v, F)?,
            "candidates" => self.candidates = parse(key, v, U)?,
            "keep" => self.keep = parse(key, v, U)?,
            "demos" => self.demos = parse(key, v, U)?,
            "timeout_secs" => self.timeout_secs = parse(key, v, U)?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            budget: self.budget,
            k: self.k,
            initial_retrieval: self.initial_retrieval,
            count_initial_in_searches: self.count_initial,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            r_max: self.r_max,
            alpha: self.alpha,
            tau: self.tau,
            budget: self.budget,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn datagen(&self) -> DatagenConfig {
        DatagenConfig {
            rollout: self.rollout(),
            mixture: self.mixture,
            seed: self.seed,
        }
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            candidate_count: self.candidates,
            keep: self.keep,
            demos_per_set: self.demos,
            seed: self.seed,
        }
    }

    /// Checks every parameter against the owning module's preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.rollout().validate().map_err(|e| invalid(&e))?;
        self.reward().validate().map_err(|e| invalid(&e))?;
        self.bm25().validate().map_err(|e| invalid(&e))?;
        if !(0.0..=1.0).contains(&self.mixture) {
            return Err(ConfigError::Invalid(format!("mixture must be in [0, 1], got {}", self.mixture)));
        }
        if self.v < 2 {
            return Err(ConfigError::Invalid(format!("group size v must be >= 2, got {}", self.v)));
        }
        if self.threads == Some(0) {
            return Err(ConfigError::Invalid("threads must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ConfigError::Invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.keep == 0 || self.keep > self.candidates {
            return Err(ConfigError::Invalid(format!(
                "keep must be in [1, candidates = {}], got {}",
                self.candidates, self.keep
            )));
        }
        Ok(())
    }
}

/// Parses a flat `key = value` document; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_owned(), v.trim().trim_matches('"').to_owned()));
    }
    Ok(out)
}

/// Defaults, then the file (if any), then flag overrides. Validated.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        for (k, v) in parse_config_text(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.seed,
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, name: &str, value: impl std::fmt::Display) -> Self {
        self.inputs.insert(name.to_owned(), value.to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }
}

/// `<output>.manifest.json` next to the output.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write_manifest(output: &Path, manifest: &Manifest) -> std::io::Result<PathBuf> {
    let path = manifest_path(output);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_when_empty() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.budget, cfg.k, cfg.v), (6, 3, 8));
        assert_eq!((cfg.r_max, cfg.alpha, cfg.tau, cfg.mixture), (2.0, 1.0, 1.0, 0.9));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.conf");
        std::fs::write(&p, "").unwrap();
        assert_eq!(load_config(Some(&p), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# comment\nbudget = 4\nalpha = 0.5  # trailing\n").unwrap();
        let cfg = load_config(Some(&p), &ov(&[("budget", "6")])).unwrap();
        assert_eq!(cfg.budget, 6);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(load_config(Some(&p), &[]).unwrap().budget, 4);
    }

    #[test]
    fn unknown_key_and_type_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        std::fs::write(&p, "budgit = 4\n").unwrap();
        let err = load_config(Some(&p), &[]).unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("budgit".into()));
        assert!(err.to_string().contains("budgit"));
        std::fs::write(&p, "budget = four\n").unwrap();
        assert!(matches!(load_config(Some(&p), &[]), Err(ConfigError::Type { .. })));
        std::fs::write(&p, "budget\n").unwrap();
        assert_eq!(load_config(Some(&p), &[]), Err(ConfigError::Syntax { line: 1 }));
    }

    #[test]
    fn validation_cites_module_preconditions() {
        let err = load_config(None, &ov(&[("budget", "0")])).unwrap_err();
        assert!(err.to_string().contains("B must be >= 1"), "{err}");
        assert!(load_config(None, &ov(&[("mixture", "1.2")])).is_err());
        assert!(load_config(None, &ov(&[("tau", "2")])).is_err());
        assert!(load_config(None, &ov(&[("v", "1")])).is_err());
    }

    #[test]
    fn manifest_sits_beside_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rollouts.jsonl");
        let m = Manifest::new("rollout run", &RunConfig::default()).input("dataset", "d.jsonl").output(&out);
        let p = write_manifest(&out, &m).unwrap();
        assert_eq!(p, dir.path().join("rollouts.jsonl.manifest.json"));
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
