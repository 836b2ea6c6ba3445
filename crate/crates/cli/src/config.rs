//! Flat `key=value` configuration: built-in defaults, then a config file,
//! then `MTRIAGE_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// Every recognised key with its default. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "runs"),
    ("threads", "0"),
    // inputs
    ("corpus", ""),
    ("preprocessed", ""),
    ("model", ""),
    ("scores", ""),
    ("truth", ""),
    ("erosion", ""),
    ("muscle", ""),
    ("exclude", ""),
    ("session", ""),
    // synthetic corpus
    ("synth.n_images", "2000"),
    ("synth.outlier_rate", "0.005"),
    ("synth.p_mlo", "0.5"),
    ("synth.p_right", "0.5"),
    // network
    ("split", "0.6:0.1:0.3"),
    ("cvae.resize_h", "64"),
    ("cvae.resize_w", "32"),
    ("cvae.channels", "8"),
    ("cvae.latent_dim", "32"),
    ("cvae.learning_rate", "0.0005"),
    ("cvae.batch_size", "64"),
    ("cvae.epochs", "100"),
    // latent detectors
    ("detectors.fit_on", "train"),
    ("detectors.if_trees", "100"),
    ("detectors.if_subsample", "256"),
    ("detectors.lof_k", "20"),
    ("detectors.contamination", "0.005"),
    ("detectors.nu", "0.005"),
    ("latent.source", "mean"),
    // classical analysis
    ("erosion.threshold", "220"),
    ("erosion.kernel", "5"),
    ("erosion.iterations", "5"),
    ("muscle.lower_distance", "5"),
    ("muscle.canny_low", "170"),
    ("muscle.canny_high", "220"),
    ("muscle.hough_threshold", "50"),
    // evaluation
    ("eval.bootstraps", "20"),
    ("eval.split", ""),
    ("cascade.fractions", "0.01,0.02,0.05"),
    ("cascade.ensemble", "avg"),
    // triage service
    ("serve.addr", "127.0.0.1:8080"),
    ("serve.top_n", "200"),
    ("serve.fraction", ""),
    ("serve.policy", "confirmed"),
];

/// Keys that never change a command's artifacts and stay out of its hash.
const UNHASHED: &[&str] = &["out", "threads"];

pub fn env_name(key: &str) -> String {
    format!("MTRIAGE_{}", key.to_ascii_uppercase().replace('.', "_"))
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn defaults() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Layers a config file, the environment and `key=value` overrides.
    pub fn resolve<I>(file: Option<&Path>, env: I, overrides: &[String]) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut cfg = Self::defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
            cfg.merge_text(&text, &path.display().to_string())?;
        }
        let env: BTreeMap<String, String> = env.into_iter().filter(|(k, _)| k.starts_with("MTRIAGE_")).collect();
        for (key, _) in KEYS {
            if let Some(v) = env.get(&env_name(key)) {
                cfg.set(key, v)?;
            }
        }
        for name in env.keys() {
            if !KEYS.iter().any(|(k, _)| env_name(k) == *name) {
                log::warn!("ignoring unknown environment variable {name}");
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Lines of `key = value`; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("{key} item {s:?}: {e}"))))
            .collect()
    }

    /// An input path that must exist.
    pub fn input(&self, key: &str) -> Result<PathBuf, CliError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(CliError::Missing(format!("no {key} given (--{key} or {key}=...)")));
        }
        let p = PathBuf::from(raw);
        if !p.exists() {
            return Err(CliError::Missing(format!("{key} {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn optional_input(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.input(key).map(Some)
        }
    }

    /// Train/valid/test ratios, normalised to sum to 1.
    pub fn split(&self) -> Result<[f64; 3], CliError> {
        let parts: Vec<f64> = self
            .raw("split")
            .split(':')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("split: {e}")))?;
        let total: f64 = parts.iter().sum();
        if parts.len() != 3 || parts.iter().any(|p| !p.is_finite() || *p < 0.0) || parts[0] <= 0.0 || total <= 0.0 {
            return Err(CliError::Config(format!("split {:?} must be three non-negative ratios a:b:c with a > 0", self.raw("split"))));
        }
        Ok([parts[0] / total, parts[1] / total, parts[2] / total])
    }

    /// `key=value` lines for the keys that shape this command's output.
    /// Inputs are named by the run that produced them (or their content), so
    /// a pipeline replayed elsewhere hashes the same.
    pub fn canonical(&self, prefixes: &[&str]) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            if UNHASHED.contains(&k.as_str()) || !prefixes.iter().any(|p| k == p || k.starts_with(&format!("{p}."))) {
                continue;
            }
            let v = match k.as_str() {
                "corpus" | "preprocessed" | "model" | "scores" | "truth" | "erosion" | "muscle" | "exclude" | "session"
                    if !v.is_empty() =>
                {
                    input_identity(Path::new(v))
                }
                _ => v.clone(),
            };
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn hash(&self, prefixes: &[&str]) -> String {
        hex::encode(Sha256::digest(self.canonical(prefixes).as_bytes()))[..12].to_string()
    }
}

/// `run:<hash>` for a run directory, `run:<hash>/<file>` for a file inside
/// one, `sha256:<digest>` for other files, else the absolute path.
pub fn input_identity(path: &Path) -> String {
    let run_hash = |dir: &Path| crate::rundir::read_provenance(dir).map(|p| p.config_hash);
    if path.is_dir() {
        if let Some(h) = run_hash(path) {
            return format!("run:{h}");
        }
    } else if path.is_file() {
        if let (Some(h), Some(name)) = (path.parent().and_then(run_hash), path.file_name()) {
            return format!("run:{h}/{}", name.to_string_lossy());
        }
        if let Ok(bytes) = std::fs::read(path) {
            return format!("sha256:{}", hex::encode(Sha256::digest(&bytes)));
        }
    }
    std::fs::canonicalize(path).map_or_else(|_| path.display().to_string(), |p| p.display().to_string())
}
