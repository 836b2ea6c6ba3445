//! One directory per command invocation, named `<command>-<confighash>`,
//! closed by a `provenance.json` manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// sha256 of each top-level file; directories hash their sorted contents.
    pub files: BTreeMap<String, String>,
}

pub fn read_provenance(dir: &Path) -> Option<Provenance> {
    let text = std::fs::read_to_string(dir.join(PROVENANCE_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Fails with a missing-dependency error unless `dir` was written by `command`.
pub fn require_run(dir: &Path, command: &str) -> Result<Provenance, CliError> {
    let p = read_provenance(dir).ok_or_else(|| {
        CliError::Missing(format!("{} is not a finished run directory (no {PROVENANCE_FILE})", dir.display()))
    })?;
    if p.command != command {
        return Err(CliError::Missing(format!("{} was written by `{}`, expected `{command}`", dir.display(), p.command)));
    }
    Ok(p)
}

#[derive(Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub command: String,
    pub hash: String,
    pub seed: u64,
    canonical: String,
}

impl Run {
    pub fn create(cfg: &Config, command: &str, prefixes: &[&str]) -> Result<Self, CliError> {
        let hash = cfg.hash(prefixes);
        let dir = PathBuf::from(cfg.raw("out")).join(format!("{command}-{hash}"));
        if dir.join(PROVENANCE_FILE).exists() {
            std::fs::remove_file(dir.join(PROVENANCE_FILE))?;
        }
        std::fs::create_dir_all(&dir)?;
        log::info!("run directory {}", dir.display());
        Ok(Self { dir, command: command.into(), hash, seed: cfg.get("seed")?, canonical: cfg.canonical(prefixes) })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Provenance lines, without comment markers.
    pub fn header(&self) -> Vec<String> {
        vec![
            format!("mtriage {VERSION}"),
            format!("command {}", self.command),
            format!("config {}", self.hash),
            format!("seed {}", self.seed),
        ]
    }

    /// Writes `body` behind `# `-prefixed provenance and `extra` lines.
    pub fn write_text(&self, name: &str, extra: &[String], body: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for line in self.header().iter().chain(extra) {
            writeln!(f, "# {line}")?;
        }
        f.write_all(body)?;
        f.flush()?;
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        std::fs::write(self.path(CONFIG_FILE), &self.canonical)?;
        let mut files = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(&self.dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name == PROVENANCE_FILE {
                continue;
            }
            files.insert(name, digest_path(&e.path())?);
        }
        let p = Provenance {
            tool: "mtriage".into(),
            version: VERSION.into(),
            command: self.command.clone(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            files,
        };
        std::fs::write(self.path(PROVENANCE_FILE), serde_json::to_string_pretty(&p)? + "\n")?;
        Ok(self.dir)
    }
}

fn digest_path(path: &Path) -> std::io::Result<String> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        let mut h = Sha256::new();
        for e in entries {
            h.update(e.file_name().to_string_lossy().as_bytes());
            h.update(digest_path(&e.path())?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    } else {
        Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
    }
}
