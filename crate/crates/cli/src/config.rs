//! Plain-text `key = value` run configuration.
//!
//! Precedence everywhere: command-line flag, then `PPC_SEED` (seed
//! only), then the config file, then the built-in default. Every run
//! emits the fully resolved configuration next to its primary output so
//! the run can be reproduced exactly (`ppc <command> --config <file>.cfg`).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// A loaded config file plus the resolved values this run actually used.
#[derive(Debug, Default)]
pub struct RunConfig {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = match raw.find('#') {
                    Some(i) => &raw[..i],
                    None => raw,
                }
                .trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    bail!("{}:{}: expected key = value", path.display(), lineno + 1);
                };
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { file, resolved: BTreeMap::new() })
    }

    /// Resolve one value: flag > config file > default.
    pub fn pick<T: FromStr + Display>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse::<T>()
                    .map_err(|e| anyhow::anyhow!("config key `{key}` = `{raw}`: {e}"))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Resolve an optional value (no default).
    pub fn pick_opt<T: FromStr + Display>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse::<T>()
                        .map_err(|e| anyhow::anyhow!("config key `{key}` = `{raw}`: {e}"))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Resolve a required path: flag > config file, else an error.
    pub fn pick_path(&mut self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => PathBuf::from(raw),
                None => bail!("`{key}` must be given as a flag or config key"),
            },
        };
        self.resolved
            .insert(key.to_string(), value.display().to_string());
        Ok(value)
    }

    pub fn pick_path_opt(&mut self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        let value = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.display().to_string());
        }
        value
    }

    /// Resolve the seed: flag > PPC_SEED env > config file > default.
    pub fn pick_seed(&mut self, flag: Option<u64>, default: u64) -> Result<u64> {
        let from_env = match std::env::var("PPC_SEED") {
            Ok(raw) => Some(raw.parse::<u64>().context("PPC_SEED must be a u64")?),
            Err(_) => None,
        };
        self.pick(flag.or(from_env), "seed", default)
    }

    /// Record a value that was derived rather than chosen (for provenance).
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Write the resolved configuration for exact reproduction.
    pub fn emit(&self, command: &str, path: &Path) -> Result<()> {
        let mut out = format!("# resolved ppc configuration\ncommand = {command}\n");
        for (key, value) in &self.resolved {
            out.push_str(&format!("{key} = {value}\n"));
        }
        std::fs::write(path, out)
            .with_context(|| format!("writing resolved config {}", path.display()))?;
        Ok(())
    }
}

/// Default path of the emitted resolved config: alongside the output.
pub fn default_emit_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".cfg");
    PathBuf::from(os)
}
