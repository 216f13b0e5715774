//! Layered settings and run manifests.
//!
//! Each key resolves from, in increasing precedence: built-in default,
//! `--config` file, `MESHDERIV_SEED` (for `seed` only), command-line flag.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use meshderiv::dataset::write_atomic;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const SEED_ENV: &str = "MESHDERIV_SEED";

const COMMANDS: [&str; 5] = ["gen", "stencil-check", "train", "rollout", "eval"];

/// Every key any command accepts. Config files may hold keys for several
/// commands; anything outside this list is a typo.
const KNOWN_KEYS: &[&str] = &[
    "angle-max", "angle-min", "bumps", "cases", "cells", "cfl", "checkpoint", "data", "depth-channel",
    "dt", "epochs", "family", "frames", "full-grid", "global-keys", "important-nodes", "integrator",
    "jitter", "jobs", "k", "k-max", "k-min", "knn", "lr", "manifest-only", "mesh", "meshes", "n-test",
    "n-train", "n-val", "nx", "ny", "out", "pin", "policy", "pred", "preset", "raster", "rounds",
    "seed", "speed-max", "speed-min", "split", "ssim-resolution", "steps", "strict", "substeps",
    "ablate-mls",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

#[derive(Debug, Clone, Serialize)]
struct Resolved {
    value: String,
    source: Source,
}

pub struct Settings {
    command: &'static str,
    config_path: Option<PathBuf>,
    file: FileEntries,
    env_seed: Option<String>,
    resolved: BTreeMap<String, Resolved>,
}

/// Value and whether it was scoped to this command.
type FileEntries = BTreeMap<String, (String, bool)>;

fn parse_config(text: &str, command: &str) -> Result<FileEntries, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        let (key, scoped) = match key.split_once('.') {
            Some((scope, rest)) => {
                if !COMMANDS.contains(&scope) {
                    return Err(CliError::Config(format!("line {}: unknown command scope {scope:?}", n + 1)));
                }
                if scope != command {
                    check_known(rest, n)?;
                    continue;
                }
                (rest.to_string(), true)
            }
            None => (key, false),
        };
        check_known(&key, n)?;
        out.insert(key, (value, scoped));
    }
    Ok(out)
}

fn check_known(key: &str, line: usize) -> Result<(), CliError> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("line {}: unknown key {key:?}", line + 1)))
    }
}

impl Settings {
    pub fn load(command: &'static str, config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_config(&text, command).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })?
            }
            None => FileEntries::new(),
        };
        Ok(Self {
            command,
            config_path: config.map(Path::to_path_buf),
            file,
            env_seed: std::env::var(SEED_ENV).ok().filter(|v| !v.trim().is_empty()),
            resolved: BTreeMap::new(),
        })
    }

    fn layered(&self, key: &str) -> Option<(String, Source)> {
        if key == "seed" {
            if let Some(v) = &self.env_seed {
                return Some((v.trim().to_string(), Source::Env));
            }
        }
        self.file.get(key).map(|(v, _)| (v.clone(), Source::File))
    }

    fn record(&mut self, key: &str, value: String, source: Source) {
        self.resolved.insert(key.to_string(), Resolved { value, source });
    }

    fn parse<T: FromStr>(key: &str, raw: &str, source: Source) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key} = {raw:?} from {source:?}: {e}")))
    }

    /// Resolves `key` with a default.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or_else(|| {
            self.record(key, default.to_string(), Source::Default);
            default
        }))
    }

    /// Resolves `key` without a default.
    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        if let Some(v) = flag {
            self.record(key, v.to_string(), Source::Flag);
            return Ok(Some(v));
        }
        match self.layered(key) {
            Some((raw, source)) => {
                let v = Self::parse(key, &raw, source)?;
                self.record(key, raw, source);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// Like [`Settings::opt`] but an error when nothing sets the key.
    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Config(format!("`{key}` is required (flag --{key} or config file)")))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.required(key, flag.map(|p| p.display().to_string())).map(PathBuf::from)
    }

    /// Boolean switch: a present flag means true.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.get(key, flag.then_some(true), false)
    }

    fn unused(&self, scoped: bool) -> Vec<String> {
        self.file
            .iter()
            .filter(|(k, (_, s))| *s == scoped && !self.resolved.contains_key(*k))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Fails on keys scoped to this command that it never asked for.
    /// Unscoped keys are shared by all commands and may go unused.
    pub fn finish(&self) -> Result<(), CliError> {
        let unused = self.unused(true);
        if unused.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("keys {unused:?} do not apply to `{}`", self.command)))
        }
    }

    pub fn manifest(&self, details: Value) -> Manifest {
        Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_file: self.config_path.as_ref().map(|p| p.display().to_string()),
            config: self.resolved.clone(),
            ignored: self.unused(false),
            details,
        }
    }
}

/// Contents of `run.json`. Paths are recorded as given and nothing
/// time-dependent is written, so identical invocations give identical bytes.
#[derive(Serialize)]
pub struct Manifest {
    command: &'static str,
    version: &'static str,
    config_file: Option<String>,
    config: BTreeMap<String, Resolved>,
    ignored: Vec<String>,
    details: Value,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        write_atomic(&dir.join("run.json"), text.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_keys_and_comments() {
        let text = "seed = 4 # shared\n\ntrain.epochs = 20\neval.raster = true\ngen.k_min = 0.1\n";
        let m = parse_config(text, "train").unwrap();
        assert_eq!(m.get("seed"), Some(&("4".to_string(), false)));
        assert_eq!(m.get("epochs"), Some(&("20".to_string(), true)));
        assert_eq!(m.len(), 2);
        assert!(parse_config("epohcs = 3", "train").is_err());
        assert!(parse_config("fit.epochs = 3", "train").is_err());
        assert!(parse_config("gen.epohcs = 3", "train").is_err());
        assert!(parse_config("no equals sign", "train").is_err());
    }
}
