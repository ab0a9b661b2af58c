//! Flat `key = value` run configuration.
//!
//! Values come from the command line first, then the config file, then the
//! built-in default. Every value a command reads is recorded so the fully
//! resolved configuration can be written next to its outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::fail::{CliError, CliResult};

/// Every key a config file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "jobs",
    "out",
    "force",
    // phantom
    "patients",
    "prevalence",
    "inflammation_delta",
    "noise_sigma",
    "aux_coupling",
    "image_height",
    "image_width",
    "density_sigma",
    // preprocessing
    "manifest",
    "template",
    "roi_side",
    "no_normalize",
    "no_clahe",
    "clip_limit",
    "tiles",
    // training
    "folds",
    "epochs",
    "batch_size",
    "lr",
    "backbones",
    "net_size",
    "no_age",
    "no_sex",
    "no_augment",
    "augment_copies",
    "threshold",
    "threshold_score",
    "resamples",
    // evaluation
    "checkpoint",
];

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Default)]
pub struct RunConfig {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| CliError::invalid(format!("{origin} line {}: {msg}", n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(bad(format!("unknown key {k:?}")));
            }
            if file.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("key {k:?} given twice")));
            }
        }
        Ok(RunConfig {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Resolves `key` from the flag, the file or `default`, in that order.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text
                .parse()
                .map_err(|e| CliError::invalid(format!("config key {key}: {e}")))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`get`](Self::get) for keys without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(text)) => Some(
                text.parse()
                    .map_err(|e| CliError::invalid(format!("config key {key}: {e}")))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Boolean switch: a set flag wins, otherwise the file, otherwise off.
    pub fn switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        self.get(key, flag.then_some(true), false)
    }

    pub fn render(&self) -> String {
        self.resolved
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.render()).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut c = RunConfig::parse("epochs = 7\n# note\nlr = 0.01\n", "t").unwrap();
        assert_eq!(c.get("epochs", Some(3usize), 20).unwrap(), 3);
        assert_eq!(c.get("lr", None, 5e-3).unwrap(), 0.01);
        assert_eq!(c.get("batch_size", None, 16usize).unwrap(), 16);
        assert_eq!(c.render(), "batch_size = 16\nepochs = 3\nlr = 0.01\n");
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        assert!(RunConfig::parse("epoch = 3\n", "t").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", "t").is_err());
        assert!(RunConfig::parse("seed 1\n", "t").is_err());
    }

    #[test]
    fn bad_value_is_a_validation_error() {
        let mut c = RunConfig::parse("epochs = many\n", "t").unwrap();
        let err = c.get("epochs", None, 20usize).unwrap_err();
        assert_eq!(err.code, crate::fail::EXIT_INVALID);
    }

    #[test]
    fn switches() {
        let mut c = RunConfig::parse("no_age = true\n", "t").unwrap();
        assert!(c.switch("no_age", false).unwrap());
        assert!(c.switch("no_sex", true).unwrap());
        assert!(!c.switch("no_augment", false).unwrap());
    }
}
