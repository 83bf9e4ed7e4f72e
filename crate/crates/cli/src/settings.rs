//! Flat key=value settings merged from defaults, a config file and flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use everywhere::attack::{parse_kv, AttackConfig};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Keys understood by at least one subcommand, besides the attack keys.
const RUN_KEYS: &[&str] = &[
    "archs",
    "batch_size",
    "count",
    "data",
    "epochs",
    "format",
    "images",
    "learning_rate",
    "losses",
    "mode",
    "modes",
    "param",
    "save_examples",
    "surrogate",
    "targets",
    "test_data",
    "threshold",
    "values",
    "zoo",
];

/// Keys that never change results and are left out of the config hash.
const UNHASHED: &[&str] = &["out", "jobs"];

/// Resolved settings: CLI flag > config file > default.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(
        file: Option<&Path>,
        sets: &[String],
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            values.extend(parse_kv(&text).map_err(CliError::config)?);
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        for k in values.keys() {
            if !(AttackConfig::is_key(k) || RUN_KEYS.contains(&k.as_str()) || UNHASHED.contains(&k.as_str())) {
                return Err(CliError::config(format!("unknown setting {k:?}")));
            }
        }
        Ok(Settings { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.raw(key)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::config(format!("missing required setting {key}")))
    }

    /// Comma-separated list with a default.
    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>, CliError> {
        let text = self.raw(key).unwrap_or(default);
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::config(format!("cannot parse {key} item {s:?}")))
            })
            .collect()
    }

    /// Attack hyperparameters: defaults overridden by any attack keys here.
    pub fn attack_config(&self) -> Result<AttackConfig, CliError> {
        AttackConfig::from_pairs(
            self.values
                .iter()
                .filter(|(k, _)| AttackConfig::is_key(k))
                .map(|(k, v)| (k.as_str(), v.as_str())),
        )
        .map_err(CliError::config)
    }

    /// Output directory: the `out` setting, else `$EVERYWHERE_OUT/<command>`,
    /// else `runs/<command>`.
    pub fn out_dir(&self, command: &str) -> PathBuf {
        match self.raw("out") {
            Some(p) => PathBuf::from(p),
            None => std::env::var_os(crate::OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(command),
        }
    }

    /// Settings that affect results, with the attack config fully expanded.
    pub fn canonical(&self, attack: Option<&AttackConfig>) -> BTreeMap<String, String> {
        let mut m: BTreeMap<String, String> = self
            .values
            .iter()
            .filter(|(k, _)| !UNHASHED.contains(&k.as_str()) && !AttackConfig::is_key(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(cfg) = attack {
            m.extend(cfg.to_map().into_iter().map(|(k, v)| (k.to_string(), v)));
        } else if let Some(seed) = self.raw("seed") {
            m.insert("seed".into(), seed.to_string());
        }
        m
    }
}

pub fn hash_settings(command: &str, m: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(format!("command={command}\n"));
    for (k, v) in m {
        h.update(format!("{k}={v}\n"));
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.cfg");
        fs::write(&f, "iterations = 7\nsamples=2 # comment\n").unwrap();
        let s = Settings::resolve(Some(&f), &[], vec![("samples", Some("1".into())), ("loss", None)]).unwrap();
        let cfg = s.attack_config().unwrap();
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.samples, 1);
        assert_eq!(cfg.partitions, AttackConfig::default().partitions);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = Settings::resolve(None, &["bogus=1".into()], vec![]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = Settings::resolve(None, &["out=/a".into(), "zoo=z".into()], vec![]).unwrap();
        let b = Settings::resolve(None, &["out=/b".into(), "zoo=z".into(), "jobs=3".into()], vec![]).unwrap();
        let cfg = AttackConfig::default();
        assert_eq!(
            hash_settings("eval", &a.canonical(Some(&cfg))),
            hash_settings("eval", &b.canonical(Some(&cfg)))
        );
        assert_ne!(
            hash_settings("eval", &a.canonical(Some(&cfg))),
            hash_settings("dtuap", &a.canonical(Some(&cfg)))
        );
    }
}
