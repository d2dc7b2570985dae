//! Flat TOML config files mirroring the command-line flags. Explicit flags
//! win over file values; file values win over built-in defaults.

use crate::errors::CliError;
use std::path::Path;

#[derive(Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config file {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        Ok(ConfigFile { table })
    }

    pub fn str(&self, key: &str) -> Option<String> {
        self.table.get(key).and_then(|v| v.as_str()).map(String::from)
    }

    pub fn str_list(&self, key: &str) -> Option<Vec<String>> {
        self.table.get(key).and_then(|v| v.as_array()).map(|a| {
            a.iter()
                .filter_map(|x| x.as_str().map(String::from))
                .collect()
        })
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.table
            .get(key)
            .and_then(|v| v.as_integer())
            .map(|v| v as u64)
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.table.get(key).and_then(|v| {
            v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
        })
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.table.get(key).and_then(|v| v.as_bool())
    }

    pub fn f64_list(&self, key: &str) -> Option<Vec<f64>> {
        self.table.get(key).and_then(|v| v.as_array()).map(|a| {
            a.iter()
                .filter_map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect()
        })
    }

    pub fn usize_list(&self, key: &str) -> Option<Vec<usize>> {
        self.table.get(key).and_then(|v| v.as_array()).map(|a| {
            a.iter()
                .filter_map(|x| x.as_integer().map(|i| i as usize))
                .collect()
        })
    }
}

/// CLI value, else config-file value, else default.
pub fn resolve<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// CLI value, else config-file value, else a usage error naming the flag.
pub fn require<T>(cli: Option<T>, file: Option<T>, flag: &str) -> Result<T, CliError> {
    cli.or(file)
        .ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}
