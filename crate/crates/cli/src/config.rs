//! Option resolution: command-line flags, then the TOML config file, then
//! built-in defaults.
//!
//! The config file holds `key = value` pairs at the top level, optionally
//! overridden per subcommand in a `[subcommand]` table. Keys are the flag
//! names with `_` for `-` (`q_free`, `burn_in`, ...).

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

pub struct Settings {
    table: toml::Table,
    section: String,
    pub resolved: BTreeMap<String, serde_json::Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &str) -> Result<Self, Failure> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
            }
        };
        Ok(Settings {
            table,
            section: section.to_string(),
            resolved: BTreeMap::new(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&toml::Value> {
        self.table
            .get(&self.section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    fn from_config<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, Failure> {
        match self.lookup(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| Failure::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.resolved.insert(key.to_string(), v);
    }

    /// Resolved option with a default.
    pub fn value<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, Failure> {
        let v = match flag {
            Some(v) => v,
            None => self.from_config(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Resolved option without a default.
    pub fn optional<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, Failure> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_config(key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Boolean switch: set on the command line, or by the config file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, Failure> {
        let v = flag || self.from_config(key)?.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }
}
