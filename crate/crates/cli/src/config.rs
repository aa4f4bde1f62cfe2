//! Layered settings: built-in defaults, then command-line flags, then the
//! config file. The file wins when it disagrees with a flag.

use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::Failure;

pub const CONFIG_ENV: &str = "BELTRACK_CONFIG";

/// Sections accepted in a config file.
const SECTIONS: &[&str] = &["input", "tracker", "aggregation", "metrics", "sim"];

pub struct Settings {
    file: Option<(PathBuf, Table)>,
    flags: Table,
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn same(a: &Value, b: &Value) -> bool {
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

pub fn load_file(path: &Path) -> Result<Table, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    for (key, value) in &table {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(Failure::Config(format!(
                "{}: unknown section [{key}], expected one of {}",
                path.display(),
                SECTIONS.join(", ")
            )));
        }
        if !value.is_table() {
            return Err(Failure::Config(format!("{}: `{key}` must be a table", path.display())));
        }
    }
    Ok(table)
}

impl Settings {
    /// `explicit` comes from `--config`; otherwise `BELTRACK_CONFIG` is consulted.
    pub fn new(explicit: Option<&Path>) -> Result<Self, Failure> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        let file = match path {
            Some(p) => {
                let table = load_file(&p)?;
                Some((p, table))
            }
            None => None,
        };
        Ok(Self {
            file,
            flags: Table::new(),
        })
    }

    /// Records explicitly given flags for `section`. `flags` serializes only
    /// the options the user actually passed.
    pub fn add_flags<T: Serialize>(&mut self, section: &str, flags: &T) -> Result<(), Failure> {
        let table = Table::try_from(flags).map_err(|e| Failure::Config(e.to_string()))?;
        let entry = self
            .flags
            .entry(section)
            .or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(existing) = entry {
            existing.extend(table);
        }
        Ok(())
    }

    fn file_section(&self, section: &str) -> Option<(&Path, &Table)> {
        let (path, table) = self.file.as_ref()?;
        table
            .get(section)
            .and_then(Value::as_table)
            .map(|t| (path.as_path(), t))
    }

    /// Resolves one section into its typed configuration.
    pub fn resolve<T: DeserializeOwned + Serialize + Default>(&self, section: &str) -> Result<T, Failure> {
        let mut merged = self
            .flags
            .get(section)
            .and_then(Value::as_table)
            .cloned()
            .unwrap_or_default();
        if let Some((path, from_file)) = self.file_section(section) {
            let known = Table::try_from(T::default()).map_err(|e| Failure::Config(e.to_string()))?;
            for (key, value) in from_file {
                if !known.contains_key(key) && !optional_keys(section).contains(&key.as_str()) {
                    return Err(Failure::Config(format!(
                        "{}: unknown key `{key}` in [{section}]",
                        path.display()
                    )));
                }
                if let Some(flag) = merged.get(key) {
                    if !same(flag, value) {
                        warn!(
                            "{section}.{key}: config file {} sets {value}, overriding command-line {flag}",
                            path.display()
                        );
                    }
                }
                merged.insert(key.clone(), value.clone());
            }
        }
        Value::Table(merged)
            .try_into()
            .map_err(|e| Failure::Config(format!("[{section}]: {e}")))
    }
}

/// Keys missing from a serialized default because their default is `None`.
fn optional_keys(section: &str) -> &'static [&'static str] {
    match section {
        "sim" => &["max_objects"],
        _ => &[],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use beltrack::tracker::TrackerConfig;

    fn settings(file: &str) -> Settings {
        Settings {
            file: Some((PathBuf::from("test.toml"), file.parse().unwrap())),
            flags: Table::new(),
        }
    }

    #[derive(Serialize)]
    struct Flags {
        high_score_threshold: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        max_frames_lost: Option<u64>,
    }

    #[test]
    fn file_overrides_flags() {
        let mut s = settings("[tracker]\nhigh_score_threshold = 0.7\n");
        s.add_flags(
            "tracker",
            &Flags {
                high_score_threshold: Some(0.5),
                max_frames_lost: Some(5),
            },
        )
        .unwrap();
        let t: TrackerConfig = s.resolve("tracker").unwrap();
        assert_eq!(t.high_score_threshold, 0.7);
        assert_eq!(t.max_frames_lost, 5);
        assert_eq!(t.low_score_threshold, 0.1);
    }

    #[test]
    fn integers_are_accepted_for_reals() {
        let s = settings("[tracker]\nhigh_score_threshold = 1\n");
        let t: TrackerConfig = s.resolve("tracker").unwrap();
        assert_eq!(t.high_score_threshold, 1.0);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let s = settings("[tracker]\nhigh_score = 0.7\n");
        assert!(matches!(s.resolve::<TrackerConfig>("tracker"), Err(Failure::Config(_))));
        let s = settings("[tracker]\nhigh_score_threshold = \"high\"\n");
        assert!(matches!(s.resolve::<TrackerConfig>("tracker"), Err(Failure::Config(_))));
    }

    #[test]
    fn nested_kalman_section() {
        let s = settings("[tracker.kalman]\nstd_position = 0.1\n");
        let t: TrackerConfig = s.resolve("tracker").unwrap();
        assert_eq!(t.kalman.std_position, 0.1);
        assert_eq!(t.kalman.std_velocity, 1.0 / 160.0);
    }

    #[test]
    fn missing_sections_fall_back_to_defaults() {
        let s = settings("");
        let t: TrackerConfig = s.resolve("tracker").unwrap();
        assert_eq!(t, TrackerConfig::default());
    }
}
