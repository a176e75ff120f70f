//! Layered settings: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Keys a config file may set at top level for every command.
pub const COMMON_KEYS: [&str; 3] = ["seed", "out", "threads"];

pub const OUT_ENV: &str = "LSTM_LRP_OUT";
pub const DEFAULT_OUT: &str = "lstm-lrp-out";

/// Parsed config file, split into common keys and per-command tables.
#[derive(Debug, Default)]
pub struct FileConfig {
    common: Map<String, Value>,
    sections: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: &Path, sections: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let value = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(CliError::Config("config file must be a table".into()));
        };
        let mut cfg = FileConfig::default();
        for (k, v) in map {
            if COMMON_KEYS.contains(&k.as_str()) {
                cfg.common.insert(k, v);
            } else if sections.contains(&k.as_str()) && v.is_object() {
                cfg.sections.insert(k, v);
            } else {
                return Err(CliError::Config(format!("unknown config key `{k}`")));
            }
        }
        Ok(cfg)
    }

    pub fn common(&self, key: &str) -> Option<&Value> {
        self.common.get(key)
    }

    /// The common seed (when the command takes one) overlaid by the section table.
    fn layer(&self, section: &str, takes_seed: bool) -> Map<String, Value> {
        let mut out = Map::new();
        if let (true, Some(seed)) = (takes_seed, self.common.get("seed")) {
            out.insert("seed".into(), seed.clone());
        }
        if let Some(Value::Object(t)) = self.sections.get(section) {
            out.extend(t.clone());
        }
        out
    }
}

/// Serializes flag values, dropping the ones left unset.
fn set_flags<F: Serialize>(flags: &F) -> Map<String, Value> {
    match serde_json::to_value(flags).expect("flags serialize") {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Merges defaults, the file's section for `section`, and flags.
pub fn resolve<S, F>(file: &FileConfig, section: &str, flags: &F) -> Result<S, CliError>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(S::default()).expect("defaults serialize") else {
        unreachable!("settings are structs")
    };
    let takes_seed = merged.contains_key("seed");
    for layer in [file.layer(section, takes_seed), set_flags(flags)] {
        for (k, v) in layer {
            if !merged.contains_key(&k) {
                return Err(CliError::Config(format!("`{k}` is not a {section} setting")));
            }
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("{section}: {e}")))
}

/// Output directory: flag, then config file, then environment, then default.
pub fn out_dir(flag: Option<&PathBuf>, file: &FileConfig) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    if let Some(v) = file.common("out") {
        return v
            .as_str()
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config("`out` must be a string".into()));
    }
    Ok(std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))
}

pub fn threads(flag: Option<usize>, file: &FileConfig) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.common("threads") {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .filter(|&n| n > 0)
            .map(|n| Some(n as usize))
            .ok_or_else(|| CliError::Config("`threads` must be a positive integer".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize)]
    struct Seeded {
        seed: u64,
        n: usize,
    }

    #[derive(Debug, Default, Serialize, Deserialize)]
    struct Unseeded {
        n: usize,
    }

    #[derive(Serialize)]
    struct Flags {
        n: Option<usize>,
    }

    fn file(text: &str) -> FileConfig {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        FileConfig::load(&path, &["a"]).unwrap()
    }

    #[test]
    fn layers_apply_in_order() {
        let f = file("seed = 5\n[a]\nn = 2\n");
        let s: Seeded = resolve(&f, "a", &Flags { n: None }).unwrap();
        assert_eq!((s.seed, s.n), (5, 2));
        let s: Seeded = resolve(&f, "a", &Flags { n: Some(9) }).unwrap();
        assert_eq!((s.seed, s.n), (5, 9));
        let s: Seeded = resolve(&FileConfig::default(), "a", &Flags { n: None }).unwrap();
        assert_eq!((s.seed, s.n), (0, 0));
    }

    #[test]
    fn common_seed_skips_commands_without_one() {
        let f = file("seed = 5\n");
        let s: Unseeded = resolve(&f, "a", &Flags { n: None }).unwrap();
        assert_eq!(s.n, 0);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_config_errors() {
        let f = file("[a]\nm = 1\n");
        let e = resolve::<Seeded, _>(&f, "a", &Flags { n: None }).unwrap_err();
        assert!(matches!(e, CliError::Config(m) if m.contains("`m`")));
        let f = file("[a]\nn = \"x\"\n");
        assert!(matches!(resolve::<Seeded, _>(&f, "a", &Flags { n: None }), Err(CliError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "b = 1\n").unwrap();
        assert!(matches!(FileConfig::load(&path, &["a"]), Err(CliError::Config(_))));
    }

    #[test]
    fn threads_must_be_positive() {
        assert_eq!(threads(Some(2), &file("threads = 4\n")).unwrap(), Some(2));
        assert_eq!(threads(None, &file("threads = 4\n")).unwrap(), Some(4));
        assert!(threads(None, &file("threads = 0\n")).is_err());
    }
}
