//! Config resolution: defaults, then an optional checkpoint config, then
//! the JSON file, then `EXC_SEED` if the seed is still unset, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "EXC_SEED";

/// Tag keys of internally tagged enums; objects whose tags differ are
/// replaced instead of merged.
const TAGS: [&str; 2] = ["kind", "preset"];

pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = TAGS.iter().any(|t| o.get(*t).is_some_and(|v| b.get(*t) != Some(v)));
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets a dotted path, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        if k.is_empty() {
            bail!("empty key in config path '{path}'");
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == keys.len() {
            let mut slot = obj.remove(*k).unwrap_or(Value::Null);
            if slot.is_null() {
                slot = value;
            } else {
                merge(&mut slot, value);
            }
            obj.insert(k.to_string(), slot);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert(Value::Object(Map::new()));
    }
    Ok(())
}

fn get_path<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, k| v.get(k))
}

/// Parses `--set a.b=VALUE`; VALUE is JSON, or a bare string if it does
/// not parse as JSON.
pub fn parse_set(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').with_context(|| format!("--set expects PATH=VALUE, got '{s}'"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub struct Layers<'a> {
    pub file: Option<&'a Path>,
    /// Lower-priority defaults taken from a checkpoint, at a path.
    pub checkpoint: Option<(&'a str, Value)>,
    /// Where the job keeps its seed; `None` if the job has no seed.
    pub seed_path: Option<&'a str>,
    pub overrides: Vec<(String, Value)>,
}

pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}='{s}' is not an unsigned integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

pub fn resolve<T: Serialize + DeserializeOwned + Default>(layers: Layers) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some((path, ck)) = layers.checkpoint {
        set_path(&mut v, path, ck)?;
    }
    let mut seed_given = false;
    if let Some(f) = layers.file {
        let fv = read_file(f)?;
        if !fv.is_object() {
            bail!("config {} must be a JSON object", f.display());
        }
        seed_given = layers.seed_path.is_some_and(|p| get_path(&fv, p).is_some());
        merge(&mut v, fv);
    }
    if let (Some(p), false) = (layers.seed_path, seed_given) {
        if let Some(s) = env_seed()? {
            set_path(&mut v, p, Value::from(s))?;
        }
    }
    for (k, val) in layers.overrides {
        set_path(&mut v, &k, val)?;
    }
    serde_json::from_value(v).context("invalid configuration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep_but_retags() {
        let mut a = json!({"grid": {"preset": "coarse"}, "x": {"a": 1, "b": 2}});
        merge(&mut a, json!({"x": {"b": 3}, "grid": {"preset": "custom", "radial_points": 4}}));
        assert_eq!(a, json!({"grid": {"preset": "custom", "radial_points": 4}, "x": {"a": 1, "b": 3}}));
    }

    #[test]
    fn set_path_and_parse() {
        let mut v = json!({});
        set_path(&mut v, "a.b", json!(2)).unwrap();
        let (k, x) = parse_set("a.c=[1,2]").unwrap();
        set_path(&mut v, &k, x).unwrap();
        let (k, x) = parse_set("name=pbe").unwrap();
        set_path(&mut v, &k, x).unwrap();
        assert_eq!(v, json!({"a": {"b": 2, "c": [1, 2]}, "name": "pbe"}));
        assert!(parse_set("novalue").is_err());
    }
}
