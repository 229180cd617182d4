//! Layered configuration: defaults, then a TOML/JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::CliError;

/// Read a config file into a JSON value. `.json` files are parsed as JSON,
/// everything else as TOML.
pub fn load_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config `{}`: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config `{}`: {e}", path.display())))
    }
}

/// Recursively overlay `over` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults ← file ← flags, deserialized with a field path in any error.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Value>,
    flags: Value,
) -> Result<T, CliError> {
    let mut value = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(f) = file {
        if !f.is_object() {
            return Err(CliError::Usage("config file must contain a table at the top level".into()));
        }
        merge(&mut value, f);
    }
    merge(&mut value, flags);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Usage(format!("config error at `{path}`: {}", e.into_inner()))
    })
}

/// Builder for the nested JSON object of flag overrides.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    /// Set `dotted.path` to `v` when present.
    pub fn set<V: Serialize>(&mut self, path: &str, v: Option<V>) -> &mut Self {
        let Some(v) = v else { return self };
        let mut node = &mut self.0;
        let mut parts = path.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), serde_json::to_value(v).expect("flag serializes"));
                break;
            }
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("override path is a table");
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}
