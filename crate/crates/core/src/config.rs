//! JSON configuration with one section per subcommand.
//!
//! Settings resolve as command line, then file section, then defaults:
//! [`overlay`] lays the non-null command-line values over the file section
//! and the result is deserialized with serde defaults filling the rest.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{domain, Result};

/// Section names accepted in a configuration file.
pub const SECTIONS: [&str; 7] = [
    "simulate",
    "weights",
    "estimate",
    "tune",
    "test",
    "bench_est",
    "bench_test",
];

/// Parsed configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let Value::Object(sections) = v else {
            return domain("configuration must be a JSON object with one section per subcommand");
        };
        if let Some(bad) = sections.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return domain(format!(
                "unknown configuration section {bad:?}; expected one of {SECTIONS:?}"
            ));
        }
        if let Some((k, _)) = sections.iter().find(|(_, v)| !v.is_object()) {
            return domain(format!("configuration section {k:?} must be an object"));
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Value {
        self.sections
            .get(name)
            .cloned()
            .unwrap_or_else(|| Value::Object(Map::new()))
    }
}

/// `base` with every non-null entry of `top` written over it, recursing into
/// objects.
pub fn overlay(base: Value, top: Value) -> Value {
    match (base, top) {
        (Value::Object(mut b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                let merged = match b.remove(&k) {
                    Some(old) => overlay(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (b, Value::Null) => b,
        (_, t) => t,
    }
}

/// Resolves `cli` against section `name` of `file`.
pub fn resolve<T: Serialize + DeserializeOwned>(
    cli: &T,
    file: Option<&ConfigFile>,
    name: &str,
) -> Result<T> {
    let base = file
        .map(|f| f.section(name))
        .unwrap_or_else(|| Value::Object(Map::new()));
    let merged = overlay(base, serde_json::to_value(cli)?);
    serde_json::from_value(merged)
        .map_err(|e| crate::Error::Domain(format!("configuration section {name:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Opts {
        alpha: Option<f64>,
        seed: Option<u64>,
        out: Option<String>,
    }

    #[test]
    fn precedence() {
        let file = ConfigFile::parse(r#"{"test": {"alpha": 0.1, "seed": 7}}"#).unwrap();
        let cli = Opts {
            alpha: Some(0.01),
            ..Default::default()
        };
        let r = resolve(&cli, Some(&file), "test").unwrap();
        assert_eq!(
            r,
            Opts {
                alpha: Some(0.01),
                seed: Some(7),
                out: None
            }
        );
        let r = resolve(&Opts::default(), None, "test").unwrap();
        assert_eq!(r, Opts::default());
    }

    #[test]
    fn nested_overlay() {
        let a = serde_json::json!({"solver": {"tol": 1e-6, "max_iter": 10}, "p": 20});
        let b = serde_json::json!({"solver": {"tol": 1e-8}, "p": null});
        assert_eq!(
            overlay(a, b),
            serde_json::json!({"solver": {"tol": 1e-8, "max_iter": 10}, "p": 20})
        );
    }

    #[test]
    fn rejects_unknown_sections() {
        assert!(ConfigFile::parse(r#"{"estimat": {}}"#).is_err());
        assert!(ConfigFile::parse(r#"[1, 2]"#).is_err());
        assert!(ConfigFile::parse(r#"{"test": 3}"#).is_err());
    }
}
