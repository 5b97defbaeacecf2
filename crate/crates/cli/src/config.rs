//! Optional config-file overlay. Keys mirror long flag names (`prune-threshold`
//! or `prune_threshold`); top-level keys apply to every subcommand and a table
//! named after the subcommand overrides them.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use micdt_core::Error;

const KNOWN_KEYS: &[&str] = &[
    "input",
    "out",
    "lags",
    "method",
    "prune-threshold",
    "seed",
    "no-standardize",
    "delimiter",
    "no-header",
    "time-column",
    "contrast",
    "strategy",
    "max-iter",
    "tol",
    "kalman-q",
    "kalman-r",
    "kalman-p0",
    "pairs",
    "pretty",
    "model",
    "threshold",
    "format",
    "uncorrected",
    "raw-units",
    "min-width",
    "max-width",
    "samples",
    "noise",
    "burn-in",
    "edit",
    "combine",
];
const SUBCOMMANDS: &[&str] = &["fit", "granger", "graph", "simulate", "counterfactual"];

#[derive(Debug, Default)]
pub struct Overlay {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.replace('_', "-")
}

fn scalar_to_string(key: &str, value: &serde_json::Value) -> Result<String, Error> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Array(items) => items
            .iter()
            .map(|v| scalar_to_string(key, v))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.join("\n")),
        _ => Err(Error::InvalidArgument(format!(
            "config key {key:?} must be a scalar or list"
        ))),
    }
}

impl Overlay {
    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path, subcommand: &str) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let root: serde_json::Value = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?
        } else {
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
            serde_json::to_value(table).map_err(|e| Error::InvalidArgument(e.to_string()))?
        };
        let serde_json::Value::Object(map) = root else {
            return Err(Error::InvalidArgument(
                "config file must hold a table of keys".into(),
            ));
        };
        Self::from_map(&map, subcommand)
    }

    fn from_map(
        map: &serde_json::Map<String, serde_json::Value>,
        subcommand: &str,
    ) -> Result<Self, Error> {
        let mut values = BTreeMap::new();
        let mut section = None;
        for (key, value) in map {
            let key = normalize(key);
            if SUBCOMMANDS.contains(&key.as_str()) {
                let serde_json::Value::Object(inner) = value else {
                    return Err(Error::InvalidArgument(format!(
                        "config section {key:?} must be a table"
                    )));
                };
                if key == subcommand {
                    section = Some(inner);
                }
                for k in inner.keys() {
                    check_known(&normalize(k))?;
                }
                continue;
            }
            check_known(&key)?;
            values.insert(key.clone(), scalar_to_string(&key, value)?);
        }
        if let Some(inner) = section {
            for (key, value) in inner {
                let key = normalize(key);
                values.insert(key.clone(), scalar_to_string(&key, value)?);
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| Error::InvalidArgument(format!("config key {key:?}: {e}")))
            })
            .transpose()
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.values
            .get(key)
            .map(|raw| raw.lines().map(str::to_string).collect())
            .unwrap_or_default()
    }
}

fn check_known(key: &str) -> Result<(), Error> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "unknown config key {key:?}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overlay(text: &str, sub: &str) -> Result<Overlay, Error> {
        let table: toml::Table = text.parse().unwrap();
        let serde_json::Value::Object(map) = serde_json::to_value(table).unwrap() else {
            unreachable!()
        };
        Overlay::from_map(&map, sub)
    }

    #[test]
    fn section_overrides_top_level() {
        let o = overlay(
            "seed = 3\nlags = 2\n[fit]\nlags = 4\n[graph]\nlags = 9\n",
            "fit",
        )
        .unwrap();
        assert_eq!(o.get::<u64>("seed").unwrap(), Some(3));
        assert_eq!(o.get::<usize>("lags").unwrap(), Some(4));
    }

    #[test]
    fn underscores_and_lists() {
        let o = overlay(
            "prune_threshold = 0.1\nedit = [\"structural:a->b=0\", \"lag1:b->a=0.3\"]\n",
            "counterfactual",
        )
        .unwrap();
        assert_eq!(o.get::<f64>("prune-threshold").unwrap(), Some(0.1));
        assert_eq!(o.list("edit").len(), 2);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(overlay("colour = 1\n", "fit").is_err());
        assert!(overlay("[fit]\ncolour = 1\n", "graph").is_err());
        let o = overlay("lags = \"three\"\n", "fit").unwrap();
        assert!(o.get::<usize>("lags").is_err());
    }
}
