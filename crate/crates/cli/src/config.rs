//! Flat `key = value` run configuration: built-in defaults, then an optional
//! file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Bad flags, config keys or values. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    command: &'static str,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines. `#` starts a comment.
pub fn parse_pairs(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected `key = value`", i + 1)));
        };
        let key = k.trim().replace('-', "_");
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(usage(format!("config line {}: `{key}` given twice", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merges `file` and then `overrides` over `defaults`. Keys outside the
    /// defaults are rejected. `defaults` may depend on the merged values (for
    /// instance on `profile`), so it is called with the user-supplied pairs.
    pub fn resolve(
        command: &'static str,
        defaults: impl Fn(&BTreeMap<String, String>) -> Vec<(&'static str, String)>,
        file: Option<&Path>,
        overrides: Vec<(String, String)>,
    ) -> anyhow::Result<Self> {
        let mut given = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            given.extend(parse_pairs(&text)?);
        }
        given.extend(overrides);
        let mut values: BTreeMap<String, String> = defaults(&given).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in given {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(usage(format!("unknown config key `{k}` for {command}"))),
            }
        }
        Ok(RunConfig { command, values })
    }

    pub fn raw_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` is not a {} key", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| usage(format!("{key} = `{raw}`: {e}")))
    }

    /// `None` for an empty value or `none`.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// A value that must be present.
    pub fn required(&self, key: &str) -> anyhow::Result<String> {
        match self.raw(key) {
            "" => Err(usage(format!("`{key}` is required for {}", self.command))),
            v => Ok(v.to_string()),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("# {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Writes the resolved configuration as `run.cfg` in `dir`.
    pub fn save_in(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run.cfg"), self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(_: &BTreeMap<String, String>) -> Vec<(&'static str, String)> {
        vec![("seed", "0".into()), ("out", String::new())]
    }

    #[test]
    fn overrides_win_over_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cfg");
        std::fs::write(&path, "# comment\nseed = 4\nout=x # trailing\n").unwrap();
        let c = RunConfig::resolve("test", defaults, Some(&path), vec![("seed".into(), "9".into())]).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 9);
        assert_eq!(c.required("out").unwrap(), "x");
        let again = RunConfig::resolve("test", defaults, None, parse_pairs(&c.render()).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_and_malformed_entries_are_usage_errors() {
        for text in ["colour = red", "seed", "seed = 1\nseed = 2"] {
            let err = parse_pairs(text).and_then(|p| RunConfig::resolve("test", defaults, None, p)).unwrap_err();
            assert!(err.is::<UsageError>(), "{text}");
        }
        let c = RunConfig::resolve("test", defaults, None, vec![]).unwrap();
        assert!(c.required("out").is_err());
        assert!(c.get::<u64>("out").is_err());
    }
}
