//! Flat, versioned `name = value` parameter files.
//!
//! ```text
//! mpcx-params/1
//! # comment
//! heat_gain = 6.0
//! threshold.T_min = 1e-6
//! ```
//!
//! Keys are written in sorted order so files are byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const PARAMS_HEADER: &str = "mpcx-params/1";

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("cannot access parameter file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing or unsupported header (expected `{PARAMS_HEADER}`)")]
    Header,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing parameter `{0}`")]
    Missing(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamFile {
    values: BTreeMap<String, f64>,
}

impl ParamFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn require(&self, key: &str) -> Result<f64, ParamsError> {
        self.get(key).ok_or_else(|| ParamsError::Missing(key.to_string()))
    }

    pub fn get_or(&self, key: &str, default: f64) -> f64 {
        self.get(key).unwrap_or(default)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        self.values.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, *v))
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .by_ref()
            .map(|(_, l)| l.trim())
            .find(|l| !l.is_empty() && !l.starts_with('#'));
        if header != Some(PARAMS_HEADER) {
            return Err(ParamsError::Header);
        }
        let mut values = BTreeMap::new();
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ParamsError::Syntax {
                line: i + 1,
                message: "expected `name = value`".into(),
            })?;
            let key = key.trim();
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(ParamsError::Syntax {
                    line: i + 1,
                    message: format!("invalid key `{key}`"),
                });
            }
            let value: f64 = value.trim().parse().map_err(|_| ParamsError::Syntax {
                line: i + 1,
                message: format!("`{}` is not a number", value.trim()),
            })?;
            if values.insert(key.to_string(), value).is_some() {
                return Err(ParamsError::Syntax {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn render(&self) -> String {
        let mut out = String::from(PARAMS_HEADER);
        out.push('\n');
        for (k, v) in &self.values {
            // `{:?}` keeps the shortest representation that round-trips.
            let _ = writeln!(out, "{k} = {v:?}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.render()).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl FromIterator<(String, f64)> for ParamFile {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_sections() {
        let text = "# greenhouse\nmpcx-params/1\nheat = 6\n\nthreshold.T_min = 1e-6\n";
        let p = ParamFile::parse(text).unwrap();
        assert_eq!(p.get("heat"), Some(6.0));
        let section: Vec<_> = p.section("threshold").collect();
        assert_eq!(section, vec![("T_min", 1e-6)]);
    }

    #[test]
    fn rejects_missing_header() {
        assert!(matches!(ParamFile::parse("a = 1\n"), Err(ParamsError::Header)));
    }

    #[test]
    fn rejects_bad_values_with_line_number() {
        let err = ParamFile::parse("mpcx-params/1\na = x\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn rejects_duplicates() {
        assert!(ParamFile::parse("mpcx-params/1\na = 1\na = 2\n").is_err());
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(entries in proptest::collection::btree_map("[a-z][a-z0-9_.]{0,8}", -1e12f64..1e12, 0..12)) {
            let p: ParamFile = entries.into_iter().collect();
            let back = ParamFile::parse(&p.render()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
