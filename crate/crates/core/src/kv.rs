//! Flat `key = value` text used by scene specs and pipeline configs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parse `key = value` lines; `#` starts a comment. Duplicate keys are
/// rejected so a config never silently overrides itself.
pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, format!("line {}: expected key = value", lineno + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::parse(path, format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::parse(
                path,
                format!("line {}: duplicate key {key:?}", lineno + 1),
            ));
        }
    }
    Ok(out)
}

/// Typed access to a parsed key-value map that tracks which keys were read.
pub struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Fields { map }
    }

    /// Remove and parse `key`, keeping `default` when absent.
    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn take_opt(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn take_list(&mut self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => parse_list(&v).map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    /// Fail on the first key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.map.into_keys().next() {
            Some(k) => Err(Error::Config(format!("{k}: unknown key"))),
            None => Ok(()),
        }
    }
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let m = parse_kv("# header\n a = 1 \nb=two # trailing\n\n", Path::new("x")).unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two");
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert!(parse_kv("a 1", Path::new("x")).is_err());
        assert!(parse_kv("a = 1\na = 2", Path::new("x")).is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let mut f = Fields::new(parse_kv("alpha = 1\nbogus = 3", Path::new("x")).unwrap());
        assert_eq!(f.take("alpha", 0usize).unwrap(), 1);
        match f.finish() {
            Err(Error::Config(m)) => assert!(m.contains("bogus")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lists_round_trip() {
        let v = vec![0.9, -0.3, 1e-17];
        assert_eq!(parse_list(&format_list(&v)).unwrap(), v);
        assert_eq!(parse_list("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
