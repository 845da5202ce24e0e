//! Flat `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored. Keys may appear once; each
//! consumer takes the keys it knows and rejects leftovers.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {line_no}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(config_err(format!("line {line_no}: empty key")));
            }
            if entries.insert(k.to_string(), (line_no, v.to_string())).is_some() {
                return Err(config_err(format!("line {line_no}: duplicate key `{k}`")));
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| config_err(format!("line {line}: `{key}` = `{v}`: {e}"))),
        }
    }

    /// Removes and parses a comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|e| config_err(format!("line {line}: `{key}` item `{item}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(config_err(format!("line {line}: unknown key `{k}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_leftovers() {
        let mut kv = KeyValues::parse("# header\nlr = 0.001\n\nchannels = 4, 8 # inline\nbogus = 1\n").unwrap();
        assert_eq!(kv.take::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(kv.take_list::<usize>("channels").unwrap(), Some(vec![4, 8]));
        assert_eq!(kv.take::<u32>("missing").unwrap(), None);
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("line 5") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_lines() {
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse(" = 3").is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        let mut kv = KeyValues::parse("a = x").unwrap();
        assert!(kv.take::<f64>("a").is_err());
    }
}
