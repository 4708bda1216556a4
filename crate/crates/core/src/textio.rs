//! Shared helpers for the line-oriented text formats (PCB1, CRV1, M1, UNR1, LBL1, CKPT1).

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Formats `v` with `digits` significant digits in scientific notation.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    let mut s = String::new();
    write_sig(&mut s, v, digits);
    s
}

pub fn write_sig(out: &mut String, v: f64, digits: usize) {
    let prec = digits.saturating_sub(1);
    if v == 0.0 {
        // avoid "-0e0" noise
        let _ = write!(out, "{:.*e}", prec, 0.0f64);
    } else {
        let _ = write!(out, "{:.*e}", prec, v);
    }
}

/// Nine significant digits, the precision of the exchange formats.
pub fn fmt9(v: f64) -> String {
    fmt_sig(v, 9)
}

/// Line cursor that remembers the source name and the 1-based line number
/// for diagnostics.
pub struct Lines<'a> {
    source: String,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    pub fn new(source: impl Into<String>, text: &'a str) -> Self {
        Lines { source: source.into(), iter: text.lines().enumerate(), line: 0 }
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.source.clone(), line: self.line, msg: msg.into() }
    }

    /// Next non-empty line, split on whitespace.
    pub fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.iter.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Ok(t.split_whitespace().collect());
            }
        }
        self.line += 1;
        Err(self.error("unexpected end of file"))
    }

    /// Next line verbatim (may be empty).
    pub fn next_raw(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    pub fn parse_f64(&self, tok: &str) -> Result<f64> {
        let v: f64 = tok.parse().map_err(|_| self.error(format!("not a number: {tok:?}")))?;
        if !v.is_finite() {
            return Err(self.error(format!("non-finite value: {tok:?}")));
        }
        Ok(v)
    }

    pub fn parse_usize(&self, tok: &str) -> Result<usize> {
        tok.parse().map_err(|_| self.error(format!("not a non-negative integer: {tok:?}")))
    }

    pub fn parse_i64(&self, tok: &str) -> Result<i64> {
        tok.parse().map_err(|_| self.error(format!("not an integer: {tok:?}")))
    }

    /// Fails if any non-blank content remains.
    pub fn expect_end(&mut self) -> Result<()> {
        for (i, l) in self.iter.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Err(self.error("trailing content after declared records"));
            }
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Ordered `key = value` settings with the line each key came from.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: String,
    entries: indexmap::IndexMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn new(source: impl Into<String>) -> Self {
        KeyValues { source: source.into(), entries: indexmap::IndexMap::new() }
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut kv = KeyValues::new(source);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { path: source.to_string(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if kv.entries.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
                return Err(err(format!("duplicate key {k}")));
            }
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&source_name(path), &read_file(path)?)
    }

    /// Inserts or replaces a value (line 0 marks a non-file origin).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    fn error(&self, key: &str, msg: String) -> Error {
        let line = self.entries.get(key).map_or(0, |e| e.1);
        Error::Parse { path: self.source.clone(), line, msg }
    }

    /// Removes and parses `key`; `None` when absent.
    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((v, line)) = self.entries.get(key).cloned() else { return Ok(None) };
        let parsed = v.parse::<T>().map_err(|_| Error::Parse {
            path: self.source.clone(),
            line,
            msg: format!("invalid value {v:?} for {key}"),
        })?;
        self.entries.shift_remove(key);
        Ok(Some(parsed))
    }

    /// Removes and parses a comma-separated list.
    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some((v, _)) = self.entries.get(key).cloned() else { return Ok(None) };
        let parsed = v
            .split(',')
            .map(|t| t.trim().parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| self.error(key, format!("invalid list {v:?} for {key}")))?;
        self.entries.shift_remove(key);
        Ok(Some(parsed))
    }

    /// Fails on any key no reader consumed.
    pub fn finish(&self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(self.error(k, format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

/// Renders `key = value` lines.
pub fn format_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Comma-joined list value.
pub fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_parse_and_report_lines() {
        let mut kv = KeyValues::parse("c.cfg", "# comment\nk = 20\n\nwidths=64, 32\nflag = true\n").unwrap();
        assert_eq!(kv.take::<usize>("k").unwrap(), Some(20));
        assert_eq!(kv.take_list::<usize>("widths").unwrap(), Some(vec![64, 32]));
        assert_eq!(kv.take::<usize>("missing").unwrap(), None);
        let err = kv.take::<usize>("flag").unwrap_err().to_string();
        assert!(err.starts_with("c.cfg:5:"), "{err}");
        assert!(kv.finish().unwrap_err().to_string().contains("unknown key flag"));
        assert!(KeyValues::parse("c", "a = 1\na = 2\n").is_err());
        assert!(KeyValues::parse("c", "novalue\n").is_err());
        assert_eq!(format_kv([("a", "1".to_string())]), "a = 1\n");
    }

    #[test]
    fn nine_digit_format_roundtrips_f32() {
        for v in [0.1f32, 1.0 / 3.0, -7.25e-12, 123456.79, f32::MAX, f32::MIN_POSITIVE] {
            let s = fmt9(v as f64);
            let back: f32 = s.parse::<f64>().unwrap() as f32;
            assert_eq!(back, v, "{s}");
        }
        assert_eq!(fmt9(0.0), "0.00000000e0");
    }

    #[test]
    fn lines_report_position() {
        let mut l = Lines::new("x", "A 1\n\nB nan\n");
        assert_eq!(l.next_fields().unwrap(), vec!["A", "1"]);
        let f = l.next_fields().unwrap();
        let err = l.parse_f64(f[1]).unwrap_err();
        assert!(err.to_string().contains("x:3"), "{err}");
    }
}
