//! Sectioned `key = value` configuration text.
//!
//! ```text
//! # comment
//! [register]
//! C0 = memory 24.4 24.8
//! [sequence]
//! t_i_us = 0.5
//! ```
//!
//! Keys are addressed as `section.key`. Register lines keep their order.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    /// Source line; 0 for `--set` overrides.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    values: BTreeMap<String, Entry>,
    register: Vec<(String, Entry)>,
}

pub const SECTIONS: [&str; 8] = ["register", "sequence", "protocol", "sweep", "readout", "bayes", "strategy", "fit"];

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, format!("unterminated section header `{line}`")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(line_no, format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let sec = section.as_deref().ok_or_else(|| err(line_no, "key before any section header"))?;
            let (k, v) =
                line.split_once('=').ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(err(line_no, format!("bad key `{k}`")));
            }
            if v.is_empty() {
                return Err(err(line_no, format!("empty value for `{k}`")));
            }
            let entry = Entry { value: v.to_string(), line: line_no };
            if sec == "register" {
                if cfg.register.iter().any(|(l, _)| l == k) {
                    return Err(err(line_no, format!("duplicate nucleus `{k}`")));
                }
                cfg.register.push((k.to_string(), entry));
            } else {
                let full = format!("{sec}.{k}");
                if let Some(prev) = cfg.values.get(&full) {
                    return Err(err(line_no, format!("duplicate key `{full}` (first at line {})", prev.line)));
                }
                cfg.values.insert(full, entry);
            }
        }
        Ok(cfg)
    }

    /// Applies `section.key=value`; `register.<label>=...` replaces or adds a
    /// nucleus.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| err(0, format!("override `{assignment}` is not `section.key=value`")))?;
        let (k, v) = (k.trim(), v.trim());
        let (sec, key) =
            k.split_once('.').ok_or_else(|| err(0, format!("override key `{k}` needs a section prefix")))?;
        if !SECTIONS.contains(&sec) {
            return Err(err(0, format!("unknown section `{sec}` in override")));
        }
        if key.is_empty() || v.is_empty() {
            return Err(err(0, format!("override `{assignment}` has an empty key or value")));
        }
        let entry = Entry { value: v.to_string(), line: 0 };
        if sec == "register" {
            match self.register.iter_mut().find(|(l, _)| l == key) {
                Some(slot) => slot.1 = entry,
                None => self.register.push((key.to_string(), entry)),
            }
        } else {
            self.values.insert(k.to_string(), entry);
        }
        Ok(())
    }

    pub fn register_lines(&self) -> &[(String, Entry)] {
        &self.register
    }

    pub fn raw(&self, key: &str) -> Option<&Entry> {
        self.values.get(key)
    }

    /// Rejects keys outside `known` (full `section.key` names).
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, e) in &self.values {
            if !known.contains(&k.as_str()) {
                return Err(err(e.line, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    fn parsed<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(e) => {
                f(&e.value).map(Some).ok_or_else(|| err(e.line, format!("`{key}` expects {what}, got `{}`", e.value)))
            }
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key, "a number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parsed(key, "a nonnegative integer", |s| s.parse::<u64>().ok())?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self
            .parsed(key, "true or false", |s| match s {
                "true" | "yes" | "on" | "1" => Some(true),
                "false" | "no" | "off" | "0" => Some(false),
                _ => None,
            })?
            .unwrap_or(default))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map_or(default, |e| e.value.as_str())
    }

    /// Comma/whitespace separated numbers, or `start:stop:step` (inclusive).
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parsed(key, "a number list or start:stop:step", parse_f64_list)
    }

    pub fn u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.parsed(key, "an integer list or start:stop:step", parse_u64_list)
    }

    pub fn str_list(&self, key: &str) -> Option<Vec<String>> {
        self.values.get(key).map(|e| split_items(&e.value).map(str::to_string).collect())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |e| e.line)
    }

    /// Overrides-included canonical text: register in order, then sorted keys.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (l, e) in &self.register {
            s.push_str(&format!("register.{l} = {}\n", e.value));
        }
        for (k, e) in &self.values {
            s.push_str(&format!("{k} = {}\n", e.value));
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn split_items(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        let [a, b, step] = parts[..] else { return None };
        if !(step > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
            return None;
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        if n > 10_000_000 {
            return None;
        }
        return Some((0..=n).map(|i| a + step * i as f64).collect());
    }
    let v: Vec<f64> = split_items(s).map(|t| t.parse().ok().filter(|x: &f64| x.is_finite())).collect::<Option<_>>()?;
    (!v.is_empty()).then_some(v)
}

fn parse_u64_list(s: &str) -> Option<Vec<u64>> {
    if s.contains(':') {
        let parts: Vec<u64> = s.split(':').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        let [a, b, step] = parts[..] else { return None };
        if step == 0 || b < a || (b - a) / step > 10_000_000 {
            return None;
        }
        return Some((a..=b).step_by(step as usize).collect());
    }
    let v: Vec<u64> = split_items(s).map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (!v.is_empty()).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
# register
[register]
C0 = memory 24.4 24.8   # trailing comment
C1 = spectator -36.3 26.6

[sequence]
t_i_us = 0.5
echo_at_half = false
[sweep]
n_rea = 0:100:50
k = 0, 1 2
";

    #[test]
    fn parses_sections_and_register() {
        let c = Config::parse(TEXT).unwrap();
        assert_eq!(c.register_lines().len(), 2);
        assert_eq!(c.register_lines()[1].0, "C1");
        assert_eq!(c.register_lines()[1].1.line, 4);
        assert_eq!(c.f64("sequence.t_i_us").unwrap(), Some(0.5));
        assert!(!c.bool_or("sequence.echo_at_half", true).unwrap());
        assert_eq!(c.u64_list("sweep.n_rea").unwrap().unwrap(), vec![0, 50, 100]);
        assert_eq!(c.u64_list("sweep.k").unwrap().unwrap(), vec![0, 1, 2]);
        assert_eq!(c.f64("sequence.missing").unwrap(), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("[register]\nC0 = memory 1 2\n[bogus]\n", 3),
            ("t = 1\n", 1),
            ("[sequence]\n\nt_i_us 0.5\n", 3),
            ("[sequence]\nt_i_us = 1\nt_i_us = 2\n", 3),
            ("[sequence\n", 1),
            ("[sequence]\nt_i_us =\n", 2),
        ];
        for (text, line) in cases {
            match Config::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        let c = Config::parse("[sequence]\n\nt_i_us = abc\n").unwrap();
        assert!(matches!(c.f64("sequence.t_i_us"), Err(Error::Config { line: 3, .. })));
        assert!(matches!(c.check_known(&[]), Err(Error::Config { line: 3, .. })));
    }

    #[test]
    fn overrides_change_values_and_hash() {
        let mut c = Config::parse(TEXT).unwrap();
        let h0 = c.hash();
        c.set("sequence.t_i_us=0.7").unwrap();
        c.set("register.C1=spectator -30 0").unwrap();
        c.set("register.C2=spectator 20.6 41.5").unwrap();
        assert_eq!(c.f64("sequence.t_i_us").unwrap(), Some(0.7));
        assert_eq!(c.register_lines().len(), 3);
        assert_eq!(c.register_lines()[1].1.value, "spectator -30 0");
        assert_ne!(c.hash(), h0);
        assert!(c.set("nosection=1").is_err());
        assert!(c.set("other.key=1").is_err());
        assert_eq!(c.hash(), c.clone().hash());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_f64_list("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_f64_list("1.5, 2").unwrap(), vec![1.5, 2.0]);
        assert!(parse_f64_list("1:0:1").is_none());
        assert!(parse_f64_list("1:2:0").is_none());
        assert!(parse_u64_list("x").is_none());
    }
}
