//! Flat `key = value` run configuration with `include = path` support.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use torusmix::composite::{FieldSpec, FractalSpec, MixSpec};
use torusmix::schedule::ratio;
use torusmix::transport::Datum;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let mut c = Config::default();
        c.read_file(path, 0)?;
        Ok(c)
    }

    fn read_file(&mut self, path: &Path, depth: usize) -> Result<(), CliError> {
        if depth > 16 {
            return Err(CliError::Usage(format!("include nesting too deep at {}", path.display())));
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key = value", path.display(), no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "include" {
                let inc = PathBuf::from(v);
                let inc = if inc.is_absolute() { inc } else { base.join(inc) };
                self.read_file(&inc, depth + 1)?;
            } else {
                self.values.insert(k.to_string(), v.to_string());
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {pair:?}")))?;
        self.values.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::Usage(format!("missing setting {key:?}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub fn grid_size(&self) -> Result<usize, CliError> {
        let n: usize = self.parse_or("n", 128)?;
        if !n.is_power_of_two() || n < 4 {
            return Err(CliError::Usage(format!("n must be a power of two >= 4, got {n}")));
        }
        Ok(n)
    }

    pub fn depth(&self, default: u32) -> Result<u32, CliError> {
        let k: u32 = self.parse_or("k", default)?;
        if k == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        Ok(k)
    }

    pub fn times(&self, key: &str) -> Result<Vec<f64>, CliError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    parse_number(s).ok_or_else(|| CliError::Usage(format!("bad time {s:?} in {key}")))
                })
                .collect(),
        }
    }

    /// Resolved settings as a JSON object, for metadata records.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

/// Decimal or `p/q`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

/// `sin`, `smooth-sign[:eps]`, `checkerboard[:cells]`, `constant:c`,
/// `mode:j1,j2` or `bump:c1,c2,sigma`.
pub fn parse_datum(s: &str) -> Result<Datum, CliError> {
    let bad = || CliError::Usage(format!("unknown datum {s:?}"));
    let (name, arg) = match s.split_once(':') {
        Some((a, b)) => (a.trim(), Some(b.trim())),
        None => (s.trim(), None),
    };
    let nums = |a: Option<&str>| -> Result<Vec<f64>, CliError> {
        a.map(|a| a.split(',').map(|x| parse_number(x).ok_or_else(bad)).collect())
            .unwrap_or_else(|| Ok(Vec::new()))
    };
    let v = nums(arg)?;
    Ok(match (name, v.as_slice()) {
        ("sin", []) => Datum::SinX1,
        ("smooth-sign", []) => Datum::SmoothSign { eps: 1.0 / 64.0 },
        ("smooth-sign", [e]) => Datum::SmoothSign { eps: *e },
        ("checkerboard", []) => Datum::Checkerboard { cells: 4 },
        ("checkerboard", [c]) => Datum::Checkerboard { cells: *c as u32 },
        ("constant", [c]) => Datum::Constant(*c),
        ("mode", [a, b]) => Datum::Mode {
            j1: *a as i64,
            j2: *b as i64,
        },
        ("bump", [a, b, c]) => Datum::Bump {
            c1: *a,
            c2: *b,
            sigma: *c,
        },
        _ => return Err(bad()),
    })
}

/// `fractal:K`, `mix:K`, `mirrored:K`, `still:T`, or a path to a field
/// spec file.
pub fn parse_field(s: &str) -> Result<FieldSpec, CliError> {
    let usage = |e: String| CliError::Usage(format!("field {s:?}: {e}"));
    if let Some((kind, arg)) = s.split_once(':') {
        let depth = || arg.trim().parse::<u32>().map_err(|e| usage(e.to_string()));
        match kind {
            "fractal" => return Ok(FieldSpec::Fractal(FractalSpec::canonical(depth()? as usize))),
            "mix" => return Ok(FieldSpec::Mix(MixSpec::minimal(depth()?).map_err(|e| usage(e.to_string()))?)),
            "mirrored" => {
                return Ok(FieldSpec::Mirrored(
                    MixSpec::minimal(depth()?).map_err(|e| usage(e.to_string()))?,
                ))
            }
            "still" => {
                let h: i64 = arg.trim().parse().map_err(|e: std::num::ParseIntError| usage(e.to_string()))?;
                return Ok(FieldSpec::Still { horizon: ratio(h, 1) });
            }
            _ => {}
        }
    }
    let text = fs::read_to_string(s).map_err(|e| CliError::Io(format!("{s}: {e}")))?;
    text.parse().map_err(|e: torusmix::composite::CompositeError| usage(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn include_and_override() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("base.cfg"), "n = 64\ndatum = sin\n").unwrap();
        fs::write(dir.path().join("run.cfg"), "include = base.cfg\nn = 32 # smaller\n").unwrap();
        let mut c = Config::load(&dir.path().join("run.cfg")).unwrap();
        assert_eq!(c.grid_size().unwrap(), 32);
        assert_eq!(c.get("datum"), Some("sin"));
        c.set_pair("n=16").unwrap();
        assert_eq!(c.grid_size().unwrap(), 16);
        c.set_pair("n=12").unwrap();
        assert!(c.grid_size().is_err());
    }

    #[test]
    fn datum_names() {
        assert_eq!(parse_datum("sin").unwrap(), Datum::SinX1);
        assert_eq!(parse_datum("constant:2.5").unwrap(), Datum::Constant(2.5));
        assert_eq!(parse_datum("smooth-sign:1/32").unwrap(), Datum::SmoothSign { eps: 1.0 / 32.0 });
        assert!(parse_datum("square").is_err());
    }
}
