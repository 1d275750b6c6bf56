//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; `#` starts a comment and blank lines are skipped.
//! Keys may appear once. Every key must be read by the command that loads the
//! file, otherwise [`KvConfig::finish`] reports it as unknown.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{check_step2, AffineModel, EuclideanModel, Geometry, Point};
use crate::heisenberg::{HeisenbergModel, VERTICAL_SCALE};

#[derive(Clone, Debug, Default)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", no + 1)))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: bad key {k:?}", no + 1)));
            }
            if cfg.raw(k).is_some() {
                return Err(Error::key(k, "given more than once"));
            }
            cfg.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Insert or replace a value, e.g. from a command-line override.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// All entries in file order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    /// Value of `key`, marking it as read.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.raw(key)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::key(key, "missing"))
    }

    /// Parsed value of `key`, if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::key(key, format!("cannot parse {v:?}: {e}"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| Error::key(key, "missing"))
    }

    /// A list of reals separated by commas and/or whitespace.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }

    pub fn require_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key)?.ok_or_else(|| Error::key(key, "missing"))
    }

    /// Error on the first key nobody asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(k)) {
            Some((k, _)) => Err(Error::key(k, "unknown key")),
            None => Ok(()),
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::key(key, format!("cannot parse {s:?}: {e}")))
        })
        .collect()
}

/// Check that `key` is a positive count.
pub fn positive(key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(Error::key(key, "must be positive"))
    } else {
        Ok(v)
    }
}

fn matrix(key: &str, v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::key(key, format!("expected {} values ({rows}×{cols}), got {}", rows * cols, v.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

fn blocks(key: &str, v: Option<Vec<f64>>, count: usize, d: usize) -> Result<Vec<DMatrix<f64>>> {
    match v {
        None => Ok(vec![DMatrix::zeros(d, d); count]),
        Some(v) => {
            if v.len() != count * d * d {
                return Err(Error::key(key, format!("expected {count} blocks of {d}×{d}, got {} values", v.len())));
            }
            Ok(v.chunks(d * d).map(|c| DMatrix::from_row_slice(d, d, c)).collect())
        }
    }
}

/// Build the geometry named by `geometry` for points of dimension `x0.len()`.
///
/// * `heisenberg`: `k` (default from the dimension), `vertical_scale` (default 4π).
/// * `euclidean`: optional constant `drift`.
/// * `custom-step2`: `rank`, `frame_offset` (d×k row-major), optional
///   `frame_linear` (k blocks of d×d, `σ_j(x) = c_j + A_j x`), `extension_offset`,
///   optional `extension_linear` and `drift`.
pub fn geometry_from_config(cfg: &KvConfig, x0: &Point) -> Result<Geometry> {
    let d = x0.len();
    let name = cfg.require("geometry")?;
    match name {
        "heisenberg" => {
            if d < 3 || d % 2 == 0 {
                return Err(Error::key("x0", format!("heisenberg points have odd dimension ≥ 3, got {d}")));
            }
            let k = cfg.parsed_or("k", (d - 1) / 2)?;
            if 2 * k + 1 != d {
                return Err(Error::key("k", format!("k = {k} does not match x0 of dimension {d}")));
            }
            let c = cfg.parsed_or("vertical_scale", VERTICAL_SCALE)?;
            if !(c > 0.0) {
                return Err(Error::key("vertical_scale", "must be positive"));
            }
            Ok(Geometry::Heisenberg(HeisenbergModel::with_vertical_scale(k, c)))
        }
        "euclidean" => {
            let m = match cfg.list("drift")? {
                Some(z) if z.len() != d => return Err(Error::key("drift", format!("expected {d} values"))),
                Some(z) => EuclideanModel::with_drift(DVector::from_vec(z)),
                None => EuclideanModel::new(d),
            };
            Ok(Geometry::Euclidean(m))
        }
        "custom-step2" => {
            let k: usize = cfg.required("rank")?;
            if k == 0 || k > d {
                return Err(Error::key("rank", format!("must lie in 1..={d}")));
            }
            let fo = matrix("frame_offset", &cfg.require_list("frame_offset")?, d, k)?;
            let fl = blocks("frame_linear", cfg.list("frame_linear")?, k, d)?;
            let eo = match cfg.list("extension_offset")? {
                Some(v) => matrix("extension_offset", &v, d, d - k)?,
                None if k == d => DMatrix::zeros(d, 0),
                None => return Err(Error::key("extension_offset", "missing")),
            };
            let el = blocks("extension_linear", cfg.list("extension_linear")?, d - k, d)?;
            let drift = match cfg.list("drift")? {
                Some(z) if z.len() != d => return Err(Error::key("drift", format!("expected {d} values"))),
                Some(z) => DVector::from_vec(z),
                None => DVector::zeros(d),
            };
            let m = AffineModel::new(fo, fl, eo, el, drift).map_err(|e| Error::key("geometry", e.to_string()))?;
            check_step2(&m, x0).map_err(|e| Error::key("geometry", e.to_string()))?;
            Ok(Geometry::Affine(m))
        }
        other => Err(Error::key(
            "geometry",
            format!("unknown geometry {other:?} (heisenberg|euclidean|custom-step2)"),
        )),
    }
}
