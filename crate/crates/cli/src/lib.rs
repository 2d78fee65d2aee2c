//! Experiment runner: figure presets, parameter sweeps and result tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use mfnet_core::mfg::MfgConfig;
use mfnet_core::{Error, NetworkConfig, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub mod presets;
pub mod tdm;

pub use presets::{run_preset, PRESETS};
pub use tdm::{tdm_compare, LinkSet, TdmOutcome, TdmScheme};

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Infeasible(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config")]
pub enum Base {
    Network(NetworkConfig),
    Mfg(MfgConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

/// A preset with its base scenario and sweep, after user overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: Base,
    pub sweep: Sweep,
    pub trials: usize,
    pub seed: u64,
    pub full: bool,
}

impl ExperimentSpec {
    /// Sweep points; an empty list means one run at the base scenario.
    pub fn points(&self) -> Vec<Option<f64>> {
        if self.sweep.values.is_empty() {
            vec![None]
        } else {
            self.sweep.values.iter().map(|v| Some(*v)).collect()
        }
    }

    pub fn network(&self) -> Result<&NetworkConfig> {
        match &self.base {
            Base::Network(c) => Ok(c),
            Base::Mfg(_) => Err(Error::Config(format!("{} needs a network config", self.name))),
        }
    }

    pub fn mfg(&self) -> Result<&MfgConfig> {
        match &self.base {
            Base::Mfg(c) => Ok(c),
            Base::Network(_) => Err(Error::Config(format!("{} needs an MFG config", self.name))),
        }
    }

    /// Apply `field=value` to the base scenario. The field must exist.
    pub fn set(&mut self, field: &str, value: &str) -> Result<()> {
        let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        self.base = match &self.base {
            Base::Network(c) => Base::Network(with_field(c, field, parsed)?),
            Base::Mfg(c) => Base::Mfg(with_field(c, field, parsed)?),
        };
        Ok(())
    }
}

/// Copy of `cfg` with one top-level field replaced.
pub fn with_field<T>(cfg: &T, field: &str, value: Value) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut v = serde_json::to_value(cfg)?;
    let obj = v.as_object_mut().ok_or_else(|| Error::Config("config is not an object".into()))?;
    // optional fields are skipped when unset, so accept them by trying the insert
    let known = obj.contains_key(field);
    obj.insert(field.to_string(), value);
    match serde_json::from_value::<T>(v) {
        Ok(c) if known || serde_json::to_value(&c)?.get(field).is_some() => Ok(c),
        Ok(_) => Err(Error::Config(format!("unknown config field `{field}`"))),
        Err(e) => Err(Error::Config(format!("bad value for `{field}`: {e}"))),
    }
}

/// Numeric field update; integral values go in as integers.
pub fn with_number<T>(cfg: &T, field: &str, x: f64) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let v = if x.fract() == 0.0 && (0.0..9.0e15).contains(&x) {
        Value::from(x as u64)
    } else {
        Value::from(x)
    };
    with_field(cfg, field, v)
}

/// A CSV result with `#` comment lines describing the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Some row came from an infeasible or unconverged run.
    pub flagged: bool,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { comments: Vec::new(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), flagged: false }
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Run a preset and write `<out>/<name>.csv`.
pub fn run_to_dir(spec: &ExperimentSpec, out: &Path) -> Result<(PathBuf, Table)> {
    std::fs::create_dir_all(out)?;
    let table = run_preset(spec)?;
    let path = out.join(format!("{}.csv", spec.name));
    table.write_to(&path)?;
    Ok((path, table))
}
