//! Metric rows, their CSV form and a plain-text table.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::mcups;

/// Metrics of one run. Times are seconds of the main loop only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub case: String,
    pub ranks: usize,
    pub workers: usize,
    pub blocks: usize,
    pub cells: usize,
    pub iterations: usize,
    pub sim_time: f64,
    pub wall_time: f64,
    /// `cells * iterations / wall_time / 1e6`.
    pub mcups: f64,
    /// Modelled time with one core per worker (see [`crate::clock`]).
    pub virtual_time: f64,
    pub virtual_mcups: f64,
    pub comp_time: f64,
    pub comm_time: f64,
    pub comp_comm_ratio: Option<f64>,
    pub pack_time: f64,
    pub wait_time: f64,
    pub unpack_time: f64,
    pub local_time: f64,
    pub boundary_time: f64,
    pub messages: usize,
    pub bytes: usize,
    pub final_residual: f64,
    /// Heterogeneous runs only.
    pub serialized_time: Option<f64>,
    pub hidden_fraction: Option<f64>,
    /// Mean absolute density error against the exact solution, when known.
    pub density_l1: Option<f64>,
}

impl RunMetrics {
    /// Both MCUPS columns agree with their definition.
    pub fn is_consistent(&self) -> bool {
        self.mcups == mcups(self.cells, self.iterations, self.wall_time)
            && self.virtual_mcups == mcups(self.cells, self.iterations, self.virtual_time)
            && [self.wall_time, self.virtual_time, self.comp_time, self.comm_time]
                .iter()
                .all(|t| *t >= 0.0)
    }
}

/// One point of a scaling study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub mode: String,
    pub ranks: usize,
    pub workers: usize,
    pub cells: usize,
    pub iterations: usize,
    /// Per-iteration time times `iterations`.
    pub time: f64,
    pub time_per_iter: f64,
    pub mcups: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub comp_comm_ratio: Option<f64>,
}

impl ScalingRow {
    pub fn is_consistent(&self) -> bool {
        self.mcups == mcups(self.cells, self.iterations, self.time) && self.time >= 0.0
    }
}

/// Column names of `T`, taken from its default value.
pub fn csv_header<T: Serialize + Default>() -> Result<Vec<String>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(T::default()).map_err(csv_error)?;
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let first = r.records().next().transpose().map_err(csv_error)?.unwrap_or_default();
    Ok(first.iter().map(str::to_string).collect())
}

/// Write `rows` with a header line; an empty list gives the header alone.
pub fn write_csv<T: Serialize + Default>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(out);
    if rows.is_empty() {
        w.write_record(csv_header::<T>()?).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(input: impl Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_error)
}

pub fn save_csv<T: Serialize + Default>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    write_csv(f, rows)
}

pub fn load_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv(std::fs::File::open(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Aligned plain-text table of run metrics.
pub fn render_runs(rows: &[RunMetrics]) -> String {
    let mut s = format!(
        "{:<22} {:>5} {:>7} {:>10} {:>6} {:>10} {:>10} {:>10} {:>9} {:>8}\n",
        "case", "ranks", "workers", "cells", "iters", "wall s", "virtual s", "vMCUPS", "comp/comm", "hidden"
    );
    for r in rows {
        s += &format!(
            "{:<22} {:>5} {:>7} {:>10} {:>6} {:>10.4} {:>10.4} {:>10.3} {:>9} {:>8}\n",
            r.case,
            r.ranks,
            r.workers,
            r.cells,
            r.iterations,
            r.wall_time,
            r.virtual_time,
            r.virtual_mcups,
            opt(r.comp_comm_ratio, 2),
            opt(r.hidden_fraction, 3),
        );
    }
    s
}

pub fn render_scaling(rows: &[ScalingRow]) -> String {
    let mut s = format!(
        "{:<7} {:>5} {:>7} {:>10} {:>12} {:>10} {:>8} {:>10}\n",
        "mode", "ranks", "workers", "cells", "s/iter", "MCUPS", "speedup", "efficiency"
    );
    for r in rows {
        s += &format!(
            "{:<7} {:>5} {:>7} {:>10} {:>12.5} {:>10.3} {:>8.3} {:>10.3}\n",
            r.mode, r.ranks, r.workers, r.cells, r.time_per_iter, r.mcups, r.speedup, r.efficiency
        );
    }
    s
}
