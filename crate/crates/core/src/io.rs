//! CSV and JSON artifacts.
//!
//! CSV headers are fixed: trajectories `stamp,x,value` (interior nodes only),
//! `θ` as `x,theta`, time changes as `t,alpha`. Floats are written in
//! shortest round-trip form, so reading a file back reproduces every value
//! bit for bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::integrator::Trajectory;
use crate::model::ProblemSpec;
use crate::timechange::TimeChange;

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_HEADER: [&str; 3] = ["stamp", "x", "value"];
pub const THETA_HEADER: [&str; 2] = ["x", "theta"];
pub const TIMECHANGE_HEADER: [&str; 2] = ["t", "alpha"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER).map_err(|e| io_err(path, e))?;
    for (t, u) in traj.iter() {
        let g = u.grid();
        for (i, v) in u.values().iter().enumerate() {
            w.write_record([num(t), num(g.x(i)), num(*v)])
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_theta_csv(path: &Path, theta: &GridFunction) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(THETA_HEADER).map_err(|e| io_err(path, e))?;
    let g = theta.grid();
    for (i, v) in theta.values().iter().enumerate() {
        w.write_record([num(g.x(i)), num(*v)]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_timechange_csv(path: &Path, map: &TimeChange) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TIMECHANGE_HEADER).map_err(|e| io_err(path, e))?;
    for &(t, a) in map.knots() {
        w.write_record([num(t), num(a)]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let got: Vec<String> = r
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if got != header {
        return Err(Error::Format(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            got,
            header
        )));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io_err(path, e))?;
            rec.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Format(format!("{}: {s:?}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

/// Read a trajectory CSV back. Stamps are grouped by consecutive equal
/// values; the grid is inferred from the node count. Diffusion
/// coefficients are not stored and come back as NaN.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let rows = read_rows(path, &TRAJECTORY_HEADER)?;
    let mut traj = Trajectory::new();
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i][0];
        let mut j = i;
        while j < rows.len() && rows[j][0].to_bits() == t.to_bits() {
            j += 1;
        }
        let values: Vec<f64> = rows[i..j].iter().map(|r| r[2]).collect();
        let grid = Grid::new(values.len())?;
        traj.push(t, GridFunction::new(grid, values)?, f64::NAN)?;
        i = j;
    }
    Ok(traj)
}

pub fn read_theta_csv(path: &Path) -> Result<GridFunction> {
    let rows = read_rows(path, &THETA_HEADER)?;
    let grid = Grid::new(rows.len())?;
    GridFunction::new(grid, rows.into_iter().map(|r| r[1]).collect())
}

pub fn read_timechange_csv(path: &Path) -> Result<TimeChange> {
    let rows = read_rows(path, &TIMECHANGE_HEADER)?;
    TimeChange::from_knots(rows.into_iter().map(|r| (r[0], r[1])).collect())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Compact per-stamp summary of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub schema_version: u32,
    pub stamps: Vec<f64>,
    pub l2: Vec<f64>,
    pub h10: Vec<f64>,
    pub linf: Vec<f64>,
    pub coeff: Vec<f64>,
}

impl TrajectorySummary {
    pub fn of(traj: &Trajectory) -> Self {
        let d = traj.diagnostics();
        TrajectorySummary {
            schema_version: SCHEMA_VERSION,
            stamps: traj.stamps().to_vec(),
            l2: d.iter().map(|x| x.l2).collect(),
            h10: d.iter().map(|x| x.h10).collect(),
            linf: d.iter().map(|x| x.linf).collect(),
            coeff: d.iter().map(|x| x.coeff).collect(),
        }
    }
}

/// Hex SHA-256 of the compact JSON form of a spec.
pub fn spec_hash(spec: &ProblemSpec) -> String {
    let text = serde_json::to_string(spec).expect("spec serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
