//! Sampled paths and their CSV/JSON serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    /// Column names, time first: `["tau", "r", "psi"]` and friends.
    pub columns: [String; 3],
    pub dt: Option<f64>,
    pub tol: Option<f64>,
    /// `None` for deterministic runs.
    pub seed: Option<u64>,
    pub path_index: Option<u64>,
    /// Set when the path stopped at its last finite sample.
    pub truncated: bool,
}

impl TrajectoryMeta {
    pub fn deterministic(integrator: &str, tol: f64, columns: [&str; 3]) -> Self {
        Self {
            integrator: integrator.to_string(),
            columns: columns.map(String::from),
            dt: None,
            tol: Some(tol),
            seed: None,
            path_index: None,
            truncated: false,
        }
    }

    pub fn stochastic(integrator: &str, dt: f64, seed: u64, path_index: u64, columns: [&str; 3]) -> Self {
        Self {
            integrator: integrator.to_string(),
            columns: columns.map(String::from),
            dt: Some(dt),
            tol: None,
            seed: Some(seed),
            path_index: Some(path_index),
            truncated: false,
        }
    }
}

pub const STATE_COLUMNS: [&str; 3] = ["tau", "r", "psi"];
pub const ERROR_COLUMNS: [&str; 3] = ["tau", "R", "Psi"];
pub const PENDULUM_COLUMNS: [&str; 3] = ["t", "u", "v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            meta,
        }
    }

    /// Appends a sample; returns `false` (and flags truncation) for a
    /// non-finite state instead of storing it.
    pub fn push(&mut self, t: f64, x: [f64; 2]) -> bool {
        if !(x[0].is_finite() && x[1].is_finite()) {
            self.meta.truncated = true;
            return false;
        }
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.states.push(x);
        true
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, [f64; 2])> {
        Some((*self.times.last()?, *self.states.last()?))
    }

    /// Writes `path` as CSV and a metadata sidecar next to it
    /// (`<path>.meta.json`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.meta.columns.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            writeln!(w, "{},{},{}", fmt17(*t), fmt17(x[0]), fmt17(x[1]))?;
        }
        w.flush()?;
        let sidecar = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(sidecar, &self.meta)?;
        Ok(())
    }
}

pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// 17 significant digits: enough to round-trip any binary64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Trajectory::new(TrajectoryMeta::deterministic("dopri5", 1e-10, STATE_COLUMNS));
        t.push(0.1, [std::f64::consts::PI, -1.0 / 3.0]);
        t.push(0.2, [1e-300, 123456789.123456789]);
        assert!(!t.push(0.3, [f64::NAN, 0.0]));
        assert!(t.meta.truncated);
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau,r,psi"));
        for (line, (tau, x)) in lines.zip(t.times.iter().zip(&t.states)) {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            assert_eq!(v[0].to_bits(), tau.to_bits());
            assert_eq!(v[1].to_bits(), x[0].to_bits());
            assert_eq!(v[2].to_bits(), x[1].to_bits());
        }
        let meta: TrajectoryMeta =
            serde_json::from_reader(File::open(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta, t.meta);
    }
}
