//! Trajectory CSV files and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Trajectory;
use crate::systems::{DatasetSpec, SystemSpec};

/// Writes `t,x0..,u0..` with one row per sample; the last row has empty
/// input cells. Floats use the shortest round-tripping representation.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.state_dim();
    let m = traj.input_dim().unwrap_or(0);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("x{i}")))
        .chain((0..m).map(|i| format!("u{i}")))
        .collect();
    w.write_record(&header)?;
    for (k, (t, x)) in traj.times().iter().zip(traj.states()).enumerate() {
        let mut row = Vec::with_capacity(1 + n + m);
        row.push(format!("{t:?}"));
        row.extend(x.iter().map(|v| format!("{v:?}")));
        match traj.inputs().get(k) {
            Some(u) => row.extend(u.iter().map(|v| format!("{v:?}"))),
            None => row.extend(std::iter::repeat(String::new()).take(m)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header.get(0) != Some("t") || header.len() != 1 + n + m {
        return Err(Error::Config(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("{}: bad number {s:?}: {e}", path.display())))
    };
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        times.push(parse(&rec[0])?);
        states.push((1..=n).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?);
        if m > 0 && !rec[1 + n].trim().is_empty() {
            inputs.push((1 + n..1 + n + m).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?);
        }
    }
    if m == 0 {
        inputs = vec![Vec::new(); states.len().saturating_sub(1)];
    }
    // Sample times are k·dt, so the second one is dt exactly.
    let dt = match times.as_slice() {
        [_, t1, ..] => *t1,
        _ => return Err(Error::Config(format!("{}: fewer than two samples", path.display()))),
    };
    Trajectory::new(dt, states, inputs)
}

/// Everything needed to locate and regenerate a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub system: SystemSpec,
    pub spec: DatasetSpec,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `traj_XXXX.csv` files plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, system: &SystemSpec, spec: &DatasetSpec, trajs: &[Trajectory]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let width = trajs.len().saturating_sub(1).to_string().len().max(4);
    let mut files = Vec::with_capacity(trajs.len());
    for (i, t) in trajs.iter().enumerate() {
        let name = format!("traj_{i:0width$}.csv");
        write_trajectory_csv(&dir.join(&name), t)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        system: system.clone(),
        spec: spec.clone(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Trajectory>)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let trajs = manifest
        .files
        .iter()
        .map(|f| read_trajectory_csv(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, trajs))
}
