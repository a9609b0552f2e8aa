//! Artifact writing: binary arrays plus CSV mirrors for small runs, the
//! resolved scenario, the manifest and the human-readable report.

use qedks_core::arrayio::{read_array, write_array, write_csv_mirror, Array, ArrayData};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::scenario::Scenario;

/// CSV mirrors are only emitted below this element count.
const CSV_MIRROR_LIMIT: usize = 1 << 20;

/// Flatten a [k][site][mu] trajectory into a 3-d array.
pub fn trajectory_array(data: &[Vec<Vec<f64>>]) -> CliResult<Array> {
    let n_k = data.len();
    let n_sites = data.first().map_or(0, |s| s.len());
    let n_mu = data.first().and_then(|s| s.first()).map_or(0, |m| m.len());
    let mut flat = Vec::with_capacity(n_k * n_sites * n_mu);
    for slab in data {
        for row in slab {
            flat.extend_from_slice(row);
        }
    }
    Array::f64(vec![n_k, n_sites, n_mu], flat).map_err(CliError::from)
}

/// Flatten a [k][m] per-mode series into a 2-d array.
pub fn mode_array(data: &[Vec<f64>]) -> CliResult<Array> {
    let n_k = data.len();
    let n_m = data.first().map_or(0, |s| s.len());
    let flat: Vec<f64> = data.iter().flat_map(|r| r.iter().copied()).collect();
    Array::f64(vec![n_k, n_m], flat).map_err(CliError::from)
}

pub fn scalar_series_array(data: &[f64]) -> CliResult<Array> {
    Array::f64(vec![data.len()], data.to_vec()).map_err(CliError::from)
}

/// Write one observable: `<name>.bin` always, `<name>.csv` for small runs.
pub fn write_observable(
    out: &Path,
    manifest: &mut RunManifest,
    name: &str,
    arr: &Array,
) -> CliResult<()> {
    let bin = out.join(format!("{name}.bin"));
    write_array(&bin, arr)?;
    manifest.artifacts.push(format!("{name}.bin"));
    if arr.len() <= CSV_MIRROR_LIMIT {
        let csv = out.join(format!("{name}.csv"));
        write_csv_mirror(&csv, arr)?;
        manifest.artifacts.push(format!("{name}.csv"));
    }
    Ok(())
}

/// Read back a [k][site][mu] trajectory array.
pub fn read_trajectory(path: &Path) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let arr = read_array(path)?;
    if arr.dims.len() != 3 {
        return Err(CliError::Schema(format!(
            "{}: expected a 3-d trajectory array, got dims {:?}",
            path.display(),
            arr.dims
        )));
    }
    let data = match &arr.data {
        ArrayData::F64(d) => d,
        ArrayData::C128(_) => {
            return Err(CliError::Schema(format!(
                "{}: expected float64 data",
                path.display()
            )))
        }
    };
    let (n_k, n_sites, n_mu) = (arr.dims[0], arr.dims[1], arr.dims[2]);
    let mut out = Vec::with_capacity(n_k);
    for k in 0..n_k {
        let mut slab = Vec::with_capacity(n_sites);
        for x in 0..n_sites {
            let base = (k * n_sites + x) * n_mu;
            slab.push(data[base..base + n_mu].to_vec());
        }
        out.push(slab);
    }
    Ok(out)
}

pub fn write_run_files(
    out: &Path,
    scenario: &Scenario,
    manifest: &mut RunManifest,
    report: &str,
) -> CliResult<()> {
    std::fs::write(out.join("scenario.resolved.toml"), scenario.canonical())?;
    std::fs::write(out.join("report.txt"), report)?;
    manifest.artifacts.push("scenario.resolved.toml".into());
    manifest.artifacts.push("report.txt".into());
    manifest.artifacts.push("manifest.toml".into());
    manifest.artifacts.sort();
    std::fs::write(out.join("manifest.toml"), manifest.to_toml())?;
    Ok(())
}

pub fn prepare_out_dir(out: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}
