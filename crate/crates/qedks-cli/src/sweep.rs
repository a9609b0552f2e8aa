//! Parameter sweeps with convergence-order fits.
//!
//! One run per axis value, executed concurrently up to the `--jobs` bound.
//! Individual failures are recorded and the sweep continues; the aggregate
//! report carries the per-point metrics and, for the dt / dx / e axes, a
//! least-squares order fit on the log-log points.

use std::fmt::Write as _;
use std::path::Path;

use qedks_core::dynamics::eom_residual_current;
use qedks_core::fock::OperatorSet;
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::inversion::{taylor_construct, InvertOptions};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::scenario::Scenario;
use crate::tasks::mean_field_deviation;

/// Metric of one sweep point; what it measures depends on the axis.
#[derive(Debug, Clone)]
struct SweepPoint {
    value: f64,
    result: Result<f64, String>,
}

fn metric_name(axis: &str) -> &'static str {
    match axis {
        "dt" | "dx" => "eom-current residual",
        "e" => "mean-field deviation",
        "n_max" => "max photon leakage",
        "l_max" => "top Taylor coefficient magnitude",
        _ => "metric",
    }
}

/// Apply one axis value to a scenario copy.
fn apply_axis(base: &Scenario, axis: &str, value: f64) -> CliResult<Scenario> {
    let mut sc = base.clone();
    match axis {
        "dt" => {
            // keep the physical horizon fixed
            let horizon = base.grid.dt * base.grid.n_steps as f64;
            sc.grid.dt = value;
            sc.grid.n_steps = (horizon / value).round().max(4.0) as usize;
        }
        "dx" => sc.model.lattice_spacing = value,
        "e" => sc.model.e = value,
        "n_max" => sc.model.n_max = value.round() as usize,
        "l_max" => sc.tolerances.l_max = value.round() as usize,
        other => return Err(CliError::Schema(format!("unknown sweep axis '{other}'"))),
    }
    Ok(sc)
}

/// Run one sweep point and return its scalar metric.
fn run_point(base: &Scenario, axis: &str, value: f64) -> CliResult<f64> {
    let sc = apply_axis(base, axis, value)?;
    match axis {
        "dt" | "dx" => {
            let model = sc.build_model()?;
            let ops = OperatorSet::build(&model)?;
            let hs = HamiltonianSet::build(&ops)?;
            let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &sc.drive);
            let grid = sc.time_grid()?;
            let cfg = sc.initial_configuration(&ops)?;
            let traj = qedks_core::dynamics::propagate(&ops, &cfg, &ham, &grid)?;
            let conj = qedks_core::dynamics::observables(&ops, &traj)?;
            let q = ops.q_operators();
            Ok(eom_residual_current(&ops, &q, &traj, &conj, &sc.drive, false))
        }
        "e" => mean_field_deviation(&sc),
        "n_max" => {
            let model = sc.build_model()?;
            let ops = OperatorSet::build(&model)?;
            let hs = HamiltonianSet::build(&ops)?;
            let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &sc.drive);
            let grid = sc.time_grid()?;
            let cfg = sc.initial_configuration(&ops)?;
            let traj = qedks_core::dynamics::propagate(&ops, &cfg, &ham, &grid)?;
            Ok(traj.leakage.iter().copied().fold(0.0, f64::max))
        }
        "l_max" => {
            let model = sc.build_model()?;
            let ops = OperatorSet::build(&model)?;
            let hs = HamiltonianSet::build(&ops)?;
            let cfg = sc.initial_configuration(&ops)?;
            let opts = InvertOptions::default();
            let table = taylor_construct(
                &ops,
                &hs,
                &cfg,
                &cfg,
                &sc.drive,
                sc.tolerances.l_max,
                &opts,
            )?;
            let top = table
                .a
                .last()
                .map(|slab| {
                    slab.iter()
                        .flat_map(|r| r.iter().map(|v| v.abs()))
                        .fold(0.0, f64::max)
                })
                .unwrap_or(0.0);
            Ok(top)
        }
        other => Err(CliError::Schema(format!("unknown sweep axis '{other}'"))),
    }
}

/// Least-squares slope of log(metric) against log(value).
fn fit_order(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(v, m)| *v > 0.0 && *m > 0.0)
        .map(|(v, m)| (v.ln(), m.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

pub fn sweep_task(
    scenario: &Scenario,
    _out: &Path,
    manifest: &mut RunManifest,
    jobs: usize,
) -> CliResult<String> {
    let sweep = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Schema("sweep task needs a [sweep] section".into()))?;
    let axis = sweep.axis.clone();
    let jobs = jobs.max(1);

    let mut points: Vec<SweepPoint> = Vec::with_capacity(sweep.values.len());
    std::thread::scope(|scope| {
        let mut pending = Vec::new();
        for chunk in sweep.values.chunks(jobs) {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&value| {
                    let axis = axis.clone();
                    scope.spawn(move || SweepPoint {
                        value,
                        result: run_point(scenario, &axis, value).map_err(|e| e.to_string()),
                    })
                })
                .collect();
            for h in handles {
                pending.push(h.join().expect("sweep worker panicked"));
            }
        }
        points = pending;
    });

    let mut report = String::from("task: sweep\n\n");
    let _ = writeln!(report, "axis: {axis} ({})", metric_name(&axis));
    let mut ok_points = Vec::new();
    for p in &points {
        match &p.result {
            Ok(m) => {
                let _ = writeln!(report, "  {axis} = {:<12.6e} metric = {m:.6e}", p.value);
                ok_points.push((p.value, *m));
            }
            Err(e) => {
                let _ = writeln!(report, "  {axis} = {:<12.6e} FAILED: {e}", p.value);
                manifest.warnings.push(format!("sweep point {} failed: {e}", p.value));
            }
        }
    }
    if matches!(axis.as_str(), "dt" | "dx" | "e") {
        match fit_order(&ok_points) {
            Some(order) => {
                let _ = writeln!(report, "fitted order: {order:.3}");
                // stash the fit next to the per-point count for machine readers
                manifest.convergence.push((ok_points.len(), order));
            }
            None => {
                let _ = writeln!(report, "fitted order: insufficient points");
            }
        }
    }
    // monotonicity indicator for the scaling studies
    if ok_points.len() >= 2 {
        let sorted_desc = ok_points
            .windows(2)
            .all(|w| (w[0].0 > w[1].0) == (w[0].1 >= w[1].1));
        let _ = writeln!(
            report,
            "metric monotone with the axis: {}",
            if sorted_desc { "yes" } else { "no" }
        );
    }
    if ok_points.is_empty() {
        return Err(CliError::Invariant(
            "sweep: every point failed; see the report for diagnostics".into(),
        ));
    }
    Ok(report)
}
