//! Task implementations behind the CLI subcommands.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use qedks_core::dynamics::{
    charge_drift, eom_residual_current, eom_residual_potential, gupta_bleuler_residual,
    observables, propagate, response_kernel, ConjugateTrajectory, Probe, StateTrajectory, TimeGrid,
};
use qedks_core::fock::{single_particle_dirac, OperatorSet};
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::inversion::{
    fixed_point_invert, jeff_mid, record_target, taylor_construct, InversionOperators,
    InvertOptions,
};
use qedks_core::kohnsham::{
    ks_run, mean_field_run, propagate_maxwell, ClassicalFieldState,
    KsTrajectory, OrbitalSet,
};
use qedks_core::model::{Model, Term};

use crate::artifacts::{
    mode_array, prepare_out_dir, read_trajectory, scalar_series_array, trajectory_array,
    write_observable, write_run_files,
};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::scenario::{InitialSpec, Scenario, Task};

/// Execute one task and persist its artifacts. Returns the manifest; the
/// caller maps a failed invariant to exit code 1.
pub fn run(task: Task, scenario: &Scenario, out: &Path, jobs: usize) -> CliResult<RunManifest> {
    let out = prepare_out_dir(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(scenario, task);
    if let Some(w) = schwinger_guard(scenario)? {
        manifest.warnings.push(w);
    }
    let report = match task {
        Task::Simulate => simulate_task(scenario, &out, &mut manifest)?,
        Task::Invert => invert_task(scenario, &out, &mut manifest)?,
        Task::Ks => ks_task(scenario, &out, &mut manifest)?,
        Task::Taylor => taylor_task(scenario, &out, &mut manifest)?,
        Task::Verify => verify_task(scenario, &out, &mut manifest)?,
        Task::Sweep => crate::sweep::sweep_task(scenario, &out, &mut manifest, jobs)?,
    };
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    write_run_files(&out, scenario, &mut manifest, &report)?;
    if let Some(fail) = manifest.first_failure() {
        return Err(CliError::Invariant(format!(
            "{}: measured {:.3e} > tolerance {:.3e}",
            fail.name, fail.measured, fail.tolerance
        )));
    }
    Ok(manifest)
}

/// Peak-field validity guard: the lattice model has no pair production, so
/// drives approaching the vacuum-instability (Schwinger) field strength
/// m0^2/e are outside the regime the equations describe. The run proceeds;
/// the warning is recorded in the manifest and report.
pub fn schwinger_guard(scenario: &Scenario) -> CliResult<Option<String>> {
    let model = scenario.build_model()?;
    let e = model.spec.e;
    if e == 0.0 {
        return Ok(None);
    }
    let horizon = scenario.grid.dt * scenario.grid.n_steps as f64;
    // bound max_t |d a_mu / dt| per drive entry: the electric-field scale
    let mut peak: f64 = 0.0;
    for entry in &scenario.drive.a_ext {
        let mut bound = 0.0;
        for term in &entry.terms {
            bound += match *term {
                Term::Poly { c, power } => {
                    if power == 0 {
                        0.0
                    } else {
                        c.abs() * power as f64 * horizon.powi(power as i32 - 1)
                    }
                }
                Term::Cos { c, omega } | Term::Sin { c, omega } => (c * omega).abs(),
            };
        }
        peak = peak.max(bound);
    }
    let critical = model.spec.m0 * model.spec.m0 / e;
    let ratio = peak / critical;
    if ratio >= scenario.tolerances.schwinger_ratio {
        Ok(Some(format!(
            "peak drive field {:.3e} reaches {:.2} of the critical field m0^2/e = {:.3e}; \
             the model has no pair production, so results beyond the vacuum-stability \
             bound are not physical",
            peak, ratio, critical
        )))
    } else {
        Ok(None)
    }
}

fn unitarity_drift(traj: &StateTrajectory) -> f64 {
    traj.states
        .iter()
        .flat_map(|ens| ens.iter().map(|s| (s.norm() - 1.0).abs()))
        .fold(0.0, f64::max)
}

fn max_leakage(traj: &StateTrajectory) -> f64 {
    traj.leakage.iter().copied().fold(0.0, f64::max)
}

struct FockRun {
    ops: OperatorSet,
    hs: HamiltonianSet,
    traj: StateTrajectory,
    conj: ConjugateTrajectory,
    grid: TimeGrid,
}

fn fock_simulate(scenario: &Scenario) -> CliResult<FockRun> {
    let model = scenario.build_model()?;
    let ops = OperatorSet::build(&model)?;
    let hs = HamiltonianSet::build(&ops)?;
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &scenario.drive);
    let grid = scenario.time_grid()?;
    let cfg = scenario.initial_configuration(&ops)?;
    let traj = propagate(&ops, &cfg, &ham, &grid)?;
    let conj = observables(&ops, &traj)?;
    Ok(FockRun {
        ops,
        hs,
        traj,
        conj,
        grid,
    })
}

fn record_core_invariants(
    manifest: &mut RunManifest,
    scenario: &Scenario,
    run: &FockRun,
) -> String {
    let t = &scenario.tolerances;
    manifest.leakage_max = max_leakage(&run.traj);
    manifest.record("unitarity-drift", unitarity_drift(&run.traj), t.tol_unitarity);
    manifest.record("charge-drift", charge_drift(&run.ops, &run.traj), t.tol_charge);
    manifest.record(
        "photon-leakage",
        manifest.leakage_max,
        run.ops.model.spec.leak_max,
    );
    render_invariants(manifest)
}

fn render_invariants(manifest: &RunManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>14} {:>14}  result", "invariant", "measured", "tolerance");
    for r in &manifest.invariants {
        let _ = writeln!(
            s,
            "{:<28} {:>14.6e} {:>14.6e}  {}",
            r.name,
            r.measured,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    for w in &manifest.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn write_conjugate(
    out: &Path,
    manifest: &mut RunManifest,
    conj: &ConjugateTrajectory,
) -> CliResult<()> {
    write_observable(out, manifest, "j", &trajectory_array(&conj.j)?)?;
    write_observable(out, manifest, "a", &trajectory_array(&conj.a)?)?;
    write_observable(out, manifest, "a_dot", &trajectory_array(&conj.a_dot)?)?;
    write_observable(out, manifest, "q_modes", &mode_array(&conj.q_modes)?)?;
    write_observable(out, manifest, "p_modes", &mode_array(&conj.p_modes)?)?;
    write_observable(out, manifest, "leakage", &scalar_series_array(&conj.leakage)?)?;
    Ok(())
}

fn simulate_task(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> CliResult<String> {
    let run = fock_simulate(scenario)?;
    write_conjugate(out, manifest, &run.conj)?;
    let mut report = String::from("task: simulate\n\n");
    report.push_str(&record_core_invariants(manifest, scenario, &run));
    Ok(report)
}

fn invert_task(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> CliResult<String> {
    let run = fock_simulate(scenario)?;
    let iops = InversionOperators::build(&run.ops, &run.hs);
    let record = record_target(&run.ops, &iops, &run.traj, &scenario.drive, true)?;
    let j_eff_flat = jeff_mid(&run.ops, &record, &scenario.drive);
    let opts = InvertOptions {
        tol_fp: scenario.tolerances.tol_fp,
        max_iter: scenario.tolerances.max_iter,
        ..InvertOptions::default()
    };
    let cfg = scenario.initial_configuration(&run.ops)?;
    let (eff, reproduced) = fixed_point_invert(&run.ops, &iops, &record, &cfg, &j_eff_flat, &opts)?;

    write_observable(out, manifest, "a_eff_mid", &trajectory_array(&eff.a_mid)?)?;
    write_observable(out, manifest, "j_eff_mid", &trajectory_array(&eff.j_eff_mid)?)?;
    write_observable(out, manifest, "j_eff", &trajectory_array(&eff.j_eff)?)?;
    write_observable(out, manifest, "j_target", &trajectory_array(&record.conj.j)?)?;
    write_observable(out, manifest, "a_target", &trajectory_array(&record.conj.a)?)?;
    write_observable(out, manifest, "j_reproduced", &trajectory_array(&reproduced.j)?)?;
    write_observable(out, manifest, "a_reproduced", &trajectory_array(&reproduced.a)?)?;
    manifest.convergence = eff.convergence.clone();

    let (mut dj, mut da) = (0.0f64, 0.0f64);
    for (k, slab) in record.conj.j.iter().enumerate() {
        for (x, row) in slab.iter().enumerate() {
            for (mu, v) in row.iter().enumerate() {
                dj = dj.max((reproduced.j[k][x][mu] - v).abs());
                da = da.max((reproduced.a[k][x][mu] - record.conj.a[k][x][mu]).abs());
            }
        }
    }
    // the effective current is defined as the exact sum j + j_ext
    let mut djeff: f64 = 0.0;
    let model = &run.ops.model;
    for (k, slab) in eff.j_eff.iter().enumerate() {
        let j_ext = scenario.drive.j_values(model, record.grid.time(k));
        for (x, row) in slab.iter().enumerate() {
            for (mu, v) in row.iter().enumerate() {
                djeff = djeff.max((v - (record.conj.j[k][x][mu] + j_ext[x][mu])).abs());
            }
        }
    }
    let t = &scenario.tolerances;
    manifest.record("reproduction-current", dj, t.tol_match);
    manifest.record("reproduction-potential", da, t.tol_match);
    manifest.record("jeff-sum-identity", djeff, f64::EPSILON);
    manifest.leakage_max = max_leakage(&run.traj);
    let mut report = String::from("task: invert\n\n");
    report.push_str(&render_invariants(manifest));
    let _ = writeln!(
        report,
        "\ngauge rule: {} (min rank {}, min singular value {:.3e})",
        eff.gauge_meta.a0_rule, eff.gauge_meta.rank_min, eff.gauge_meta.smin_min
    );
    let max_iters = eff.convergence.iter().map(|c| c.0).max().unwrap_or(0);
    let _ = writeln!(report, "corrector iterations, max over steps: {max_iters}");
    Ok(report)
}

/// Eigen-orbitals of the single-particle Dirac matrix, ascending energy.
mod eigen {
    use qedks_core::linalg::{CMat, CVec};

    pub fn sorted_orbitals(h: &CMat) -> (Vec<f64>, Vec<CVec>) {
        let eig = nalgebra::SymmetricEigen::new(h.clone());
        let mut order: Vec<usize> = (0..h.nrows()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = order
            .iter()
            .map(|&k| CVec::from(eig.eigenvectors.column(k).clone_owned()))
            .collect();
        (vals, vecs)
    }
}

/// Build the orbital set and classical field of a factorized initial
/// configuration without touching the Fock space.
pub fn ks_initial(
    model: &Model,
    initial: &InitialSpec,
) -> CliResult<(OrbitalSet, ClassicalFieldState)> {
    let h = single_particle_dirac(model);
    let (vals, vecs) = eigen::sorted_orbitals(&h);
    match initial {
        InitialSpec::Vacuum => {
            let orbitals: Vec<_> = vals
                .iter()
                .zip(&vecs)
                .filter(|(v, _)| **v < 0.0)
                .map(|(_, o)| o.clone())
                .collect();
            let occ = vec![1.0; orbitals.len()];
            let set = OrbitalSet::new(orbitals, occ)?;
            Ok((set, ClassicalFieldState::zero(model)))
        }
        InitialSpec::CoherentSlater { n_filled, alphas } => {
            if *n_filled == 0 || *n_filled > vecs.len() {
                return Err(CliError::Schema(format!(
                    "initial.n_filled = {n_filled} is outside 1..={}",
                    vecs.len()
                )));
            }
            let orbitals: Vec<_> = vecs[..*n_filled].to_vec();
            let occ = vec![1.0; orbitals.len()];
            let set = OrbitalSet::new(orbitals, occ)?;
            let al: Vec<Complex64> = alphas.iter().map(|p| Complex64::new(p[0], p[1])).collect();
            Ok((set, ClassicalFieldState::from_coherent(model, &al)))
        }
        _ => Err(CliError::Schema(
            "the ks task needs a factorized initial configuration \
             (vacuum or coherent-slater); non-factorized configurations \
             must run through the full Fock-space simulate task"
                .into(),
        )),
    }
}

fn write_ks_trajectory(
    out: &Path,
    manifest: &mut RunManifest,
    traj: &KsTrajectory,
) -> CliResult<()> {
    write_observable(out, manifest, "j", &trajectory_array(&traj.j)?)?;
    write_observable(out, manifest, "a", &trajectory_array(&traj.a)?)?;
    write_observable(out, manifest, "a_dot", &trajectory_array(&traj.a_dot)?)?;
    write_observable(out, manifest, "field_energy", &scalar_series_array(&traj.field_energy)?)?;
    write_observable(out, manifest, "lorenz", &scalar_series_array(&traj.lorenz)?)?;
    Ok(())
}

fn ks_task(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> CliResult<String> {
    let model = scenario.build_model()?;
    let grid = scenario.time_grid()?;
    let (set0, field0) = ks_initial(&model, &scenario.initial)?;
    let traj = if let Some(ks) = &scenario.ks {
        // drive the auxiliary system with stored effective fields
        let a_mid = read_trajectory(&ks.effective_fields.join("a_eff_mid.bin"))?;
        let j_mid = read_trajectory(&ks.effective_fields.join("j_eff_mid.bin"))?;
        if a_mid.len() != grid.n_steps || j_mid.len() != grid.n_steps {
            return Err(CliError::Schema(format!(
                "effective-field arrays cover {} steps, grid has {}",
                a_mid.len(),
                grid.n_steps
            )));
        }
        ks_run(
            &model,
            &set0,
            &field0,
            |k| a_mid[k].clone(),
            |k| j_mid[k].clone(),
            &grid,
        )?
    } else {
        mean_field_run(&model, &set0, &field0, &scenario.drive, &grid)?
    };
    write_ks_trajectory(out, manifest, &traj)?;
    let final_res = traj
        .orbitals
        .sets
        .last()
        .map_or(0.0, |s| s.orthonormality_residual());
    manifest.record("orbital-orthonormality", final_res, 1e-9);
    let mut report = String::from("task: ks\n\n");
    report.push_str(&render_invariants(manifest));
    Ok(report)
}

fn taylor_task(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> CliResult<String> {
    let model = scenario.build_model()?;
    let ops = OperatorSet::build(&model)?;
    let hs = HamiltonianSet::build(&ops)?;
    let cfg = scenario.initial_configuration(&ops)?;
    let opts = InvertOptions {
        tol_fp: scenario.tolerances.tol_fp,
        max_iter: scenario.tolerances.max_iter,
        ..InvertOptions::default()
    };
    let table = taylor_construct(
        &ops,
        &hs,
        &cfg,
        &cfg,
        &scenario.drive,
        scenario.tolerances.l_max,
        &opts,
    )?;
    write_observable(out, manifest, "a_taylor", &trajectory_array(&table.a)?)?;
    write_observable(out, manifest, "j_eff_taylor", &trajectory_array(&table.j_eff)?)?;
    if table.growth_warning {
        manifest.warnings.push(
            "Taylor coefficients outgrow a factorial trend; the series radius \
             may not cover the requested horizon"
                .into(),
        );
    }
    let mut report = String::from("task: taylor\n\n");
    let _ = writeln!(report, "orders constructed: 0..={}", scenario.tolerances.l_max);
    report.push_str(&render_invariants(manifest));
    Ok(report)
}

fn verify_task(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> CliResult<String> {
    let run = fock_simulate(scenario)?;
    write_conjugate(out, manifest, &run.conj)?;
    let mut report = String::from("task: verify\n\n");
    let t = scenario.tolerances.clone();
    let q = run.ops.q_operators();

    // conservation block
    record_core_invariants(manifest, scenario, &run);

    // equation-of-motion residuals, one Richardson level
    let rc = eom_residual_current(&run.ops, &q, &run.traj, &run.conj, &scenario.drive, true);
    let rp = eom_residual_potential(&run.ops.model, &run.conj, &scenario.drive, true);
    manifest.record("eom-current", rc, t.tol_eom);
    manifest.record("eom-potential", rp, t.tol_eom);

    // constraint residual: compare against the measured second-order term
    // from a half-step run, on top of the static tolerance
    let gb = gupta_bleuler_residual(&run.ops.model, &run.conj);
    let mut half = scenario.clone();
    half.grid.dt *= 0.5;
    half.grid.n_steps *= 2;
    let run_h = fock_simulate(&half)?;
    let gb_h = gupta_bleuler_residual(&run_h.ops.model, &run_h.conj);
    let bound = run.ops.model.spec.tol_gauge + 5.0 * gb_h;
    manifest.record("gupta-bleuler", gb, bound);

    // causality of the linear response
    let ham = TimeDependentHamiltonian::with_drive(&run.ops, &run.hs, &scenario.drive);
    let cfg = scenario.initial_configuration(&run.ops)?;
    let probe_grid = TimeGrid::new(run.grid.t0, run.grid.dt, run.grid.n_steps.min(60))?;
    let probe = Probe {
        site: 0,
        nu: 1,
        step: probe_grid.n_steps / 2,
        eps: 1e-5,
    };
    let kernel = response_kernel(&run.ops, &cfg, &ham, &probe_grid, &probe)?;
    let pre: f64 = kernel[..=probe.step]
        .iter()
        .flat_map(|s| s.iter().flat_map(|r| r.iter().map(|v| v.abs())))
        .fold(0.0, f64::max);
    manifest.record("kernel-causality", pre, t.tol_causality);

    // free classical field energy drift over 10^3 steps
    let model = &run.ops.model;
    if !model.modes.is_empty() {
        let mut field = ClassicalFieldState::zero(model);
        field.q[0] = 0.5;
        let zero = vec![vec![0.0; model.n_mu()]; model.n_sites()];
        let egrid = TimeGrid::new(0.0, run.grid.dt, 1000)?;
        let ftraj = propagate_maxwell(model, &field, |_| zero.clone(), &egrid, 0.0)?;
        let e0 = ftraj.energy[0];
        let drift = ftraj
            .energy
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0, f64::max)
            / e0.max(1e-300);
        manifest.record("maxwell-energy-drift", drift, t.tol_energy);
    }

    report.push_str(&render_invariants(manifest));
    Ok(report)
}

/// Mean-field deviation from the exact Fock dynamics over a run; the sweep
/// uses it for the coupling-scaling study.
pub fn mean_field_deviation(scenario: &Scenario) -> CliResult<f64> {
    let run = fock_simulate(scenario)?;
    let model = &run.ops.model;
    let (set0, field0) = ks_initial(model, &scenario.initial)?;
    let mf = mean_field_run(model, &set0, &field0, &scenario.drive, &run.grid)?;
    let mut worst: f64 = 0.0;
    for (k, slab) in run.conj.j.iter().enumerate() {
        for (x, row) in slab.iter().enumerate() {
            for (mu, v) in row.iter().enumerate() {
                worst = worst.max((mf.j[k][x][mu] - v).abs());
                worst = worst.max((mf.a[k][x][mu] - run.conj.a[k][x][mu]).abs());
            }
        }
    }
    Ok(worst)
}
