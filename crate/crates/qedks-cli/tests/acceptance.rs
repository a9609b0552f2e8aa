//! Acceptance suite: one test per acceptance criterion, each emitting a
//! single `[PASS]`/`[FAIL]` line with the measured values.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! for passing criteria too; failures always show theirs.
//!
//! Reference configuration throughout unless stated: 2 sites, spinor
//! dimension 2, one staggered photon mode with n_max = 4, e = 0.2,
//! m0 = 1, dt = 1e-3.

use num_complex::Complex64;
use qedks_core::dynamics::{
    charge_drift, eom_residual_current, eom_residual_potential, gupta_bleuler_residual,
    observables, propagate, response_kernel, Probe, TimeGrid,
};
use qedks_core::fock::{InitialConfiguration, OperatorSet};
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::inversion::{
    fixed_point_invert, jeff_mid, record_target, reproduce, taylor_construct, InversionOperators,
    InvertOptions,
};
use qedks_core::kohnsham::{
    current_from_orbitals, mean_field_run, propagate_maxwell, propagate_orbitals,
    ClassicalFieldState, OrbitalSet,
};
use qedks_core::linalg::{anticommutator, ceye, commutator, max_abs};
use qedks_core::model::{build_model, DriveEntry, ExternalDrive, ModelSpec, Term};

// ---------------------------------------------------------------------------
// shared plumbing

fn criterion(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "[PASS]" } else { "[FAIL]" };
    println!("{verdict} criterion {n:02} {name}: {detail}");
    assert!(pass, "criterion {n:02} {name}: {detail}");
}

fn setup(spec: ModelSpec) -> (OperatorSet, HamiltonianSet) {
    let model = build_model(spec).unwrap();
    let ops = OperatorSet::build(&model).unwrap();
    let hs = HamiltonianSet::build(&ops).unwrap();
    (ops, hs)
}

fn reference_drive() -> ExternalDrive {
    ExternalDrive {
        a_ext: vec![DriveEntry {
            site: 0,
            mu: 1,
            terms: vec![Term::Sin { c: 0.3, omega: 1.7 }],
        }],
        j_ext: vec![DriveEntry {
            site: 1,
            mu: 1,
            terms: vec![Term::Sin { c: 0.15, omega: 0.9 }],
        }],
        t0: 0.0,
    }
}

fn vacuum_orbitals(ops: &OperatorSet) -> OrbitalSet {
    let occ = vec![1.0; ops.vacuum_orbitals.len()];
    OrbitalSet::new(ops.vacuum_orbitals.clone(), occ).unwrap()
}

fn max_conj_dev(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(sa, sb)| {
            sa.iter()
                .zip(sb)
                .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1. operator algebra

#[test]
fn criterion_01_operator_algebra() {
    let (ops, _) = setup(ModelSpec::reference());
    let model = &ops.model;
    let nf = model.spec.fermion_modes();
    let fdim = model.spec.fermion_dim();
    let mut worst: f64 = 0.0;

    // canonical anticommutation relations against the Jordan-Wigner matrices
    for i in 0..nf {
        for j in 0..nf {
            let mut acc = anticommutator(&ops.f_ferm[i], &ops.f_ferm[j].adjoint());
            if i == j {
                acc -= ceye(fdim);
            }
            worst = worst.max(max_abs(&acc));
            worst = worst.max(max_abs(&anticommutator(&ops.f_ferm[i], &ops.f_ferm[j])));
        }
    }

    // truncated oscillator: [Q, P] = i (1 - (n_max + 1) P_top) exactly
    let dim = model.spec.fock_dim();
    let expected = (ceye(dim) - &ops.top_level_proj * Complex64::new((model.spec.n_max + 1) as f64, 0.0))
        * Complex64::new(0.0, 1.0);
    let qp = commutator(&ops.q_mode[0], &ops.p_mode[0]) - expected;
    worst = worst.max(max_abs(&qp));

    // Clifford relations of the gamma matrices with the (+,-) signature
    let mut clifford: f64 = 0.0;
    for mu in 0..model.n_mu() {
        for nu in 0..model.n_mu() {
            let mut acc = anticommutator(&model.gamma.gamma[mu], &model.gamma.gamma[nu]);
            if mu == nu {
                acc -= ceye(model.spec.spinor_dim) * Complex64::new(2.0 * model.gamma.metric[mu], 0.0);
            }
            clifford = clifford.max(max_abs(&acc));
        }
    }

    let pass = worst <= 1e-12 && clifford == 0.0;
    criterion(
        1,
        "operator-algebra",
        pass,
        &format!("CAR/oscillator residual {worst:.3e} <= 1e-12, Clifford residual {clifford:.1e} (exact)"),
    );
}

// ---------------------------------------------------------------------------
// 2. equation-of-motion residuals

#[test]
fn criterion_02_eom_residuals() {
    let drive = reference_drive();
    let horizon = 0.5;
    let mut current = Vec::new();
    let mut potential = Vec::new();
    let dts = [2e-3, 1e-3, 5e-4];
    let mut rich_at_ref = (0.0, 0.0);
    for &dt in &dts {
        let (ops, hs) = setup(ModelSpec::reference());
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, dt, (horizon / dt).round() as usize).unwrap();
        let cfg = InitialConfiguration::vacuum(&ops);
        let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        let q = ops.q_operators();
        current.push(eom_residual_current(&ops, &q, &traj, &conj, &drive, false));
        potential.push(eom_residual_potential(&ops.model, &conj, &drive, false));
        if dt == 1e-3 {
            rich_at_ref = (
                eom_residual_current(&ops, &q, &traj, &conj, &drive, true),
                eom_residual_potential(&ops.model, &conj, &drive, true),
            );
        }
    }
    let order_c1 = (current[0] / current[1]).log2();
    let order_c2 = (current[1] / current[2]).log2();
    let order_p1 = (potential[0] / potential[1]).log2();
    let orders_ok = (order_c1 - 2.0).abs() <= 0.2
        && (order_c2 - 2.0).abs() <= 0.2
        && (potential[1] < 1e-11 || (order_p1 - 2.0).abs() <= 0.2);
    let rich_ok = rich_at_ref.0 <= 1e-6 && rich_at_ref.1 <= 1e-6;
    criterion(
        2,
        "eom-residuals",
        orders_ok && rich_ok,
        &format!(
            "current orders {order_c1:.2}/{order_c2:.2} (2.0 +- 0.2), Richardson residuals {:.3e}/{:.3e} <= 1e-6 at dt=1e-3",
            rich_at_ref.0, rich_at_ref.1
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. theorem end-to-end on the interacting reference run

#[test]
fn criterion_03_theorem_end_to_end() {
    let (ops, hs) = setup(ModelSpec::reference());
    let drive = reference_drive();
    let iops = InversionOperators::build(&ops, &hs);
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let grid = TimeGrid::new(0.0, 1e-3, 2000).unwrap();
    let cfg = InitialConfiguration::vacuum(&ops);
    let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
    let record = record_target(&ops, &iops, &traj, &drive, true).unwrap();
    let j_eff = jeff_mid(&ops, &record, &drive);
    let opts = InvertOptions::default();
    let (eff, conj) = fixed_point_invert(&ops, &iops, &record, &cfg, &j_eff, &opts).unwrap();

    let dj = max_conj_dev(&conj.j, &record.conj.j);
    let da = max_conj_dev(&conj.a, &record.conj.a);
    // j_eff is defined as the exact sum j + j_ext: compare to an
    // independently recomputed sum, entry for entry
    let model = &ops.model;
    let mut djeff: f64 = 0.0;
    for (k, slab) in eff.j_eff.iter().enumerate() {
        let j_ext = drive.j_values(model, record.grid.time(k));
        for (x, row) in slab.iter().enumerate() {
            for (mu, v) in row.iter().enumerate() {
                djeff = djeff.max((v - (record.conj.j[k][x][mu] + j_ext[x][mu])).abs());
            }
        }
    }
    let pass = dj <= 1e-6 && da <= 1e-6 && djeff == 0.0;
    criterion(
        3,
        "theorem-end-to-end",
        pass,
        &format!("max|j'-j| = {dj:.3e} <= 1e-6, max|A'-A| = {da:.3e} <= 1e-6, |j_eff-(j+j_ext)| = {djeff:.1e} (exact)"),
    );
}

// ---------------------------------------------------------------------------
// 4. Taylor orders vs finite differences of the fixed-point fields

#[test]
fn criterion_04_taylor_cross_check() {
    let (ops, hs) = setup(ModelSpec::reference());
    let drive = reference_drive();
    let iops = InversionOperators::build(&ops, &hs);
    let cfg = InitialConfiguration::vacuum(&ops);
    let opts = InvertOptions::default();
    let table = taylor_construct(&ops, &hs, &cfg, &cfg, &drive, 1, &opts).unwrap();

    // short fixed-point marching; fit a cubic through the first midpoints
    // to recover the value and slope of a_eff at t0
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let dt = 1e-3;
    let n_probe = 4;
    let grid = TimeGrid::new(0.0, dt, 12).unwrap();
    let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
    let record = record_target(&ops, &iops, &traj, &drive, true).unwrap();
    let j_eff = jeff_mid(&ops, &record, &drive);
    let (eff, _) = fixed_point_invert(&ops, &iops, &record, &cfg, &j_eff, &opts).unwrap();

    // Vandermonde solve in tau = t - t0 on the first four midpoints
    let taus: Vec<f64> = (0..n_probe).map(|k| (k as f64 + 0.5) * dt).collect();
    let vand = nalgebra::DMatrix::<f64>::from_fn(n_probe, n_probe, |r, c| taus[r].powi(c as i32));
    let lu = vand.lu();
    let model = &ops.model;
    let mut worst: f64 = 0.0;
    for x in 0..model.n_sites() {
        for mu in 0..model.n_mu() {
            let rhs =
                nalgebra::DVector::from_iterator(n_probe, (0..n_probe).map(|k| eff.a_mid[k][x][mu]));
            let coef = lu.solve(&rhs).unwrap();
            worst = worst.max((coef[0] - table.a[0][x][mu]).abs());
            worst = worst.max((coef[1] - table.a[1][x][mu]).abs());
        }
    }
    criterion(
        4,
        "taylor-cross-check",
        worst <= 1e-5,
        &format!("orders 0,1 vs finite differences of a_eff: max deviation {worst:.3e} <= 1e-5"),
    );
}

// ---------------------------------------------------------------------------
// 5. Runge-Gross separation

#[test]
fn criterion_05_runge_gross_separation() {
    let (ops, hs) = setup(ModelSpec::reference());
    let grid = TimeGrid::new(0.0, 1e-3, 500).unwrap();
    let cfg = InitialConfiguration::vacuum(&ops);
    let mut drive_b = reference_drive();
    drive_b.a_ext[0].terms = vec![Term::Sin { c: 0.3, omega: 1.0 }];
    let mut js = Vec::new();
    for drive in [reference_drive(), drive_b] {
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
        js.push(observables(&ops, &traj).unwrap().j);
    }
    let sep = max_conj_dev(&js[0], &js[1]);
    let floor = 1e3 * 1e-6;
    criterion(
        5,
        "runge-gross-separation",
        sep >= floor,
        &format!("gauge-inequivalent drives separate: max|dj| = {sep:.3e} >= {floor:.0e}"),
    );
}

// ---------------------------------------------------------------------------
// 6. gauge invariance of the construction

#[test]
fn criterion_06_gauge_invariance() {
    let (ops, hs) = setup(ModelSpec::reference());
    let drive = reference_drive();
    let iops = InversionOperators::build(&ops, &hs);
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let grid = TimeGrid::new(0.0, 1e-3, 40).unwrap();
    let cfg = InitialConfiguration::vacuum(&ops);
    let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
    let record = record_target(&ops, &iops, &traj, &drive, true).unwrap();
    let j_eff = jeff_mid(&ops, &record, &drive);
    let opts = InvertOptions::default();
    let (mut eff, base) = fixed_point_invert(&ops, &iops, &record, &cfg, &j_eff, &opts).unwrap();
    for slab in eff.a_mid.iter_mut() {
        for row in slab.iter_mut() {
            row[0] += 0.37;
        }
    }
    let shifted = reproduce(&ops, &iops, &eff, &cfg).unwrap();
    let fock_dev = max_conj_dev(&shifted.j, &base.j).max(max_conj_dev(&shifted.a, &base.a));

    // orbital side: a constant scalar potential is a global phase
    let model = &ops.model;
    let set = vacuum_orbitals(&ops);
    let mut a_plain = vec![vec![0.0; model.n_mu()]; model.n_sites()];
    a_plain[0][1] = 0.2;
    let mut a_shift = a_plain.clone();
    for row in a_shift.iter_mut() {
        row[0] += 0.85;
    }
    let t0 = propagate_orbitals(model, &set, |_| a_plain.clone(), &grid).unwrap();
    let t1 = propagate_orbitals(model, &set, |_| a_shift.clone(), &grid).unwrap();
    let orbital_dev = t0
        .sets
        .iter()
        .zip(&t1.sets)
        .map(|(sa, sb)| {
            max_conj_dev(
                &[current_from_orbitals(model, sa)],
                &[current_from_orbitals(model, sb)],
            )
        })
        .fold(0.0, f64::max);

    let pass = fock_dev <= 1e-6 && orbital_dev <= 1e-10;
    criterion(
        6,
        "gauge-invariance",
        pass,
        &format!("constant a0 shift: pair moved {fock_dev:.3e} <= 1e-6, orbital currents {orbital_dev:.3e} <= 1e-10"),
    );
}

// ---------------------------------------------------------------------------
// 7. mean-field closure

#[test]
fn criterion_07_mean_field_closure() {
    // exactness at e = 0 with a coherent field (wide photon truncation so
    // the coherent tail sits below the tolerance)
    let mut spec = ModelSpec::reference();
    spec.e = 0.0;
    spec.n_max = 10;
    let (ops, hs) = setup(spec);
    let model = ops.model.clone();
    let drive = ExternalDrive::zero();
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let alpha = Complex64::new(0.2, -0.1);
    let cfg = InitialConfiguration::coherent_slater(&ops, 2, &[alpha]);
    let grid = TimeGrid::new(0.0, 1e-3, 200).unwrap();
    let qconj = observables(&ops, &propagate(&ops, &cfg, &ham, &grid).unwrap()).unwrap();
    let set = vacuum_orbitals(&ops);
    let field = ClassicalFieldState::from_coherent(&model, &[alpha]);
    let mf = mean_field_run(&model, &set, &field, &drive, &grid).unwrap();
    let dev0 = max_conj_dev(&mf.j, &qconj.j).max(max_conj_dev(&mf.a, &qconj.a));

    // scaling along e: deviation from the exact Fock dynamics
    let drive = reference_drive();
    let mut devs = Vec::new();
    for &e in &[0.2, 0.1, 0.05] {
        let mut spec = ModelSpec::reference();
        spec.e = e;
        let (ops, hs) = setup(spec);
        let model = ops.model.clone();
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let cfg = InitialConfiguration::vacuum(&ops);
        let grid = TimeGrid::new(0.0, 1e-3, 200).unwrap();
        let conj = observables(&ops, &propagate(&ops, &cfg, &ham, &grid).unwrap()).unwrap();
        let set = vacuum_orbitals(&ops);
        let field = ClassicalFieldState::zero(&model);
        let mf = mean_field_run(&model, &set, &field, &drive, &grid).unwrap();
        devs.push(max_conj_dev(&mf.j, &conj.j).max(max_conj_dev(&mf.a, &conj.a)));
    }
    let monotone = devs[0] > devs[1] && devs[1] > devs[2];
    let order1 = (devs[0] / devs[1]).log2();
    let order2 = (devs[1] / devs[2]).log2();
    let pass = dev0 <= 1e-10 && monotone;
    criterion(
        7,
        "mean-field-closure",
        pass,
        &format!(
            "e=0 deviation {dev0:.3e} <= 1e-10; deviations {:.3e} > {:.3e} > {:.3e} over e = 0.2, 0.1, 0.05 (fitted orders {order1:.2}, {order2:.2})",
            devs[0], devs[1], devs[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. causality of the response kernel

#[test]
fn criterion_08_kernel_causality() {
    let (ops, hs) = setup(ModelSpec::reference());
    let drive = reference_drive();
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let grid = TimeGrid::new(0.0, 1e-3, 80).unwrap();
    let cfg = InitialConfiguration::vacuum(&ops);
    let probe = Probe {
        site: 0,
        nu: 1,
        step: 40,
        eps: 1e-5,
    };
    let kernel = response_kernel(&ops, &cfg, &ham, &grid, &probe).unwrap();
    let pre = kernel[..=probe.step]
        .iter()
        .flat_map(|s| s.iter().flat_map(|r| r.iter().map(|v| v.abs())))
        .fold(0.0, f64::max);
    criterion(
        8,
        "kernel-causality",
        pre <= 1e-8,
        &format!("pre-probe response {pre:.3e} <= 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// 9. conservation suite

#[test]
fn criterion_09_conservation_suite() {
    let (ops, hs) = setup(ModelSpec::reference());
    let drive = reference_drive();
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let grid = TimeGrid::new(0.0, 1e-3, 1000).unwrap();
    let cfg = InitialConfiguration::vacuum(&ops);
    let traj = propagate(&ops, &cfg, &ham, &grid).unwrap();
    let conj = observables(&ops, &traj).unwrap();
    let model = &ops.model;

    let unit = traj
        .states
        .iter()
        .flat_map(|ens| ens.iter().map(|s| (s.norm() - 1.0).abs()))
        .fold(0.0, f64::max);
    let charge = charge_drift(&ops, &traj);

    // free classical Maxwell energy over 10^3 steps
    let mut field = ClassicalFieldState::zero(model);
    field.q[0] = 0.5;
    let zero = vec![vec![0.0; model.n_mu()]; model.n_sites()];
    let ftraj = propagate_maxwell(model, &field, |_| zero.clone(), &grid, 0.0).unwrap();
    let e0 = ftraj.energy[0];
    let energy_drift = ftraj
        .energy
        .iter()
        .map(|e| (e - e0).abs() / e0)
        .fold(0.0, f64::max);

    // constraint residual against tol_gauge plus the measured dt^2 term
    let gb = gupta_bleuler_residual(model, &conj);
    let half_grid = TimeGrid::new(0.0, 5e-4, 2000).unwrap();
    let half_traj = propagate(&ops, &cfg, &ham, &half_grid).unwrap();
    let gb_half = gupta_bleuler_residual(model, &observables(&ops, &half_traj).unwrap());
    let gb_bound = model.spec.tol_gauge + 5.0 * gb_half;

    let pass = unit <= 1e-10 && charge <= 1e-10 && energy_drift <= 1e-8 && gb <= gb_bound;
    criterion(
        9,
        "conservation-suite",
        pass,
        &format!(
            "unitarity {unit:.3e} <= 1e-10, charge drift {charge:.3e} <= 1e-10, Maxwell energy {energy_drift:.3e} <= 1e-8 per 1e3 steps, constraint {gb:.3e} <= {gb_bound:.3e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Ehrenfest reduction at zero coupling

#[test]
fn criterion_10_ehrenfest_reduction() {
    let mut spec = ModelSpec::reference();
    spec.e = 0.0;
    spec.n_max = 10;
    let (ops, hs) = setup(spec);
    let model = ops.model.clone();
    let drive = ExternalDrive::zero();
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let alpha = Complex64::new(0.2, -0.1);
    let cfg = InitialConfiguration::coherent_slater(&ops, 2, &[alpha]);
    let grid = TimeGrid::new(0.0, 1e-3, 500).unwrap();
    let qconj = observables(&ops, &propagate(&ops, &cfg, &ham, &grid).unwrap()).unwrap();

    let set = vacuum_orbitals(&ops);
    let field = ClassicalFieldState::from_coherent(&model, &[alpha]);
    let ctraj = mean_field_run(&model, &set, &field, &drive, &grid).unwrap();
    let dev = max_conj_dev(&ctraj.j, &qconj.j)
        .max(max_conj_dev(&ctraj.a, &qconj.a))
        .max(max_conj_dev(&ctraj.a_dot, &qconj.a_dot));
    criterion(
        10,
        "ehrenfest-reduction",
        dev <= 1e-8,
        &format!("quantized coherent vs classical field: max deviation {dev:.3e} <= 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// 11. determinism of the artifact pipeline

#[test]
fn criterion_11_determinism() {
    let scenario_text = r#"
[model]
n_sites = 2
lattice_spacing = 1.0
spinor_dim = 2
n_modes = 1
n_max = 4
e = 0.2
m0 = 1.0

[grid]
dt = 1e-3
n_steps = 100

[initial]
kind = "vacuum"

[[drive.a_ext]]
site = 0
mu = 1
terms = [{ kind = "sin", c = 0.3, omega = 1.7 }]

[[drive.j_ext]]
site = 1
mu = 1
terms = [{ kind = "sin", c = 0.15, omega = 0.9 }]
"#;
    let scenario = qedks_cli::Scenario::from_str(scenario_text).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for dir in ["a", "b"] {
        let out = tmp.path().join(dir);
        let manifest =
            qedks_cli::tasks::run(qedks_cli::Task::Invert, &scenario, &out, 1).unwrap();
        hashes.push(manifest.scenario_hash);
    }
    let mut worst_file = String::new();
    let mut identical = hashes[0] == hashes[1];
    for name in [
        "j.bin",
        "a.bin",
        "a_eff_mid.bin",
        "j_eff_mid.bin",
        "j_eff.bin",
        "j_reproduced.bin",
        "a_reproduced.bin",
        "j_target.bin",
        "a_target.bin",
    ] {
        let pa = tmp.path().join("a").join(name);
        if !pa.exists() {
            continue;
        }
        let da = std::fs::read(&pa).unwrap();
        let db = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        if da != db {
            identical = false;
            worst_file = name.to_string();
        }
    }
    criterion(
        11,
        "determinism",
        identical,
        &if identical {
            format!("repeated inversion runs byte-identical (hash {})", &hashes[0][..12])
        } else {
            format!("artifact {worst_file} differs between identical runs")
        },
    );
}
