use qedks_core::fock::{InitialConfiguration, OperatorSet};
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::dynamics::*;
use qedks_core::model::{build_model, ModelSpec, ExternalDrive, DriveEntry, Term};

fn main() {
    let model = build_model(ModelSpec::reference()).unwrap();
    let ops = OperatorSet::build(&model).unwrap();
    let hs = HamiltonianSet::build(&ops).unwrap();
    let drive = ExternalDrive {
        a_ext: vec![DriveEntry { site: 0, mu: 1, terms: vec![Term::Sin { c: 0.3, omega: 1.7 }] }],
        j_ext: vec![DriveEntry { site: 1, mu: 1, terms: vec![Term::Cos { c: 0.2, omega: 0.9 }] }],
        t0: 0.0,
    };
    let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
    let q = ops.q_operators();
    let config = InitialConfiguration::vacuum(&ops);
    for dt in [4e-3f64, 2e-3, 1e-3] {
        let n = (0.5 / dt).round() as usize;
        let grid = TimeGrid::new(0.0, dt, n).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        let plain = eom_residual_current(&ops, &q, &traj, &conj, &drive, false);
        let rich = eom_residual_current(&ops, &q, &traj, &conj, &drive, true);
        let pot = eom_residual_potential(&model, &conj, &drive, false);
        let pot_r = eom_residual_potential(&model, &conj, &drive, true);
        println!("dt={dt:.0e}: current plain {plain:.3e} fd-rich {rich:.3e} | potential plain {pot:.3e} fd-rich {pot_r:.3e}");
    }
}
