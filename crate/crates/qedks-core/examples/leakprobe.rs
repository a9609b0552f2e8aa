use qedks_core::fock::{InitialConfiguration, OperatorSet};
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::dynamics::{propagate, TimeGrid};
use qedks_core::model::{build_model, ModelSpec, ExternalDrive};

fn main() {
    for leak_relax in [1.0f64] {
        let mut spec = ModelSpec::reference();
        spec.leak_max = 1.0; // disable guard for the probe
        let _ = leak_relax;
        let model = build_model(spec).unwrap();
        let ops = OperatorSet::build(&model).unwrap();
        let hs = HamiltonianSet::build(&ops).unwrap();
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &ExternalDrive::zero());
        let config = InitialConfiguration::vacuum(&ops);
        let grid = TimeGrid::new(0.0, 1e-3, 2000).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        let max_leak = traj.leakage.iter().cloned().fold(0.0, f64::max);
        println!("vacuum run: max leakage over T=2: {max_leak:.3e}");
        // also per-level occupation at the end
        for m in 0..1 {
            let n_end = traj.expectation(2000, &ops.num_mode[m]);
            println!("  <n_{m}>(T) = {n_end:.4e}");
        }
    }
}
