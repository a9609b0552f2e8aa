//! Shared fixtures for the benchmark targets.

use qedks_core::dynamics::TimeGrid;
use qedks_core::fock::{InitialConfiguration, OperatorSet};
use qedks_core::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian};
use qedks_core::model::{build_model, DriveEntry, ExternalDrive, ModelSpec, Term};

pub struct Fixture {
    pub ops: OperatorSet,
    pub hs: HamiltonianSet,
    pub drive: ExternalDrive,
}

pub fn reference_fixture() -> Fixture {
    let model = build_model(ModelSpec::reference()).unwrap();
    let ops = OperatorSet::build(&model).unwrap();
    let hs = HamiltonianSet::build(&ops).unwrap();
    let drive = ExternalDrive {
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
    };
    Fixture { ops, hs, drive }
}

impl Fixture {
    pub fn hamiltonian(&self) -> TimeDependentHamiltonian {
        TimeDependentHamiltonian::with_drive(&self.ops, &self.hs, &self.drive)
    }

    pub fn vacuum(&self) -> InitialConfiguration {
        InitialConfiguration::vacuum(&self.ops)
    }

    pub fn grid(&self, n_steps: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1e-3, n_steps).unwrap()
    }
}
