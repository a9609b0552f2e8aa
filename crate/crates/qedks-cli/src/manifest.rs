//! Run manifest: everything needed to audit and reproduce a run.
//!
//! The scenario hash is the SHA-256 of the canonical scenario text (after
//! tolerance overrides). Re-running a scenario with the same hash must
//! reproduce every array byte for byte; the numerics are deterministic and
//! no RNG enters the core paths.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::{Scenario, Task, Tolerances};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub code_version: String,
    pub task: String,
    pub elapsed_seconds: f64,
    pub tolerances: Tolerances,
    pub invariants: Vec<InvariantRecord>,
    pub leakage_max: f64,
    /// Per-step (iterations, residual) of the fixed-point corrector, when
    /// the task runs one.
    pub convergence: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

pub fn scenario_hash(scenario: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(scenario.canonical().as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(scenario: &Scenario, task: Task) -> Self {
        RunManifest {
            scenario_hash: scenario_hash(scenario),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            task: task.to_string(),
            elapsed_seconds: 0.0,
            tolerances: scenario.tolerances.clone(),
            invariants: Vec::new(),
            leakage_max: 0.0,
            convergence: Vec::new(),
            warnings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, name: &str, measured: f64, tolerance: f64) -> bool {
        let pass = measured <= tolerance;
        self.invariants.push(InvariantRecord {
            name: name.to_string(),
            measured,
            tolerance,
            pass,
        });
        pass
    }

    pub fn all_pass(&self) -> bool {
        self.invariants.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&InvariantRecord> {
        self.invariants.iter().find(|r| !r.pass)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serialization cannot fail")
    }
}
