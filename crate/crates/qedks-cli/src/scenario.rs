//! Scenario schema: one structured text document describes a complete run.
//!
//! Schema violations are reported with the offending field and map to exit
//! code 2; physics failures during the run map to exit code 1.

use num_complex::Complex64;
use qedks_core::dynamics::TimeGrid;
use qedks_core::fock::{InitialConfiguration, OperatorSet};
use qedks_core::model::{build_model, ExternalDrive, Model, ModelSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Simulate,
    Invert,
    Ks,
    Taylor,
    Verify,
    Sweep,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Simulate => "simulate",
            Task::Invert => "invert",
            Task::Ks => "ks",
            Task::Taylor => "taylor",
            Task::Verify => "verify",
            Task::Sweep => "sweep",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

/// Named initial-configuration constructions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialSpec {
    /// Dirac-sea fermion vacuum with the photon vacuum.
    Vacuum,
    /// Ground state of the full static interacting Hamiltonian.
    GroundState,
    /// Slater determinant of the lowest free orbitals with per-mode
    /// coherent photon states; alphas are [re, im] pairs.
    CoherentSlater {
        n_filled: usize,
        #[serde(default)]
        alphas: Vec<[f64; 2]>,
    },
    /// Explicit weighted ensemble of Fock-space vectors; each state is a
    /// list of [re, im] pairs of full Fock dimension.
    Explicit {
        weights: Vec<f64>,
        states: Vec<Vec<[f64; 2]>>,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Vacuum
    }
}

/// Tolerance settings with override hooks. Every field can be set from the
/// scenario file or from `--tol-override key=val`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Fixed-point corrector tolerance of the inversion.
    pub tol_fp: f64,
    /// Corrector iteration cap.
    pub max_iter: usize,
    /// Bound on the reproduced conjugate-pair deviation in match reports.
    pub tol_match: f64,
    /// Highest Taylor order for the `taylor` task.
    pub l_max: usize,
    /// Equation-of-motion residual bound (after Richardson).
    pub tol_eom: f64,
    /// Total-charge drift bound.
    pub tol_charge: f64,
    /// Per-state norm drift bound.
    pub tol_unitarity: f64,
    /// Free-field energy drift bound per 10^3 steps.
    pub tol_energy: f64,
    /// Response-kernel pre-probe magnitude bound.
    pub tol_causality: f64,
    /// Peak-field / critical-field ratio that triggers the validity warning.
    pub schwinger_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_fp: 1e-10,
            max_iter: 200,
            tol_match: 1e-6,
            l_max: 3,
            tol_eom: 1e-6,
            tol_charge: 1e-10,
            tol_unitarity: 1e-10,
            tol_energy: 1e-8,
            tol_causality: 1e-8,
            schwinger_ratio: 1.0,
        }
    }
}

impl Tolerances {
    /// Apply one `key=val` override. Unknown keys and out-of-range values
    /// are schema errors.
    pub fn apply_override(&mut self, spec: &str) -> CliResult<()> {
        let (key, val) = spec.split_once('=').ok_or_else(|| {
            CliError::Schema(format!("tol-override '{spec}' is not of the form key=val"))
        })?;
        let parse = |v: &str| -> CliResult<f64> {
            v.parse::<f64>()
                .map_err(|_| CliError::Schema(format!("tol-override {key}: '{v}' is not a number")))
        };
        let check_tol = |x: f64| -> CliResult<f64> {
            if !(x >= f64::EPSILON && x.is_finite()) {
                return Err(CliError::Schema(format!(
                    "tol-override {key}: {x} is below machine epsilon or not finite"
                )));
            }
            Ok(x)
        };
        match key {
            "tol_fp" => self.tol_fp = check_tol(parse(val)?)?,
            "tol_match" => self.tol_match = check_tol(parse(val)?)?,
            "tol_eom" => self.tol_eom = check_tol(parse(val)?)?,
            "tol_charge" => self.tol_charge = check_tol(parse(val)?)?,
            "tol_unitarity" => self.tol_unitarity = check_tol(parse(val)?)?,
            "tol_energy" => self.tol_energy = check_tol(parse(val)?)?,
            "tol_causality" => self.tol_causality = check_tol(parse(val)?)?,
            "schwinger_ratio" => self.schwinger_ratio = check_tol(parse(val)?)?,
            "max_iter" => {
                self.max_iter = val.parse().map_err(|_| {
                    CliError::Schema(format!("tol-override max_iter: '{val}' is not an integer"))
                })?
            }
            "l_max" => {
                self.l_max = val.parse().map_err(|_| {
                    CliError::Schema(format!("tol-override l_max: '{val}' is not an integer"))
                })?
            }
            other => {
                return Err(CliError::Schema(format!(
                    "tol-override: unknown key '{other}'"
                )))
            }
        }
        Ok(())
    }
}

/// Sweep axis over a named parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// One of: e, dt, dx, n_max, l_max.
    pub axis: String,
    pub values: Vec<f64>,
}

/// Optional `ks` task inputs: a directory of effective-field arrays
/// produced by a previous `invert` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsSpec {
    pub effective_fields: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub task: Option<Task>,
    pub model: ModelSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub drive: ExternalDrive,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub ks: Option<KsSpec>,
}

impl Scenario {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Schema(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> CliResult<Self> {
        let sc: Scenario = toml::from_str(text)
            .map_err(|e| CliError::Schema(format!("scenario parse error: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> CliResult<()> {
        if self.grid.dt <= 0.0 || !self.grid.dt.is_finite() {
            return Err(CliError::Schema(format!(
                "grid.dt must be positive and finite, got {}",
                self.grid.dt
            )));
        }
        if self.grid.n_steps == 0 {
            return Err(CliError::Schema("grid.n_steps must be >= 1".into()));
        }
        if let InitialSpec::Explicit { weights, states } = &self.initial {
            if weights.len() != states.len() || weights.is_empty() {
                return Err(CliError::Schema(
                    "initial.weights and initial.states must be non-empty and matched".into(),
                ));
            }
        }
        if let Some(sw) = &self.sweep {
            match sw.axis.as_str() {
                "e" | "dt" | "dx" | "n_max" | "l_max" => {}
                other => {
                    return Err(CliError::Schema(format!(
                        "sweep.axis '{other}' is not one of e, dt, dx, n_max, l_max"
                    )))
                }
            }
            if sw.values.len() < 2 {
                return Err(CliError::Schema(
                    "sweep.values needs at least two points".into(),
                ));
            }
        }
        Ok(())
    }

    /// Canonical serialization; its hash identifies the run.
    pub fn canonical(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn build_model(&self) -> CliResult<Model> {
        build_model(self.model.clone()).map_err(CliError::from)
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid> {
        TimeGrid::new(self.grid.t0, self.grid.dt, self.grid.n_steps).map_err(CliError::from)
    }

    /// Realize the named initial construction on a built operator set.
    pub fn initial_configuration(&self, ops: &OperatorSet) -> CliResult<InitialConfiguration> {
        match &self.initial {
            InitialSpec::Vacuum => Ok(InitialConfiguration::vacuum(ops)),
            InitialSpec::GroundState => {
                let hs = qedks_core::hamiltonian::HamiltonianSet::build(ops)?;
                let (_, state) = qedks_core::hamiltonian::ground_state(&hs.static_total());
                Ok(InitialConfiguration::pure(state))
            }
            InitialSpec::CoherentSlater { n_filled, alphas } => {
                if *n_filled > ops.model.spec.fermion_modes() {
                    return Err(CliError::Schema(format!(
                        "initial.n_filled = {n_filled} exceeds the {} orbitals",
                        ops.model.spec.fermion_modes()
                    )));
                }
                let al: Vec<Complex64> = alphas
                    .iter()
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                Ok(InitialConfiguration::coherent_slater(ops, *n_filled, &al))
            }
            InitialSpec::Explicit { weights, states } => {
                let dim = ops.model.spec.fock_dim();
                let mut vecs = Vec::with_capacity(states.len());
                for (i, s) in states.iter().enumerate() {
                    if s.len() != dim {
                        return Err(CliError::Schema(format!(
                            "initial.states[{i}] has {} entries, Fock dimension is {dim}",
                            s.len()
                        )));
                    }
                    vecs.push(qedks_core::linalg::CVec::from_iterator(
                        dim,
                        s.iter().map(|p| Complex64::new(p[0], p[1])),
                    ));
                }
                InitialConfiguration::new(weights.clone(), vecs).map_err(CliError::from)
            }
        }
    }

    /// Whether the initial configuration factorizes into orbitals (x)
    /// coherent field, i.e. is eligible for the orbital-based `ks` task.
    pub fn factorized_initial(&self) -> bool {
        matches!(
            self.initial,
            InitialSpec::Vacuum | InitialSpec::CoherentSlater { .. }
        )
    }
}

/// The reference scenario used across the test and acceptance suites.
pub fn reference_scenario() -> Scenario {
    Scenario {
        task: None,
        model: ModelSpec::reference(),
        grid: GridSpec {
            t0: 0.0,
            dt: 1e-3,
            n_steps: 2000,
        },
        initial: InitialSpec::Vacuum,
        drive: ExternalDrive::default(),
        tolerances: Tolerances::default(),
        sweep: None,
        ks: None,
    }
}
