//! Exact unitary propagation of Fock-space configurations, extraction of
//! the conjugate trajectory (j, A, Adot), equation-of-motion residuals and
//! the linear-response causality probe.

use crate::error::{CoreError, Result};
use crate::fock::{InitialConfiguration, OperatorSet, QOperators};
use crate::hamiltonian::{TimeDependentHamiltonian, TimeFn};
use crate::linalg::{CMat, CVec, StepPropagator};
use crate::model::{ExternalDrive, Model};
use num_complex::Complex64;

/// Uniform time grid t_k = t0 + k dt, k = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(CoreError::InvalidSpec(format!("dt = {dt} must be > 0")));
        }
        if n_steps < 1 {
            return Err(CoreError::InvalidSpec("n_steps must be >= 1".into()));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Midpoint of step k (between t_k and t_{k+1}).
    pub fn mid(&self, k: usize) -> f64 {
        self.t0 + (k as f64 + 0.5) * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// Evolved ensemble: states at every grid point and at every step midpoint.
/// Midpoint states are what the inversion needs for its defining equation.
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub weights: Vec<f64>,
    /// states[k][i]: ensemble member i at t_k; length n_steps + 1.
    pub states: Vec<Vec<CVec>>,
    /// mid_states[k][i]: ensemble member i at the midpoint of step k.
    pub mid_states: Vec<Vec<CVec>>,
    /// Top-photon-level weight per grid point.
    pub leakage: Vec<f64>,
}

impl StateTrajectory {
    /// Ensemble expectation of a Hermitian operator at grid point k.
    pub fn expectation(&self, k: usize, op: &CMat) -> f64 {
        ensemble_expectation(&self.weights, &self.states[k], op).re
    }

    pub fn expectation_mid(&self, k: usize, op: &CMat) -> f64 {
        ensemble_expectation(&self.weights, &self.mid_states[k], op).re
    }

    pub fn expectation_complex(&self, k: usize, op: &CMat) -> Complex64 {
        ensemble_expectation(&self.weights, &self.states[k], op)
    }
}

fn ensemble_expectation(weights: &[f64], states: &[CVec], op: &CMat) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, s) in weights.iter().zip(states) {
        acc += s.dotc(&(op * s)) * Complex64::new(*p, 0.0);
    }
    acc
}

/// Propagate with a per-step midpoint Hamiltonian supplied by a closure
/// (step index k -> H evaluated at the midpoint of step k).
pub fn propagate_with<F>(
    ops: &OperatorSet,
    config: &InitialConfiguration,
    grid: &TimeGrid,
    mut h_mid: F,
) -> Result<StateTrajectory>
where
    F: FnMut(usize) -> CMat,
{
    propagate_inner(ops, config, grid, &mut h_mid, None)
}

/// Propagate under an assembled time-dependent Hamiltonian using the
/// exponential midpoint rule. When the Hamiltonian is time-independent its
/// eigendecomposition is reused across all steps.
pub fn propagate(
    ops: &OperatorSet,
    config: &InitialConfiguration,
    ham: &TimeDependentHamiltonian,
    grid: &TimeGrid,
) -> Result<StateTrajectory> {
    let constant = ham
        .couplings
        .iter()
        .all(|(_, f)| matches!(f, TimeFn::Const(_)));
    if constant {
        let cached = StepPropagator::new(&ham.at(grid.t0));
        propagate_inner(ops, config, grid, &mut |_| unreachable!(), Some(cached))
    } else {
        propagate_inner(ops, config, grid, &mut |k| ham.at(grid.mid(k)), None)
    }
}

fn propagate_inner(
    ops: &OperatorSet,
    config: &InitialConfiguration,
    grid: &TimeGrid,
    h_mid: &mut dyn FnMut(usize) -> CMat,
    cached: Option<StepPropagator>,
) -> Result<StateTrajectory> {
    let dt = grid.dt;
    let leak_max = ops.model.spec.leak_max;
    let mut states: Vec<Vec<CVec>> = vec![config.states.clone()];
    let mut mid_states: Vec<Vec<CVec>> = Vec::with_capacity(grid.n_steps);
    let mut leakage = Vec::with_capacity(grid.n_steps + 1);

    let check = |step: usize, members: &[CVec]| -> Result<f64> {
        let mut leak = 0.0;
        for (p, s) in config.weights.iter().zip(members) {
            let drift = (s.norm() - 1.0).abs();
            if drift > 1e-10 {
                return Err(CoreError::UnitarityViolated { step, drift });
            }
            leak += p * ops.leakage(s);
        }
        if leak > leak_max {
            return Err(CoreError::LeakageExceeded {
                leak,
                leak_max,
                step,
            });
        }
        Ok(leak)
    };
    leakage.push(check(0, &states[0])?);

    for k in 0..grid.n_steps {
        let fresh;
        let prop = match &cached {
            Some(p) => p,
            None => {
                fresh = StepPropagator::new(&h_mid(k));
                &fresh
            }
        };
        let prev = states.last().unwrap();
        let mut mids = Vec::with_capacity(prev.len());
        let mut next = Vec::with_capacity(prev.len());
        for s in prev {
            mids.push(prop.apply(s, dt / 2.0));
            next.push(prop.apply(s, dt));
        }
        leakage.push(check(k + 1, &next)?);
        mid_states.push(mids);
        states.push(next);
    }

    Ok(StateTrajectory {
        grid: *grid,
        weights: config.weights.clone(),
        states,
        mid_states,
        leakage,
    })
}

/// The conjugate pair and auxiliary observables on the grid.
#[derive(Debug, Clone)]
pub struct ConjugateTrajectory {
    pub grid: TimeGrid,
    /// j^mu(x, t_k), upper index. [k][site][mu].
    pub j: Vec<Vec<Vec<f64>>>,
    /// A_mu(x, t_k) = <A_mu(x)>, lower index. [k][site][mu].
    pub a: Vec<Vec<Vec<f64>>>,
    /// <Adot_mu(x)>. Same layout as `a`.
    pub a_dot: Vec<Vec<Vec<f64>>>,
    /// Mode quadrature expectations <Q_m>, <P_m>. [k][mode].
    pub q_modes: Vec<Vec<f64>>,
    pub p_modes: Vec<Vec<f64>>,
    pub leakage: Vec<f64>,
}

/// Extract the conjugate trajectory. Imaginary parts of all expectations
/// must be numerical noise; anything larger flags a broken operator.
pub fn observables(ops: &OperatorSet, traj: &StateTrajectory) -> Result<ConjugateTrajectory> {
    let model = &ops.model;
    let n = model.n_sites();
    let n_mu = model.n_mu();
    let n_k = traj.states.len();
    let mut j = vec![vec![vec![0.0; n_mu]; n]; n_k];
    let mut a = vec![vec![vec![0.0; n_mu]; n]; n_k];
    let mut a_dot = vec![vec![vec![0.0; n_mu]; n]; n_k];
    let mut q_modes = vec![vec![0.0; model.modes.len()]; n_k];
    let mut p_modes = vec![vec![0.0; model.modes.len()]; n_k];
    let grab = |val: Complex64, what: &str| -> Result<f64> {
        if val.im.abs() > 1e-10 {
            return Err(CoreError::InvalidConfiguration(format!(
                "{what} has imaginary part {:.3e}",
                val.im
            )));
        }
        Ok(val.re)
    };
    for k in 0..n_k {
        for x in 0..n {
            for mu in 0..n_mu {
                j[k][x][mu] = grab(traj.expectation_complex(k, &ops.j[mu][x]), "j")?;
                a[k][x][mu] = grab(traj.expectation_complex(k, &ops.a_pot[mu][x]), "A")?;
                a_dot[k][x][mu] = grab(traj.expectation_complex(k, &ops.adot_pot[mu][x]), "Adot")?;
            }
        }
        for m in 0..model.modes.len() {
            q_modes[k][m] = grab(traj.expectation_complex(k, &ops.q_mode[m]), "Q")?;
            p_modes[k][m] = grab(traj.expectation_complex(k, &ops.p_mode[m]), "P")?;
        }
    }
    Ok(ConjugateTrajectory {
        grid: traj.grid,
        j,
        a,
        a_dot,
        q_modes,
        p_modes,
        leakage: traj.leakage.clone(),
    })
}

/// Centered first derivative at grid point k (1 <= k <= n-1).
pub fn centered_derivative(f: impl Fn(usize) -> f64, dt: f64, k: usize) -> f64 {
    (f(k + 1) - f(k - 1)) / (2.0 * dt)
}

/// One Richardson level on the centered first derivative (2 <= k <= n-2):
/// (4 D_h - D_2h) / 3, fourth-order accurate.
pub fn richardson_derivative(f: impl Fn(usize) -> f64, dt: f64, k: usize) -> f64 {
    let d_h = (f(k + 1) - f(k - 1)) / (2.0 * dt);
    let d_2h = (f(k + 2) - f(k - 2)) / (4.0 * dt);
    (4.0 * d_h - d_2h) / 3.0
}

/// Centered second derivative at grid point k.
pub fn second_derivative(f: impl Fn(usize) -> f64, dt: f64, k: usize) -> f64 {
    (f(k + 1) - 2.0 * f(k) + f(k - 1)) / (dt * dt)
}

/// One Richardson level on the centered second derivative (2 <= k <= n-2).
pub fn richardson_second_derivative(f: impl Fn(usize) -> f64, dt: f64, k: usize) -> f64 {
    let d_h = (f(k + 1) - 2.0 * f(k) + f(k - 1)) / (dt * dt);
    let d_2h = (f(k + 2) - 2.0 * f(k) + f(k - 2)) / (4.0 * dt * dt);
    (4.0 * d_h - d_2h) / 3.0
}

/// Residual of the current equation of motion:
/// max over interior grid points and (x, mu) of
/// | d<j^mu(x)>/dt - <r_kin + r_int + r_n . a_ext> |.
pub fn eom_residual_current(
    ops: &OperatorSet,
    q: &QOperators,
    traj: &StateTrajectory,
    conj: &ConjugateTrajectory,
    drive: &ExternalDrive,
    richardson: bool,
) -> f64 {
    let model = &ops.model;
    let n_k = traj.states.len();
    let dt = traj.grid.dt;
    let margin = if richardson { 2 } else { 1 };
    if n_k < 2 * margin + 1 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for mu in 0..model.n_mu() {
        for x in 0..model.n_sites() {
            let drift_op = &q.r_kin[mu][x] + &q.r_int[mu][x];
            for k in margin..(n_k - margin) {
                let t = traj.grid.time(k);
                let a_ext = drive.a_values(model, t);
                let mut rate = traj.expectation(k, &drift_op);
                for nu in 0..model.n_mu() {
                    if a_ext[x][nu] != 0.0 {
                        rate += a_ext[x][nu] * traj.expectation(k, &q.r_n[mu][nu][x]);
                    }
                }
                let f = |i: usize| conj.j[i][x][mu];
                let deriv = if richardson {
                    richardson_derivative(f, dt, k)
                } else {
                    centered_derivative(f, dt, k)
                };
                worst = worst.max((deriv - rate).abs());
            }
        }
    }
    worst
}

/// Residual of the mode-projected Maxwell equation:
/// max over interior grid points and modes of
/// | d^2<Q_m>/dt^2 + w_m^2 <Q_m> + e dx sum_x u_m(x) (j^p + j^p_ext)(x) |,
/// where p is the mode's polarization. Projecting onto the quantized modes
/// makes the check exact up to time discretization and truncation; the
/// clamped zero-mode frequency enters both the dynamics and the residual.
pub fn eom_residual_potential(
    model: &Model,
    conj: &ConjugateTrajectory,
    drive: &ExternalDrive,
    richardson: bool,
) -> f64 {
    let n_k = conj.q_modes.len();
    let dt = conj.grid.dt;
    let dx = model.dx();
    let e = model.spec.e;
    let margin = if richardson { 2 } else { 1 };
    if n_k < 2 * margin + 1 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for (m, mode) in model.modes.iter().enumerate() {
        let pol = mode.polarization;
        for k in margin..(n_k - margin) {
            let t = conj.grid.time(k);
            let j_ext = drive.j_values(model, t);
            let mut source = 0.0;
            for x in 0..model.n_sites() {
                source += mode.profile[x] * (conj.j[k][x][pol] + j_ext[x][pol]);
            }
            source *= e * dx;
            let f = |i: usize| conj.q_modes[i][m];
            let dd = if richardson {
                richardson_second_derivative(f, dt, k)
            } else {
                second_derivative(f, dt, k)
            };
            let res = dd + mode.omega * mode.omega * conj.q_modes[k][m] + source;
            worst = worst.max(res.abs());
        }
    }
    worst
}

/// Discrete Gupta-Bleuler expectation residual:
/// max over interior grid points of |d_t <A_0(x)> - D_c <A_1(x)>|.
pub fn gupta_bleuler_residual(model: &Model, conj: &ConjugateTrajectory) -> f64 {
    let n_k = conj.a.len();
    let dt = conj.grid.dt;
    let dx = model.dx();
    let mut worst: f64 = 0.0;
    for k in 1..n_k.saturating_sub(1) {
        for x in 0..model.n_sites() {
            let xp = model.site_shift(x, 1);
            let xm = model.site_shift(x, -1);
            let d_t = (conj.a[k + 1][x][0] - conj.a[k - 1][x][0]) / (2.0 * dt);
            let div = (conj.a[k][xp][1] - conj.a[k][xm][1]) / (2.0 * dx);
            worst = worst.max((d_t - div).abs());
        }
    }
    worst
}

/// Maximal drift of the total charge over the run.
pub fn charge_drift(ops: &OperatorSet, traj: &StateTrajectory) -> f64 {
    let q0 = traj.expectation(0, &ops.charge);
    (0..traj.states.len())
        .map(|k| (traj.expectation(k, &ops.charge) - q0).abs())
        .fold(0.0, f64::max)
}

/// A one-step rectangular probe pulse added to the external potential.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub site: usize,
    pub nu: usize,
    /// Grid step during which the pulse is on.
    pub step: usize,
    pub eps: f64,
}

/// Finite-difference linear-response kernel
/// delta j^mu(x, t_k) / delta a_nu(y, t') for a one-step pulse at `probe`.
/// Returned as kernel[k][site][mu] = (j_perturbed - j_base) / eps.
pub fn response_kernel(
    ops: &OperatorSet,
    config: &InitialConfiguration,
    ham: &TimeDependentHamiltonian,
    grid: &TimeGrid,
    probe: &Probe,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let pulse_op =
        &ops.j[probe.nu][probe.site] * Complex64::new(ops.model.spec.e * ops.model.dx(), 0.0);
    let base = propagate_with(ops, config, grid, |k| ham.at(grid.mid(k)))?;
    let pert = propagate_with(ops, config, grid, |k| {
        let mut h = ham.at(grid.mid(k));
        if k == probe.step {
            h += &pulse_op * Complex64::new(probe.eps, 0.0);
        }
        h
    })?;
    let cj_base = observables(ops, &base)?;
    let cj_pert = observables(ops, &pert)?;
    let n = ops.model.n_sites();
    let n_mu = ops.model.n_mu();
    let mut kernel = vec![vec![vec![0.0; n_mu]; n]; grid.n_steps + 1];
    for k in 0..=grid.n_steps {
        for x in 0..n {
            for mu in 0..n_mu {
                kernel[k][x][mu] = (cj_pert.j[k][x][mu] - cj_base.j[k][x][mu]) / probe.eps;
            }
        }
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::InitialConfiguration;
    use crate::hamiltonian::{ground_state, HamiltonianSet};
    use crate::model::{build_model, DriveEntry, ModelSpec, Term};

    fn setup(spec: ModelSpec) -> (OperatorSet, HamiltonianSet) {
        let model = build_model(spec).unwrap();
        let ops = OperatorSet::build(&model).unwrap();
        let hs = HamiltonianSet::build(&ops).unwrap();
        (ops, hs)
    }

    fn no_drive(ops: &OperatorSet, hs: &HamiltonianSet) -> TimeDependentHamiltonian {
        TimeDependentHamiltonian::with_drive(ops, hs, &ExternalDrive::zero())
    }

    #[test]
    fn eigenstate_observables_are_stationary() {
        let (ops, hs) = setup(ModelSpec::reference());
        let (_, gs) = ground_state(&hs.static_total());
        let config = InitialConfiguration::pure(gs);
        let grid = TimeGrid::new(0.0, 0.01, 60).unwrap();
        let traj = propagate(&ops, &config, &no_drive(&ops, &hs), &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        for k in 0..=grid.n_steps {
            for x in 0..2 {
                for mu in 0..2 {
                    assert!((conj.j[k][x][mu] - conj.j[0][x][mu]).abs() < 1e-11);
                    assert!((conj.a[k][x][mu] - conj.a[0][x][mu]).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn free_coherent_mode_follows_classical_oscillator() {
        // e = 0: <Q>(t) = Q0 cos(wt) + (P0/w) sin(wt), the closed-form
        // oscillator solution.
        let mut spec = ModelSpec::reference();
        spec.e = 0.0;
        spec.n_max = 5;
        let (ops, hs) = setup(spec);
        let alpha = Complex64::new(0.15, 0.1);
        let config = InitialConfiguration::coherent_slater(&ops, 2, &[alpha]);
        let grid = TimeGrid::new(0.0, 0.02, 200).unwrap();
        let traj = propagate(&ops, &config, &no_drive(&ops, &hs), &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        let w = ops.model.modes[0].omega;
        let q0 = 2.0 * alpha.re / (2.0 * w).sqrt();
        let p0 = (2.0 * w).sqrt() * alpha.im;
        for k in 0..=grid.n_steps {
            let t = grid.time(k);
            let expect = q0 * (w * t).cos() + p0 / w * (w * t).sin();
            assert!(
                (conj.q_modes[k][0] - expect).abs() < 1e-8,
                "k = {k}: {} vs {expect}",
                conj.q_modes[k][0]
            );
        }
    }

    #[test]
    fn vacuum_without_drive_stays_dark() {
        // charge-conjugation + field-parity symmetry force <j> = <A> = 0
        // even in the interacting theory
        let (ops, hs) = setup(ModelSpec::reference());
        let config = InitialConfiguration::vacuum(&ops);
        let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let traj = propagate(&ops, &config, &no_drive(&ops, &hs), &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        for k in 0..=grid.n_steps {
            for x in 0..2 {
                for mu in 0..2 {
                    assert!(conj.j[k][x][mu].abs() < 1e-10, "j[{k}][{x}][{mu}]");
                    assert!(conj.a[k][x][mu].abs() < 1e-10, "a[{k}][{x}][{mu}]");
                }
            }
        }
    }

    fn driven_setup() -> (OperatorSet, HamiltonianSet, ExternalDrive) {
        let (ops, hs) = setup(ModelSpec::reference());
        let drive = ExternalDrive {
            a_ext: vec![DriveEntry {
                site: 0,
                mu: 1,
                terms: vec![Term::Sin { c: 0.3, omega: 1.7 }],
            }],
            j_ext: vec![DriveEntry {
                site: 1,
                mu: 1,
                terms: vec![Term::Cos { c: 0.2, omega: 0.9 }],
            }],
            t0: 0.0,
        };
        (ops, hs, drive)
    }

    #[test]
    fn a_dot_matches_finite_difference_of_a() {
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::vacuum(&ops);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, 0.005, 200).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        let mut worst: f64 = 0.0;
        for k in 1..grid.n_steps {
            for x in 0..2 {
                let fd = centered_derivative(|i| conj.a[i][x][1], grid.dt, k);
                worst = worst.max((fd - conj.a_dot[k][x][1]).abs());
            }
        }
        assert!(worst < 5e-5, "d<A>/dt vs <Adot>: {worst}");
    }

    #[test]
    fn charge_conserved_under_drive() {
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::coherent_slater(&ops, 2, &[Complex64::new(0.1, 0.0)]);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, 0.01, 150).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        assert!(charge_drift(&ops, &traj) < 1e-11);
    }

    #[test]
    fn current_eom_residual_second_order_and_richardson() {
        let (ops, hs, drive) = driven_setup();
        let q = ops.q_operators();
        let config = InitialConfiguration::vacuum(&ops);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let run = |dt: f64| {
            let n = (0.5 / dt).round() as usize;
            let grid = TimeGrid::new(0.0, dt, n).unwrap();
            let traj = propagate(&ops, &config, &ham, &grid).unwrap();
            let conj = observables(&ops, &traj).unwrap();
            (
                eom_residual_current(&ops, &q, &traj, &conj, &drive, false),
                eom_residual_current(&ops, &q, &traj, &conj, &drive, true),
            )
        };
        let (r_coarse, _) = run(4e-3);
        let (r_fine, r_fine_rich) = run(2e-3);
        let order = (r_coarse / r_fine).log2();
        assert!(
            (order - 2.0).abs() < 0.3,
            "order {order} from {r_coarse:.3e} / {r_fine:.3e}"
        );
        // richardson removes the finite-difference part of the residual;
        // the propagator's own O(dt^2) part remains
        assert!(
            r_fine_rich < r_fine / 2.0 && r_fine_rich < 1e-6,
            "richardson residual {r_fine_rich:.3e} vs plain {r_fine:.3e}"
        );
    }

    #[test]
    fn potential_eom_residual_small() {
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::coherent_slater(&ops, 2, &[Complex64::new(0.1, 0.0)]);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, 1e-3, 400).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        let res = eom_residual_potential(&ops.model, &conj, &drive, true);
        assert!(res < 1e-7, "mode-projected Maxwell residual {res}");
    }

    #[test]
    fn gupta_bleuler_trivial_on_two_sites() {
        // <A_0> = 0 (unquantized) and the centered difference vanishes
        // identically on two periodic sites, so both terms are zero.
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::vacuum(&ops);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, 0.01, 50).unwrap();
        let traj = propagate(&ops, &config, &ham, &grid).unwrap();
        let conj = observables(&ops, &traj).unwrap();
        assert!(gupta_bleuler_residual(&ops.model, &conj) < 1e-12);
    }

    #[test]
    fn response_kernel_is_causal() {
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::vacuum(&ops);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let grid = TimeGrid::new(0.0, 0.01, 60).unwrap();
        let probe = Probe {
            site: 0,
            nu: 1,
            step: 30,
            eps: 1e-5,
        };
        let kernel = response_kernel(&ops, &config, &ham, &grid, &probe).unwrap();
        // strictly before the pulse the two evolutions are identical
        for k in 0..=probe.step {
            for x in 0..2 {
                for mu in 0..2 {
                    assert!(kernel[k][x][mu].abs() < 1e-8, "acausal entry at k = {k}");
                }
            }
        }
        // after the pulse something must happen
        let late: f64 = kernel[probe.step + 5..]
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| f64::max(m, v.abs()));
        assert!(late > 1e-6, "kernel never responded: {late:.3e}");
    }

    #[test]
    fn kernel_jump_matches_schwinger_tensor_expectation() {
        // First-order response right after the pulse: the EOM says
        // delta j^mu = eps * dt * <r_n^{mu nu}(y)> + O(dt^2).
        let mut spec = ModelSpec::reference();
        spec.n_sites = 1;
        spec.spinor_dim = 4;
        let (ops, hs) = setup(spec);
        let q = ops.q_operators();
        // fermion state with transverse spin polarization in the sea block
        // so that <n^{3,2}> != 0
        let fdim = ops.fermion_dim();
        let mut orb1 = CVec::zeros(4);
        orb1[2] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        orb1[3] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut orb2 = CVec::zeros(4);
        orb2[2] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        orb2[3] = Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let _ = orb2;
        let ferm = crate::fock::slater_vector(&ops.f_ferm, &[orb1], fdim);
        let config = InitialConfiguration::pure(ops.with_photon_vacuum(&ferm));
        let ham = no_drive(&ops, &hs);
        let dt = 1e-3;
        let grid = TimeGrid::new(0.0, dt, 40).unwrap();
        let probe = Probe {
            site: 0,
            nu: 2,
            step: 10,
            eps: 1e-5,
        };
        let kernel = response_kernel(&ops, &config, &ham, &grid, &probe).unwrap();
        let expect = dt * config.expectation(&q.r_n[3][2][0]);
        assert!(expect.abs() > 1e-4, "test state has no Schwinger response");
        let got = kernel[probe.step + 1][0][3];
        let rel = (got - expect).abs() / expect.abs();
        assert!(rel < 0.03, "jump {got:.6e} vs {expect:.6e} (rel {rel:.3e})");
    }

    #[test]
    fn self_convergence_under_step_halving() {
        let (ops, hs, drive) = driven_setup();
        let config = InitialConfiguration::vacuum(&ops);
        let ham = TimeDependentHamiltonian::with_drive(&ops, &hs, &drive);
        let run = |dt: f64, n: usize| {
            let grid = TimeGrid::new(0.0, dt, n).unwrap();
            let traj = propagate(&ops, &config, &ham, &grid).unwrap();
            observables(&ops, &traj).unwrap()
        };
        let coarse = run(0.01, 50);
        let fine = run(0.005, 100);
        let mut worst: f64 = 0.0;
        for k in 0..=50 {
            for x in 0..2 {
                for mu in 0..2 {
                    worst = worst.max((coarse.j[k][x][mu] - fine.j[2 * k][x][mu]).abs());
                }
            }
        }
        // midpoint rule: O(dt^2) global error
        assert!(worst < 5e-5, "self-convergence gap {worst}");
    }

    #[test]
    fn leakage_guard_triggers() {
        let mut spec = ModelSpec::reference();
        spec.n_max = 2;
        let (ops, hs) = setup(spec);
        // a coherent state with substantial weight at the top level
        let config = InitialConfiguration::coherent_slater(&ops, 2, &[Complex64::new(0.8, 0.0)]);
        let grid = TimeGrid::new(0.0, 0.01, 5).unwrap();
        let err = propagate(&ops, &config, &no_drive(&ops, &hs), &grid);
        assert!(matches!(err, Err(CoreError::LeakageExceeded { .. })));
    }
}
