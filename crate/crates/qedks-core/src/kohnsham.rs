//! Forward noninteracting solver for factorized initial configurations:
//! Dirac orbital propagation against a classical mode field, plus the
//! self-consistent mean-field closure a_eff = a_ext + A.
//!
//! For factorized configurations with coherent photon states the quantized
//! noninteracting photon dynamics reduces exactly to the classical mode
//! equations for the expectations (quadratic Hamiltonian, linear source),
//! so the classical treatment here is exact at expectation level, not an
//! approximation. Non-factorized configurations belong to the full
//! Fock-space propagator in the dynamics module instead.

use crate::dynamics::TimeGrid;
use crate::error::{CoreError, Result};
use crate::fock::single_particle_dirac;
use crate::linalg::{CMat, CVec, StepPropagator};
use crate::model::{ExternalDrive, Model};
use num_complex::Complex64;

/// Orthonormal single-particle orbitals with fixed occupations.
#[derive(Debug, Clone)]
pub struct OrbitalSet {
    /// phi_j on the lattice, indexed by fermion_index(site, spinor).
    pub orbitals: Vec<CVec>,
    pub occupations: Vec<f64>,
}

impl OrbitalSet {
    pub fn new(orbitals: Vec<CVec>, occupations: Vec<f64>) -> Result<Self> {
        if orbitals.is_empty() || orbitals.len() != occupations.len() {
            return Err(CoreError::InvalidConfiguration(
                "orbitals and occupations must be non-empty and matched".into(),
            ));
        }
        if occupations.iter().any(|&c| c < 0.0) {
            return Err(CoreError::InvalidConfiguration(
                "occupations must be non-negative".into(),
            ));
        }
        let set = OrbitalSet {
            orbitals,
            occupations,
        };
        let res = set.orthonormality_residual();
        if res > 1e-10 {
            return Err(CoreError::InvalidConfiguration(format!(
                "orbitals not orthonormal: residual {res:.3e}"
            )));
        }
        Ok(set)
    }

    /// max |<phi_i|phi_j> - delta_ij|.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.orbitals.iter().enumerate() {
            for (j, b) in self.orbitals.iter().enumerate() {
                let ov = a.dotc(b);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ov - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    pub fn total_charge(&self) -> f64 {
        self.occupations.iter().sum()
    }
}

/// j^mu(x) = sum_j c_j phi_j^dag(x) alpha^mu phi_j(x) / dx - tr(alpha^mu)/(2 dx),
/// the same vacuum-subtracted convention as the Fock-space current.
pub fn current_from_orbitals(model: &Model, set: &OrbitalSet) -> Vec<Vec<f64>> {
    let d = model.spec.spinor_dim;
    let dx = model.dx();
    let n_mu = model.n_mu();
    let mut out = vec![vec![0.0; n_mu]; model.n_sites()];
    for mu in 0..n_mu {
        let alpha = model.gamma.alpha(mu);
        let trace: Complex64 = alpha.diagonal().iter().sum();
        for x in 0..model.n_sites() {
            let mut val = Complex64::new(0.0, 0.0);
            for (c, phi) in set.occupations.iter().zip(&set.orbitals) {
                for a in 0..d {
                    for b in 0..d {
                        val += Complex64::new(*c, 0.0)
                            * phi[model.fermion_index(x, a)].conj()
                            * alpha[(a, b)]
                            * phi[model.fermion_index(x, b)];
                    }
                }
            }
            out[x][mu] = (val - trace / Complex64::new(2.0, 0.0)).re / dx;
        }
    }
    out
}

/// Single-particle Kohn-Sham matrix h(a) = h_dirac + e sum_{x mu} a_mu(x)
/// alpha^mu at site x; the lift of the Fock coupling e dx sum j^mu a_mu up
/// to a physically irrelevant c-number.
pub fn single_particle_hamiltonian(model: &Model, h_dirac: &CMat, a: &[Vec<f64>]) -> CMat {
    let d = model.spec.spinor_dim;
    let mut h = h_dirac.clone();
    for x in 0..model.n_sites() {
        for mu in 0..model.n_mu() {
            if a[x][mu] == 0.0 {
                continue;
            }
            let alpha = model.gamma.alpha(mu);
            let c = Complex64::new(model.spec.e * a[x][mu], 0.0);
            for aa in 0..d {
                for bb in 0..d {
                    h[(model.fermion_index(x, aa), model.fermion_index(x, bb))] +=
                        c * alpha[(aa, bb)];
                }
            }
        }
    }
    h
}

/// Classical state of the quantized mode sector: one (Q, P) pair per mode,
/// mirroring the expectations of the mode coordinate operators.
#[derive(Debug, Clone)]
pub struct ClassicalFieldState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ClassicalFieldState {
    pub fn zero(model: &Model) -> Self {
        ClassicalFieldState {
            q: vec![0.0; model.modes.len()],
            p: vec![0.0; model.modes.len()],
        }
    }

    /// Mode amplitudes matching a coherent photon state alpha_m:
    /// Q = 2 Re alpha / sqrt(2 w), P = sqrt(2 w) Im alpha.
    pub fn from_coherent(model: &Model, alphas: &[Complex64]) -> Self {
        let mut q = Vec::with_capacity(model.modes.len());
        let mut p = Vec::with_capacity(model.modes.len());
        for (m, mode) in model.modes.iter().enumerate() {
            let al = alphas.get(m).copied().unwrap_or(Complex64::new(0.0, 0.0));
            q.push(2.0 * al.re / (2.0 * mode.omega).sqrt());
            p.push((2.0 * mode.omega).sqrt() * al.im);
        }
        ClassicalFieldState { q, p }
    }

    /// A_mu(x) = sum_m u_m(x) Q_m over modes of polarization mu.
    pub fn a_values(&self, model: &Model) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; model.n_mu()]; model.n_sites()];
        for (m, mode) in model.modes.iter().enumerate() {
            for x in 0..model.n_sites() {
                out[x][mode.polarization] += mode.profile[x] * self.q[m];
            }
        }
        out
    }

    /// Adot_mu(x) = sum_m u_m(x) P_m.
    pub fn a_dot_values(&self, model: &Model) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; model.n_mu()]; model.n_sites()];
        for (m, mode) in model.modes.iter().enumerate() {
            for x in 0..model.n_sites() {
                out[x][mode.polarization] += mode.profile[x] * self.p[m];
            }
        }
        out
    }

    /// Free-field energy sum_m (P^2 + w^2 Q^2)/2.
    pub fn energy(&self, model: &Model) -> f64 {
        model
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| 0.5 * (self.p[m] * self.p[m] + mode.omega.powi(2) * self.q[m] * self.q[m]))
            .sum()
    }

    /// Discrete Lorenz residual: with A_0 = 0 this is the lattice
    /// divergence of the spatial potential, max over sites.
    pub fn lorenz_residual(&self, model: &Model) -> f64 {
        let a = self.a_values(model);
        let dx = model.dx();
        let mut worst: f64 = 0.0;
        for x in 0..model.n_sites() {
            let xp = model.site_shift(x, 1);
            let xm = model.site_shift(x, -1);
            let mut div = 0.0;
            for mu in 1..model.n_mu() {
                div += (a[xp][mu] - a[xm][mu]) / (2.0 * dx);
            }
            worst = worst.max(div.abs());
        }
        worst
    }
}

/// One exact step of the (optionally damped) driven mode oscillator with
/// the force frozen at its midpoint value:
///   Qddot = -w^2 Q - gamma Qdot + f.
fn mode_step(q: f64, p: f64, omega: f64, f: f64, gamma: f64, dt: f64) -> (f64, f64) {
    let q_eq = f / (omega * omega);
    let x0 = q - q_eq;
    let v0 = p;
    if gamma == 0.0 {
        let (s, c) = (omega * dt).sin_cos();
        (
            q_eq + x0 * c + v0 / omega * s,
            -x0 * omega * s + v0 * c,
        )
    } else {
        let wd = (omega * omega - 0.25 * gamma * gamma).max(1e-300).sqrt();
        let (s, c) = (wd * dt).sin_cos();
        let damp = (-0.5 * gamma * dt).exp();
        let x = damp * (x0 * c + (v0 + 0.5 * gamma * x0) / wd * s);
        let v = damp * (v0 * c - (omega * omega * x0 + 0.5 * gamma * v0) / wd * s);
        (q_eq + x, v)
    }
}

/// Per-mode force from the effective current: f_m = -e dx sum_x u_m(x)
/// j_eff^{pol_m}(x).
fn mode_forces(model: &Model, j_eff: &[Vec<f64>]) -> Vec<f64> {
    let e_dx = model.spec.e * model.dx();
    model
        .modes
        .iter()
        .map(|mode| {
            -e_dx
                * mode
                    .profile
                    .iter()
                    .enumerate()
                    .map(|(x, u)| u * j_eff[x][mode.polarization])
                    .sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<ClassicalFieldState>,
    pub energy: Vec<f64>,
    pub lorenz: Vec<f64>,
}

/// March the classical mode field under a source sampled at step midpoints.
/// `damping` > 0 adds a relaxation window (used for static solves); the
/// undamped integrator is exact per mode for midpoint-frozen sources.
pub fn propagate_maxwell<F>(
    model: &Model,
    field0: &ClassicalFieldState,
    mut source_mid: F,
    grid: &TimeGrid,
    damping: f64,
) -> Result<FieldTrajectory>
where
    F: FnMut(usize) -> Vec<Vec<f64>>,
{
    let mut states = vec![field0.clone()];
    let mut energy = vec![field0.energy(model)];
    let mut lorenz = vec![field0.lorenz_residual(model)];
    let e_floor = energy[0].max(1.0);
    for k in 0..grid.n_steps {
        let prev = states.last().unwrap();
        let forces = mode_forces(model, &source_mid(k));
        let mut q = Vec::with_capacity(prev.q.len());
        let mut p = Vec::with_capacity(prev.q.len());
        for (m, mode) in model.modes.iter().enumerate() {
            let (qn, pn) = mode_step(prev.q[m], prev.p[m], mode.omega, forces[m], damping, grid.dt);
            q.push(qn);
            p.push(pn);
        }
        let next = ClassicalFieldState { q, p };
        let e = next.energy(model);
        if e > 10.0 * e_floor && damping == 0.0 {
            return Err(CoreError::FieldInstability {
                factor: e / e_floor,
            });
        }
        energy.push(e);
        lorenz.push(next.lorenz_residual(model));
        states.push(next);
    }
    Ok(FieldTrajectory {
        grid: *grid,
        states,
        energy,
        lorenz,
    })
}

#[derive(Debug, Clone)]
pub struct OrbitalTrajectory {
    pub grid: TimeGrid,
    pub sets: Vec<OrbitalSet>,
}

/// Exponential-midpoint propagation of an orbital set under a sampled
/// effective potential. Refuses steps too large for the operator norm.
pub fn propagate_orbitals<F>(
    model: &Model,
    set0: &OrbitalSet,
    mut a_eff_mid: F,
    grid: &TimeGrid,
) -> Result<OrbitalTrajectory>
where
    F: FnMut(usize) -> Vec<Vec<f64>>,
{
    let h_dirac = single_particle_dirac(model);
    let mut sets = vec![set0.clone()];
    for k in 0..grid.n_steps {
        let h = single_particle_hamiltonian(model, &h_dirac, &a_eff_mid(k));
        cfl_guard(&h, grid.dt)?;
        let prop = StepPropagator::new(&h);
        let prev = sets.last().unwrap();
        let orbitals: Vec<CVec> = prev.orbitals.iter().map(|o| prop.apply(o, grid.dt)).collect();
        let next = OrbitalSet {
            orbitals,
            occupations: prev.occupations.clone(),
        };
        let res = next.orthonormality_residual();
        if res > 1e-9 {
            return Err(CoreError::InvalidConfiguration(format!(
                "orthonormality lost at step {}: residual {res:.3e}",
                k + 1
            )));
        }
        sets.push(next);
    }
    Ok(OrbitalTrajectory { grid: *grid, sets })
}

/// The step-size guard of the orbital propagator: the exponential midpoint
/// rule is unconditionally stable, but a step that rotates the fastest
/// component by more than ~pi/2 cannot resolve the drive sampling.
fn cfl_guard(h: &CMat, dt: f64) -> Result<()> {
    let norm = h
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let product = dt * norm;
    if product > 1.5 {
        return Err(CoreError::StepTooLarge { dt, norm, product });
    }
    Ok(())
}

/// Conjugate-pair trajectory of a Kohn-Sham run.
#[derive(Debug, Clone)]
pub struct KsTrajectory {
    pub grid: TimeGrid,
    /// j^mu(x, t_k) from the orbitals. [k][site][mu].
    pub j: Vec<Vec<Vec<f64>>>,
    /// A_mu(x, t_k) from the classical field. [k][site][mu].
    pub a: Vec<Vec<Vec<f64>>>,
    pub a_dot: Vec<Vec<Vec<f64>>>,
    pub field_energy: Vec<f64>,
    pub lorenz: Vec<f64>,
    pub orbitals: OrbitalTrajectory,
    pub field: Vec<ClassicalFieldState>,
}

fn push_observation(
    model: &Model,
    traj: &mut KsTrajectory,
    set: &OrbitalSet,
    field: &ClassicalFieldState,
) {
    traj.j.push(current_from_orbitals(model, set));
    traj.a.push(field.a_values(model));
    traj.a_dot.push(field.a_dot_values(model));
    traj.field_energy.push(field.energy(model));
    traj.lorenz.push(field.lorenz_residual(model));
}

/// Drive a Kohn-Sham system with externally supplied effective fields,
/// both sampled at step midpoints (the output of the inversion module).
pub fn ks_run<FA, FJ>(
    model: &Model,
    set0: &OrbitalSet,
    field0: &ClassicalFieldState,
    mut a_eff_mid: FA,
    mut j_eff_mid: FJ,
    grid: &TimeGrid,
) -> Result<KsTrajectory>
where
    FA: FnMut(usize) -> Vec<Vec<f64>>,
    FJ: FnMut(usize) -> Vec<Vec<f64>>,
{
    let h_dirac = single_particle_dirac(model);
    let mut traj = KsTrajectory {
        grid: *grid,
        j: Vec::new(),
        a: Vec::new(),
        a_dot: Vec::new(),
        field_energy: Vec::new(),
        lorenz: Vec::new(),
        orbitals: OrbitalTrajectory {
            grid: *grid,
            sets: vec![set0.clone()],
        },
        field: vec![field0.clone()],
    };
    push_observation(model, &mut traj, set0, field0);
    for k in 0..grid.n_steps {
        let a = a_eff_mid(k);
        let j_eff = j_eff_mid(k);
        let h = single_particle_hamiltonian(model, &h_dirac, &a);
        cfl_guard(&h, grid.dt)?;
        let prop = StepPropagator::new(&h);
        let prev = traj.orbitals.sets.last().unwrap().clone();
        let orbitals: Vec<CVec> = prev.orbitals.iter().map(|o| prop.apply(o, grid.dt)).collect();
        let set = OrbitalSet {
            orbitals,
            occupations: prev.occupations.clone(),
        };
        let forces = mode_forces(model, &j_eff);
        let prev_f = traj.field.last().unwrap().clone();
        let mut q = Vec::with_capacity(prev_f.q.len());
        let mut p = Vec::with_capacity(prev_f.q.len());
        for (m, mode) in model.modes.iter().enumerate() {
            let (qn, pn) = mode_step(prev_f.q[m], prev_f.p[m], mode.omega, forces[m], 0.0, grid.dt);
            q.push(qn);
            p.push(pn);
        }
        let field = ClassicalFieldState { q, p };
        push_observation(model, &mut traj, &set, &field);
        traj.orbitals.sets.push(set);
        traj.field.push(field);
    }
    Ok(traj)
}

/// Self-consistent mean-field run: Strang splitting of orbitals against
/// the classical field with the closure a_eff = a_ext + A.
///
/// One step: orbital half-step with a_eff = a_ext(t + dt/4) + A(t);
/// field full step sourced by the midpoint orbital current plus j_ext;
/// orbital half-step with a_eff = a_ext(t + 3dt/4) + A(t + dt).
pub fn mean_field_run(
    model: &Model,
    set0: &OrbitalSet,
    field0: &ClassicalFieldState,
    drive: &ExternalDrive,
    grid: &TimeGrid,
) -> Result<KsTrajectory> {
    let h_dirac = single_particle_dirac(model);
    let mut traj = KsTrajectory {
        grid: *grid,
        j: Vec::new(),
        a: Vec::new(),
        a_dot: Vec::new(),
        field_energy: Vec::new(),
        lorenz: Vec::new(),
        orbitals: OrbitalTrajectory {
            grid: *grid,
            sets: vec![set0.clone()],
        },
        field: vec![field0.clone()],
    };
    push_observation(model, &mut traj, set0, field0);
    let add = |a: &mut Vec<Vec<f64>>, b: &[Vec<f64>]| {
        for (ra, rb) in a.iter_mut().zip(b) {
            for (va, vb) in ra.iter_mut().zip(rb) {
                *va += *vb;
            }
        }
    };
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let prev_set = traj.orbitals.sets.last().unwrap().clone();
        let prev_field = traj.field.last().unwrap().clone();

        // first orbital half-step
        let mut a1 = drive.a_values(model, t + 0.25 * grid.dt);
        add(&mut a1, &prev_field.a_values(model));
        let h1 = single_particle_hamiltonian(model, &h_dirac, &a1);
        cfl_guard(&h1, grid.dt)?;
        let prop1 = StepPropagator::new(&h1);
        let mid_orbitals: Vec<CVec> = prev_set
            .orbitals
            .iter()
            .map(|o| prop1.apply(o, 0.5 * grid.dt))
            .collect();
        let mid_set = OrbitalSet {
            orbitals: mid_orbitals,
            occupations: prev_set.occupations.clone(),
        };

        // field full step with the midpoint current
        let mut j_eff = current_from_orbitals(model, &mid_set);
        add(&mut j_eff, &drive.j_values(model, grid.mid(k)));
        let forces = mode_forces(model, &j_eff);
        let mut q = Vec::with_capacity(prev_field.q.len());
        let mut p = Vec::with_capacity(prev_field.q.len());
        for (m, mode) in model.modes.iter().enumerate() {
            let (qn, pn) = mode_step(
                prev_field.q[m],
                prev_field.p[m],
                mode.omega,
                forces[m],
                0.0,
                grid.dt,
            );
            q.push(qn);
            p.push(pn);
        }
        let field = ClassicalFieldState { q, p };

        // second orbital half-step with the updated field
        let mut a2 = drive.a_values(model, t + 0.75 * grid.dt);
        add(&mut a2, &field.a_values(model));
        let h2 = single_particle_hamiltonian(model, &h_dirac, &a2);
        let prop2 = StepPropagator::new(&h2);
        let orbitals: Vec<CVec> = mid_set
            .orbitals
            .iter()
            .map(|o| prop2.apply(o, 0.5 * grid.dt))
            .collect();
        let set = OrbitalSet {
            orbitals,
            occupations: prev_set.occupations.clone(),
        };
        let res = set.orthonormality_residual();
        if res > 1e-9 {
            return Err(CoreError::InvalidConfiguration(format!(
                "orthonormality lost at step {}: residual {res:.3e}",
                k + 1
            )));
        }
        push_observation(model, &mut traj, &set, &field);
        traj.orbitals.sets.push(set);
        traj.field.push(field);
    }
    Ok(traj)
}
