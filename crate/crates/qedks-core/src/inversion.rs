//! Construction of the effective external fields (a_eff, j_eff) that make a
//! noninteracting system reproduce a target conjugate pair (j, A).
//!
//! The effective current is the exact entrywise sum j_eff = j + j_ext. The
//! effective potential solves a linear "defining equation" at every instant:
//!
//! * spinor_dim = 4: the first-order current equation. The coefficient of
//!   a_eff is the expectation of the tensor n^{mu nu}(x), which is generally
//!   nonzero.
//! * spinor_dim = 2: alpha^0 = 1 and alpha^1 commute, so n^{mu nu} == 0
//!   identically and the first-order equation carries no potential at all.
//!   The construction then moves one order up: with G^mu(x) = i[H_M, j^mu(x)]
//!   the second time derivative of the current reads
//!     d^2<j^mu(x)>/dt^2 = <F^mu(x)> + sum_{y nu} K(x mu, y nu) a_nu(y)
//!   in the noninteracting system, with F = i[H_M, G] and the kernel
//!   K(x mu, y nu) = i e dx [j^nu(y), G^mu(x)]. On the target side the same
//!   identity holds with the extra drift I = i[H_int, G] and a_ext in place
//!   of a_eff. Matching second derivatives (with a critically damped
//!   tracking term to pin down the lower orders) determines a_eff on the
//!   range of K; null directions are gauge freedom and are anchored to the
//!   mean-field value a_ext + <A>.
//!
//! Both a Taylor recursion at t0 and a time-marching fixed-point solver are
//! provided; they agree at low orders by construction.

use crate::dynamics::{observables, ConjugateTrajectory, StateTrajectory, TimeGrid};
use crate::error::{CoreError, Result};
use crate::fock::{InitialConfiguration, OperatorSet, QOperators};
use crate::hamiltonian::{HamiltonianSet, TimeDependentHamiltonian, TimeFn};
use crate::heisenberg::{density_matrix, expectation_derivative, rho_derivatives};
use crate::linalg::{commutator, lanczos_expv, lstsq_seeded, max_abs, CMat, CVec, RMat, RVec,
    StepPropagator, I};
use crate::model::{ExternalDrive, Term};
use num_complex::Complex64;

fn flat(site: usize, mu: usize, n_mu: usize) -> usize {
    site * n_mu + mu
}

/// Operators of the defining equation, built once per model.
pub struct InversionOperators {
    /// G^mu(x) = i[H_M, j^mu(x)]; the drive-independent current drift in
    /// the 2-spinor representation. [site*n_mu + mu].
    pub g: Vec<CMat>,
    /// F^mu(x) = i[H_M, G^mu(x)].
    pub f_drift: Vec<CMat>,
    /// I^mu(x) = i[H_int, G^mu(x)] (target side only).
    pub i_int: Vec<CMat>,
    /// Second-order kernel K(x mu, y nu) = i e dx [j^nu(y), G^mu(x)].
    /// Indexed [row][col] with the flat (site, mu) index.
    pub k2: Vec<Vec<CMat>>,
    /// Rate operators of the first-order equation (4-spinor path).
    pub q: QOperators,
    /// H_M + H_E: the static part of the noninteracting system.
    pub h0_prime: CMat,
    /// H_M + H_E + H_int: the static part of the interacting system.
    pub h0_full: CMat,
    pub n_rows: usize,
    /// Rows whose G operator is not identically zero.
    pub row_active: Vec<bool>,
}

impl InversionOperators {
    pub fn build(ops: &OperatorSet, hs: &HamiltonianSet) -> Self {
        let model = &ops.model;
        let n = model.n_sites();
        let n_mu = model.n_mu();
        let n_rows = n * n_mu;
        let e_dx = Complex64::new(model.spec.e * model.dx(), 0.0);
        let mut g = Vec::with_capacity(n_rows);
        for x in 0..n {
            for mu in 0..n_mu {
                g.push(commutator(&hs.h_m, &ops.j[mu][x]) * I);
            }
        }
        let f_drift: Vec<CMat> = g.iter().map(|gi| commutator(&hs.h_m, gi) * I).collect();
        let i_int: Vec<CMat> = g.iter().map(|gi| commutator(&hs.h_int, gi) * I).collect();
        let mut k2 = Vec::with_capacity(n_rows);
        for r in 0..n_rows {
            let mut row = Vec::with_capacity(n_rows);
            for y in 0..n {
                for nu in 0..n_mu {
                    row.push(commutator(&ops.j[nu][y], &g[r]) * (I * e_dx));
                }
            }
            k2.push(row);
        }
        let row_active = g.iter().map(|gi| max_abs(gi) > 1e-12).collect();
        InversionOperators {
            g,
            f_drift,
            i_int,
            k2,
            q: ops.q_operators(),
            h0_prime: &hs.h_m + &hs.h_e,
            h0_full: hs.static_total(),
            n_rows,
            row_active,
        }
    }

    /// 2 for the second-order path (2-spinor), 1 for the first-order path.
    pub fn order(&self, ops: &OperatorSet) -> usize {
        if ops.model.spec.spinor_dim == 2 {
            2
        } else {
            1
        }
    }
}

fn ensemble_exp(weights: &[f64], states: &[CVec], op: &CMat) -> f64 {
    let mut acc = 0.0;
    for (p, s) in weights.iter().zip(states) {
        acc += p * s.dotc(&(op * s)).re;
    }
    acc
}

fn drive_flat(drive: &ExternalDrive, ops: &OperatorSet, t: f64, which_a: bool) -> RVec {
    let model = &ops.model;
    let vals = if which_a {
        drive.a_values(model, t)
    } else {
        drive.j_values(model, t)
    };
    let n_mu = model.n_mu();
    let mut v = RVec::zeros(model.n_sites() * n_mu);
    for x in 0..model.n_sites() {
        for mu in 0..n_mu {
            v[flat(x, mu, n_mu)] = vals[x][mu];
        }
    }
    v
}

/// Everything the inversion needs from the target run, stored so the
/// marching solver never re-propagates the interacting system.
pub struct TargetRecord {
    pub grid: TimeGrid,
    pub drive: ExternalDrive,
    pub conj: ConjugateTrajectory,
    /// Flattened <j> at the step midpoints.
    pub j_mid: Vec<RVec>,
    /// Flattened d<j>/dt at the step midpoints.
    pub djdt_mid: Vec<RVec>,
    /// Flattened d^2<j>/dt^2 at the step midpoints (second-order path).
    pub s_mid: Vec<RVec>,
    pub order: usize,
}

/// Record the target data of a forward run. `interacting` states whether
/// the run was propagated with H_int (the drift terms differ).
pub fn record_target(
    ops: &OperatorSet,
    iops: &InversionOperators,
    traj: &StateTrajectory,
    drive: &ExternalDrive,
    interacting: bool,
) -> Result<TargetRecord> {
    let conj = observables(ops, traj)?;
    let n_rows = iops.n_rows;
    let model = &ops.model;
    let n_mu = model.n_mu();
    let order = iops.order(ops);
    let mut j_mid = Vec::with_capacity(traj.mid_states.len());
    let mut djdt_mid = Vec::with_capacity(traj.mid_states.len());
    let mut s_mid = Vec::with_capacity(traj.mid_states.len());
    for k in 0..traj.mid_states.len() {
        let states = &traj.mid_states[k];
        let w = &traj.weights;
        let t = traj.grid.mid(k);
        let a_ext = drive_flat(drive, ops, t, true);
        let mut jv = RVec::zeros(n_rows);
        let mut dv = RVec::zeros(n_rows);
        let mut sv = RVec::zeros(n_rows);
        for x in 0..model.n_sites() {
            for mu in 0..n_mu {
                let r = flat(x, mu, n_mu);
                jv[r] = ensemble_exp(w, states, &ops.j[mu][x]);
                if order == 2 {
                    dv[r] = ensemble_exp(w, states, &iops.g[r]);
                    let mut s = ensemble_exp(w, states, &iops.f_drift[r]);
                    if interacting {
                        s += ensemble_exp(w, states, &iops.i_int[r]);
                    }
                    for c in 0..n_rows {
                        if a_ext[c] != 0.0 {
                            s += a_ext[c] * ensemble_exp(w, states, &iops.k2[r][c]);
                        }
                    }
                    sv[r] = s;
                } else {
                    let mut d = ensemble_exp(w, states, &iops.q.r_kin[mu][x]);
                    if interacting {
                        d += ensemble_exp(w, states, &iops.q.r_int[mu][x]);
                    }
                    for nu in 0..n_mu {
                        let c = flat(x, nu, n_mu);
                        if a_ext[c] != 0.0 {
                            d += a_ext[c] * ensemble_exp(w, states, &iops.q.r_n[mu][nu][x]);
                        }
                    }
                    dv[r] = d;
                }
            }
        }
        j_mid.push(jv);
        djdt_mid.push(dv);
        s_mid.push(sv);
    }
    Ok(TargetRecord {
        grid: traj.grid,
        drive: drive.clone(),
        conj,
        j_mid,
        djdt_mid,
        s_mid,
        order,
    })
}

/// Mismatch norms of a candidate initial configuration against the target
/// constraints (j, A, Adot at t0).
#[derive(Debug, Clone)]
pub struct MatchReport {
    pub dj: f64,
    pub da: f64,
    pub da_dot: f64,
    pub tol: f64,
}

impl MatchReport {
    pub fn passed(&self) -> bool {
        self.dj <= self.tol && self.da <= self.tol && self.da_dot <= self.tol
    }

    pub fn ensure(&self) -> Result<()> {
        let checks: [(&'static str, f64); 3] =
            [("j", self.dj), ("A", self.da), ("Adot", self.da_dot)];
        for (component, norm) in checks {
            if norm > self.tol {
                return Err(CoreError::InitialMismatch {
                    component,
                    norm,
                    tol: self.tol,
                });
            }
        }
        Ok(())
    }
}

pub fn match_initial_configuration(
    ops: &OperatorSet,
    record: &TargetRecord,
    candidate: &InitialConfiguration,
    tol: f64,
) -> MatchReport {
    let model = &ops.model;
    let mut dj: f64 = 0.0;
    let mut da: f64 = 0.0;
    let mut da_dot: f64 = 0.0;
    for x in 0..model.n_sites() {
        for mu in 0..model.n_mu() {
            dj = dj.max((candidate.expectation(&ops.j[mu][x]) - record.conj.j[0][x][mu]).abs());
            da = da.max((candidate.expectation(&ops.a_pot[mu][x]) - record.conj.a[0][x][mu]).abs());
            da_dot = da_dot.max(
                (candidate.expectation(&ops.adot_pot[mu][x]) - record.conj.a_dot[0][x][mu]).abs(),
            );
        }
    }
    MatchReport {
        dj,
        da,
        da_dot,
        tol,
    }
}

/// j_eff = j + j_ext, evaluated entrywise on the grid points of the target.
pub fn jeff_construct(
    ops: &OperatorSet,
    record: &TargetRecord,
    drive: &ExternalDrive,
) -> Vec<Vec<Vec<f64>>> {
    let model = &ops.model;
    let mut out = Vec::with_capacity(record.conj.j.len());
    for (k, jk) in record.conj.j.iter().enumerate() {
        let t = record.grid.time(k);
        let j_ext = drive.j_values(model, t);
        let mut slab = vec![vec![0.0; model.n_mu()]; model.n_sites()];
        for x in 0..model.n_sites() {
            for mu in 0..model.n_mu() {
                slab[x][mu] = jk[x][mu] + j_ext[x][mu];
            }
        }
        out.push(slab);
    }
    out
}

/// j_eff at the step midpoints, flattened, for driving the auxiliary run.
pub fn jeff_mid(ops: &OperatorSet, record: &TargetRecord, drive: &ExternalDrive) -> Vec<RVec> {
    (0..record.j_mid.len())
        .map(|k| {
            let t = record.grid.mid(k);
            &record.j_mid[k] + drive_flat(drive, ops, t, false)
        })
        .collect()
}

/// Solver knobs of the fixed-point inversion.
#[derive(Debug, Clone)]
pub struct InvertOptions {
    /// Corrector convergence threshold on max |delta a_eff|.
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Corrector mixing parameter.
    pub theta: f64,
    /// Tracking time constant in units of dt (critically damped feedback).
    pub tau_steps: f64,
    /// Kernel row magnitude below which a site counts as singular.
    pub n_floor: f64,
    /// Relative singular value floor of the least-squares solve.
    pub rel_floor: f64,
    /// Initial-matching tolerance.
    pub tol_init: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            tol_fp: 1e-10,
            max_iter: 200,
            theta: 0.7,
            tau_steps: 20.0,
            n_floor: 1e-8,
            rel_floor: 1e-10,
            tol_init: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaugeMeta {
    /// Human-readable statement of the zero-component rule.
    pub a0_rule: String,
    /// Smallest numerical kernel rank seen during the run.
    pub rank_min: usize,
    /// Smallest retained singular value seen during the run.
    pub smin_min: f64,
}

/// Result of the inversion: effective fields plus convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct EffectiveFields {
    pub grid: TimeGrid,
    /// a_eff at the step midpoints. [k][site][mu].
    pub a_mid: Vec<Vec<Vec<f64>>>,
    /// j_eff at the step midpoints. [k][site][mu].
    pub j_eff_mid: Vec<Vec<Vec<f64>>>,
    /// j_eff on the grid points (the exact sum j + j_ext).
    pub j_eff: Vec<Vec<Vec<f64>>>,
    pub gauge_meta: GaugeMeta,
    /// Per-step (iterations, final corrector residual).
    pub convergence: Vec<(usize, f64)>,
}

fn unflatten(v: &RVec, n_sites: usize, n_mu: usize) -> Vec<Vec<f64>> {
    (0..n_sites)
        .map(|x| (0..n_mu).map(|mu| v[flat(x, mu, n_mu)]).collect())
        .collect()
}

/// Noninteracting Hamiltonian for one step: H_M + H_E plus the effective
/// couplings held constant at their midpoint values.
fn h_prime_step(
    ops: &OperatorSet,
    iops: &InversionOperators,
    a_flat: &RVec,
    j_eff_flat: &RVec,
) -> CMat {
    let model = &ops.model;
    let n_mu = model.n_mu();
    let e_dx = model.spec.e * model.dx();
    let mut h = iops.h0_prime.clone();
    for x in 0..model.n_sites() {
        for mu in 0..n_mu {
            let r = flat(x, mu, n_mu);
            if a_flat[r] != 0.0 {
                h += &ops.j[mu][x] * Complex64::new(e_dx * a_flat[r], 0.0);
            }
            if j_eff_flat[r] != 0.0 {
                h += &ops.a_pot[mu][x] * Complex64::new(e_dx * j_eff_flat[r], 0.0);
            }
        }
    }
    h
}

/// Assemble the defining linear system K a = rhs at one midpoint of the
/// auxiliary run, together with the mean-field gauge seed.
#[allow(clippy::too_many_arguments)]
fn assemble_system(
    ops: &OperatorSet,
    iops: &InversionOperators,
    record: &TargetRecord,
    weights: &[f64],
    mids: &[CVec],
    k_step: usize,
    jprime_mid: &RVec,
    opts: &InvertOptions,
) -> Result<(RMat, RVec, RVec)> {
    let model = &ops.model;
    let n_mu = model.n_mu();
    let n_rows = iops.n_rows;
    let t = record.grid.mid(k_step);
    let tau = opts.tau_steps * record.grid.dt;
    let mut kmat = RMat::zeros(n_rows, n_rows);
    let mut rhs = RVec::zeros(n_rows);

    if record.order == 2 {
        for r in 0..n_rows {
            if !iops.row_active[r] {
                continue;
            }
            for c in 0..n_rows {
                kmat[(r, c)] = ensemble_exp(weights, mids, &iops.k2[r][c]);
            }
            let gp = ensemble_exp(weights, mids, &iops.g[r]);
            rhs[r] = record.s_mid[k_step][r] - ensemble_exp(weights, mids, &iops.f_drift[r])
                + (2.0 / tau) * (record.djdt_mid[k_step][r] - gp)
                + (record.j_mid[k_step][r] - jprime_mid[r]) / (tau * tau);
        }
    } else {
        for x in 0..model.n_sites() {
            for mu in 0..n_mu {
                let r = flat(x, mu, n_mu);
                for nu in 0..n_mu {
                    kmat[(r, flat(x, nu, n_mu))] =
                        ensemble_exp(weights, mids, &iops.q.r_n[mu][nu][x]);
                }
                rhs[r] = record.djdt_mid[k_step][r]
                    - ensemble_exp(weights, mids, &iops.q.r_kin[mu][x])
                    + (record.j_mid[k_step][r] - jprime_mid[r]) / tau;
            }
        }
    }

    // singular-kernel guard on rows that carry an equation
    for r in 0..n_rows {
        let has_equation = if record.order == 2 {
            iops.row_active[r]
        } else {
            true
        };
        if has_equation {
            let row_norm: f64 = (0..n_rows).map(|c| kmat[(r, c)].abs()).sum();
            // mu = 0 rows of the first-order path never couple (alpha^0 = 1)
            let is_gauge_row = record.order == 1 && r % n_mu == 0;
            if row_norm < opts.n_floor && !is_gauge_row && record.order == 2 {
                return Err(CoreError::SingularKernel {
                    site: r / n_mu,
                    magnitude: row_norm,
                    floor: opts.n_floor,
                });
            }
        }
    }

    // mean-field gauge seed: a_ext + <A> on the auxiliary state
    let mut seed = drive_flat(&record.drive, ops, t, true);
    for x in 0..model.n_sites() {
        for mu in 0..n_mu {
            seed[flat(x, mu, n_mu)] += ensemble_exp(weights, mids, &ops.a_pot[mu][x]);
        }
    }
    Ok((kmat, rhs, seed))
}

/// Time-marching fixed-point inversion. `j_eff_mid_flat` is the effective
/// current driving the auxiliary photon sector (the sum j + j_ext for an
/// interacting target, the bare j_ext for a noninteracting one).
pub fn fixed_point_invert(
    ops: &OperatorSet,
    iops: &InversionOperators,
    record: &TargetRecord,
    config0: &InitialConfiguration,
    j_eff_mid_flat: &[RVec],
    opts: &InvertOptions,
) -> Result<(EffectiveFields, ConjugateTrajectory)> {
    match_initial_configuration(ops, record, config0, opts.tol_init).ensure()?;
    let model = &ops.model;
    let n_mu = model.n_mu();
    let n_rows = iops.n_rows;
    let grid = record.grid;
    let dt = grid.dt;
    let dim = ops.dim();
    let krylov = 30.min(dim);

    let mut states = vec![config0.states.clone()];
    let mut mid_states: Vec<Vec<CVec>> = Vec::with_capacity(grid.n_steps);
    let mut leakage = vec![config0
        .weights
        .iter()
        .zip(&config0.states)
        .map(|(p, s)| p * ops.leakage(s))
        .sum::<f64>()];
    let mut a_mid = Vec::with_capacity(grid.n_steps);
    let mut convergence = Vec::with_capacity(grid.n_steps);
    let mut rank_min = usize::MAX;
    let mut smin_min = f64::INFINITY;
    let mut a = RVec::zeros(n_rows);
    let mut have_previous = false;

    for k in 0..grid.n_steps {
        let members = states.last().unwrap().clone();
        let jeff_k = &j_eff_mid_flat[k];
        if !have_previous {
            // mean-field order-0 predictor
            let mut seed = drive_flat(&record.drive, ops, grid.mid(0), true);
            for x in 0..model.n_sites() {
                for mu in 0..n_mu {
                    seed[flat(x, mu, n_mu)] += config0.expectation(&ops.a_pot[mu][x]);
                }
            }
            a = seed;
            have_previous = true;
        }
        let mut theta = opts.theta;
        let mut iters = 0;
        let mut resid = f64::INFINITY;
        let mut prev_resid = f64::INFINITY;
        let mut mids: Vec<CVec> = Vec::new();
        let mut h = CMat::zeros(dim, dim);
        while iters < opts.max_iter {
            iters += 1;
            h = h_prime_step(ops, iops, &a, jeff_k);
            mids = members
                .iter()
                .map(|s| lanczos_expv(&h, s, dt / 2.0, krylov, 1e-14))
                .collect();
            let mut jprime = RVec::zeros(n_rows);
            for x in 0..model.n_sites() {
                for mu in 0..n_mu {
                    jprime[flat(x, mu, n_mu)] =
                        ensemble_exp(&config0.weights, &mids, &ops.j[mu][x]);
                }
            }
            let (kmat, rhs, seed) =
                assemble_system(ops, iops, record, &config0.weights, &mids, k, &jprime, opts)?;
            let (a_new, rank, smin) = lstsq_seeded(&kmat, &rhs, &seed, opts.rel_floor);
            rank_min = rank_min.min(rank);
            if rank > 0 {
                smin_min = smin_min.min(smin);
            }
            resid = (&a_new - &a).amax();
            if resid <= opts.tol_fp {
                a = a_new;
                break;
            }
            if resid > prev_resid * 1.2 {
                // oscillation: halve the mixing
                theta *= 0.5;
                if theta < opts.theta / 32.0 {
                    return Err(CoreError::FixedPointDiverged {
                        t: grid.mid(k),
                        residual: resid,
                        iters,
                    });
                }
            }
            prev_resid = resid;
            a = &a + (&a_new - &a) * theta;
        }
        if resid > opts.tol_fp {
            return Err(CoreError::FixedPointDiverged {
                t: grid.mid(k),
                residual: resid,
                iters,
            });
        }
        // full step with the converged Hamiltonian (exact exponential)
        let prop = StepPropagator::new(&h);
        let next: Vec<CVec> = members.iter().map(|s| prop.apply(s, dt)).collect();
        for s in &next {
            let drift = (s.norm() - 1.0).abs();
            if drift > 1e-10 {
                return Err(CoreError::UnitarityViolated { step: k + 1, drift });
            }
        }
        let leak: f64 = config0
            .weights
            .iter()
            .zip(&next)
            .map(|(p, s)| p * ops.leakage(s))
            .sum();
        if leak > model.spec.leak_max {
            return Err(CoreError::LeakageExceeded {
                leak,
                leak_max: model.spec.leak_max,
                step: k + 1,
            });
        }
        leakage.push(leak);
        a_mid.push(unflatten(&a, model.n_sites(), n_mu));
        convergence.push((iters, resid));
        mid_states.push(mids);
        states.push(next);
    }

    let traj = StateTrajectory {
        grid,
        weights: config0.weights.clone(),
        states,
        mid_states,
        leakage,
    };
    let conj = observables(ops, &traj)?;
    let j_eff_mid: Vec<Vec<Vec<f64>>> = j_eff_mid_flat
        .iter()
        .map(|v| unflatten(v, model.n_sites(), n_mu))
        .collect();
    let j_eff = jeff_construct(ops, record, &record.drive);
    let eff = EffectiveFields {
        grid,
        a_mid,
        j_eff_mid,
        j_eff,
        gauge_meta: GaugeMeta {
            a0_rule: "a_eff anchored at a_ext + <A> on kernel null directions (mean-field gauge)"
                .to_string(),
            rank_min: if rank_min == usize::MAX { 0 } else { rank_min },
            smin_min: if smin_min.is_finite() { smin_min } else { 0.0 },
        },
        convergence,
    };
    Ok((eff, conj))
}

/// Re-propagate a noninteracting configuration under stored effective
/// fields and return its conjugate trajectory.
pub fn reproduce(
    ops: &OperatorSet,
    iops: &InversionOperators,
    eff: &EffectiveFields,
    config0: &InitialConfiguration,
) -> Result<ConjugateTrajectory> {
    let model = &ops.model;
    let n_mu = model.n_mu();
    let grid = eff.grid;
    let traj = crate::dynamics::propagate_with(ops, config0, &grid, |k| {
        let mut a = RVec::zeros(iops.n_rows);
        let mut j = RVec::zeros(iops.n_rows);
        for x in 0..model.n_sites() {
            for mu in 0..n_mu {
                a[flat(x, mu, n_mu)] = eff.a_mid[k][x][mu];
                j[flat(x, mu, n_mu)] = eff.j_eff_mid[k][x][mu];
            }
        }
        h_prime_step(ops, iops, &a, &j)
    })?;
    observables(ops, &traj)
}

/// Order-0 effective potential at t0 from the defining equation, anchored
/// at the mean-field gauge seed.
pub fn aeff_order0(
    ops: &OperatorSet,
    iops: &InversionOperators,
    rho0: &InitialConfiguration,
    rho0p: &InitialConfiguration,
    drive: &ExternalDrive,
    t0: f64,
    opts: &InvertOptions,
) -> Result<Vec<Vec<f64>>> {
    let model = &ops.model;
    let n_mu = model.n_mu();
    let n_rows = iops.n_rows;
    let a_ext = drive_flat(drive, ops, t0, true);
    let order = iops.order(ops);
    let mut kmat = RMat::zeros(n_rows, n_rows);
    let mut rhs = RVec::zeros(n_rows);
    let wp = &rho0p.weights;
    let sp = &rho0p.states;
    let w = &rho0.weights;
    let s = &rho0.states;

    if order == 2 {
        for r in 0..n_rows {
            if !iops.row_active[r] {
                continue;
            }
            // target second derivative at t0
            let mut s_tgt = ensemble_exp(w, s, &iops.f_drift[r]) + ensemble_exp(w, s, &iops.i_int[r]);
            for c in 0..n_rows {
                if a_ext[c] != 0.0 {
                    s_tgt += a_ext[c] * ensemble_exp(w, s, &iops.k2[r][c]);
                }
            }
            for c in 0..n_rows {
                kmat[(r, c)] = ensemble_exp(wp, sp, &iops.k2[r][c]);
            }
            rhs[r] = s_tgt - ensemble_exp(wp, sp, &iops.f_drift[r]);
        }
    } else {
        for x in 0..model.n_sites() {
            for mu in 0..n_mu {
                let r = flat(x, mu, n_mu);
                let mut d_tgt = ensemble_exp(w, s, &iops.q.r_kin[mu][x])
                    + ensemble_exp(w, s, &iops.q.r_int[mu][x]);
                for nu in 0..n_mu {
                    let c = flat(x, nu, n_mu);
                    if a_ext[c] != 0.0 {
                        d_tgt += a_ext[c] * ensemble_exp(w, s, &iops.q.r_n[mu][nu][x]);
                    }
                    kmat[(r, flat(x, nu, n_mu))] = ensemble_exp(wp, sp, &iops.q.r_n[mu][nu][x]);
                }
                rhs[r] = d_tgt - ensemble_exp(wp, sp, &iops.q.r_kin[mu][x]);
            }
        }
    }

    let mut seed = a_ext;
    for x in 0..model.n_sites() {
        for mu in 0..n_mu {
            seed[flat(x, mu, n_mu)] += rho0p.expectation(&ops.a_pot[mu][x]);
        }
    }
    let (a, _, _) = lstsq_seeded(&kmat, &rhs, &seed, opts.rel_floor);
    Ok(unflatten(&a, model.n_sites(), n_mu))
}

/// Taylor coefficients (derivative values) of the effective fields at t0.
#[derive(Debug, Clone)]
pub struct TaylorTable {
    /// a_eff^(l)(t0). [l][site][mu].
    pub a: Vec<Vec<Vec<f64>>>,
    /// j_eff^(l)(t0) = j^(l) + j_ext^(l). [l][site][mu].
    pub j_eff: Vec<Vec<Vec<f64>>>,
    /// Set when coefficient magnitudes outgrow an l! * c^l trend.
    pub growth_warning: bool,
}

/// Order-by-order Taylor construction at t0 = drive.t0. The order-l
/// coefficient of a_eff is solved from the matched derivative of order
/// l + 2 (2-spinor path) or l + 1 (4-spinor path); the dependence is
/// triangular, so each order needs only the previous ones.
pub fn taylor_construct(
    ops: &OperatorSet,
    hs: &HamiltonianSet,
    rho0: &InitialConfiguration,
    rho0p: &InitialConfiguration,
    drive: &ExternalDrive,
    l_max: usize,
    opts: &InvertOptions,
) -> Result<TaylorTable> {
    let model = &ops.model;
    let n_mu = model.n_mu();
    let n = model.n_sites();
    let n_rows = n * n_mu;
    let t0 = drive.t0;
    let offset = if model.spec.spinor_dim == 2 { 2 } else { 1 };
    let e_dx = model.spec.e * model.dx();
    let depth = l_max + offset;

    // Target current derivatives from the interacting dynamics.
    let ham_tgt = TimeDependentHamiltonian::with_drive(ops, hs, drive);
    let rho_t = rho_derivatives(&ham_tgt, &density_matrix(rho0), t0, depth);
    let mut t_tab = vec![RVec::zeros(n_rows); depth + 1];
    for l in 0..=depth {
        for x in 0..n {
            for mu in 0..n_mu {
                t_tab[l][flat(x, mu, n_mu)] =
                    expectation_derivative(&rho_t, &ops.j[mu][x], l);
            }
        }
    }

    // j_eff coefficients: exact sums of target and external derivatives.
    let mut j_eff = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let j_ext = drive.j_deriv(model, t0, l as u32);
        let mut slab = vec![vec![0.0; n_mu]; n];
        for x in 0..n {
            for mu in 0..n_mu {
                slab[x][mu] = t_tab[l][flat(x, mu, n_mu)] + j_ext[x][mu];
            }
        }
        j_eff.push(slab);
    }

    // Auxiliary Hamiltonian with polynomial effective drives built from the
    // coefficients found so far. The photon source carries the target's
    // current Taylor series plus the external current series.
    let rho0p_mat = density_matrix(rho0p);
    let h0_prime = &hs.h_m + &hs.h_e;
    let build = |acoeffs: &[RVec]| -> TimeDependentHamiltonian {
        let mut couplings = Vec::new();
        for x in 0..n {
            for mu in 0..n_mu {
                let r = flat(x, mu, n_mu);
                let mut terms = Vec::new();
                let mut fact = 1.0;
                for (ll, coef) in acoeffs.iter().enumerate() {
                    if ll > 0 {
                        fact *= ll as f64;
                    }
                    if coef[r] != 0.0 {
                        terms.push(Term::Poly {
                            c: coef[r] / fact,
                            power: ll as u32,
                        });
                    }
                }
                if !terms.is_empty() {
                    couplings.push((
                        &ops.j[mu][x] * Complex64::new(e_dx, 0.0),
                        TimeFn::Series { terms, t0 },
                    ));
                }
                // photon source: Taylor of the target current ...
                let mut src_terms = Vec::new();
                let mut fact2 = 1.0;
                for (ll, tl) in t_tab.iter().enumerate() {
                    if ll > 0 {
                        fact2 *= ll as f64;
                    }
                    if tl[r] != 0.0 {
                        src_terms.push(Term::Poly {
                            c: tl[r] / fact2,
                            power: ll as u32,
                        });
                    }
                }
                // ... plus the external current series verbatim
                for entry in &drive.j_ext {
                    if entry.site == x && entry.mu == mu {
                        src_terms.extend(entry.terms.iter().cloned());
                    }
                }
                if !src_terms.is_empty() {
                    couplings.push((
                        &ops.a_pot[mu][x] * Complex64::new(e_dx, 0.0),
                        TimeFn::Series {
                            terms: src_terms,
                            t0,
                        },
                    ));
                }
            }
        }
        TimeDependentHamiltonian {
            h0: h0_prime.clone(),
            couplings,
        }
    };

    let deriv_vector = |ham: &TimeDependentHamiltonian, l: usize| -> (RVec, Vec<CMat>) {
        let rho = rho_derivatives(ham, &rho0p_mat, t0, l);
        let mut v = RVec::zeros(n_rows);
        for x in 0..n {
            for mu in 0..n_mu {
                v[flat(x, mu, n_mu)] = expectation_derivative(&rho, &ops.j[mu][x], l);
            }
        }
        (v, rho)
    };

    let mut acoeffs: Vec<RVec> = Vec::with_capacity(l_max + 1);
    let mut growth_warning = false;
    for l in 0..=l_max {
        let mut work = acoeffs.clone();
        work.push(RVec::zeros(n_rows));
        let ham_base = build(&work);
        let (phi_base, rho_base) = deriv_vector(&ham_base, l + offset);
        // mean-field gauge seed at order l
        let a_ext_l = drive.a_deriv(model, t0, l as u32);
        let mut seed = RVec::zeros(n_rows);
        for x in 0..n {
            for mu in 0..n_mu {
                seed[flat(x, mu, n_mu)] = a_ext_l[x][mu]
                    + expectation_derivative(&rho_base, &ops.a_pot[mu][x], l);
            }
        }
        // linear probing: the map from a^(l) to the matched derivative is
        // affine, so unit probes recover the exact kernel columns
        let mut kmat = RMat::zeros(n_rows, n_rows);
        for c in 0..n_rows {
            work[l][c] = 1.0;
            let ham_probe = build(&work);
            let (phi_c, _) = deriv_vector(&ham_probe, l + offset);
            work[l][c] = 0.0;
            for r in 0..n_rows {
                kmat[(r, c)] = phi_c[r] - phi_base[r];
            }
        }
        let rhs = &t_tab[l + offset] - phi_base;
        let (sol, _, _) = lstsq_seeded(&kmat, &rhs, &seed, opts.rel_floor);
        // factorial blow-up check on the scaled coefficients a^(l)/l!
        let mut fact = 1.0;
        for m in 1..=l {
            fact *= m as f64;
        }
        let prior_scale = acoeffs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let mut mf = 1.0;
                for i in 1..=m {
                    mf *= i as f64;
                }
                c.amax() / mf
            })
            .fold(1.0, f64::max);
        if sol.amax() / fact > 1e6 * prior_scale {
            growth_warning = true;
        }
        acoeffs.push(sol);
    }

    Ok(TaylorTable {
        a: acoeffs.iter().map(|v| unflatten(v, n, n_mu)).collect(),
        j_eff,
        growth_warning,
    })
}
