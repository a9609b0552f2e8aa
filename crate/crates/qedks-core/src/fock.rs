//! Field operators on the joint fermion (x) photon Fock space.
//!
//! Fermions are mapped to qubits by a Jordan-Wigner transformation whose
//! ordering is fixed by `Model::fermion_index`. The full Fock basis index is
//! `fermion_bits * photon_dim + photon_index`, with photon mode 0 least
//! significant. Field operators carry the lattice normalization
//! psi = f / sqrt(dx), so {psi_a(x), psibar_b(y)} = gamma^0_ab delta_xy / dx.

use crate::error::{CoreError, Result};
use crate::linalg::{
    ceye, commutator, expectation, kron, kron_vec, max_abs, CMat, CVec, I, ONE, ZERO,
};
use crate::model::Model;
use num_complex::Complex64;

/// Physical role tag carried by exported operator matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorRole {
    FieldPsi,
    FieldPsiBar,
    Current,
    Potential,
    PotentialVelocity,
    KineticRate,
    InteractionRate,
    SchwingerTensor,
    LaplacePotential,
    Hamiltonian,
    Charge,
}

impl OperatorRole {
    pub fn tag(&self) -> &'static str {
        match self {
            OperatorRole::FieldPsi => "psi",
            OperatorRole::FieldPsiBar => "psibar",
            OperatorRole::Current => "current",
            OperatorRole::Potential => "potential",
            OperatorRole::PotentialVelocity => "potential-velocity",
            OperatorRole::KineticRate => "kinetic-rate",
            OperatorRole::InteractionRate => "interaction-rate",
            OperatorRole::SchwingerTensor => "schwinger-tensor",
            OperatorRole::LaplacePotential => "laplace-potential",
            OperatorRole::Hamiltonian => "hamiltonian",
            OperatorRole::Charge => "charge",
        }
    }
}

/// A dense operator on the joint Fock space, tagged with its role and
/// physical indices.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub data: CMat,
    pub role: OperatorRole,
    pub mu: Option<usize>,
    pub nu: Option<usize>,
    pub site: Option<usize>,
    pub hermitian: bool,
}

impl OperatorMatrix {
    pub fn new(data: CMat, role: OperatorRole) -> Self {
        let hermitian = crate::linalg::hermiticity_residual(&data) <= 1e-12;
        OperatorMatrix {
            data,
            role,
            mu: None,
            nu: None,
            site: None,
            hermitian,
        }
    }

    pub fn with_indices(mut self, mu: Option<usize>, nu: Option<usize>, site: Option<usize>) -> Self {
        self.mu = mu;
        self.nu = nu;
        self.site = site;
        self
    }
}

/// All operators the rest of the crate needs, built once per model.
pub struct OperatorSet {
    pub model: Model,
    /// Fermion annihilation operators in the fermion sector, per JW index.
    pub f_ferm: Vec<CMat>,
    /// Single-particle lattice Dirac matrix (dimension n_sites * spinor_dim).
    pub h_single: CMat,
    /// Filled-sea vacuum of `h_single` in the fermion sector.
    pub vacuum_fermion: CVec,
    /// Orbitals (columns) filled in the vacuum, ascending eigenvalue order.
    pub vacuum_orbitals: Vec<CVec>,
    /// Sum of negative single-particle eigenvalues (vacuum energy of H_M).
    pub vacuum_energy_m: f64,
    /// Currents j^mu(x), Hermitian, vacuum-symmetric form. [mu][site].
    pub j: Vec<Vec<CMat>>,
    /// Potential operators A_mu(x) (lower index). [mu][site]; zero matrices
    /// for components without quantized modes.
    pub a_pot: Vec<Vec<CMat>>,
    /// Velocity operators Adot_mu(x). Same layout as `a_pot`.
    pub adot_pot: Vec<Vec<CMat>>,
    /// Mode quadratures (a + a^dag)/sqrt(2 w) in the full space.
    pub q_mode: Vec<CMat>,
    /// Mode momenta i sqrt(w/2)(a^dag - a) in the full space.
    pub p_mode: Vec<CMat>,
    /// Mode number operators in the full space.
    pub num_mode: Vec<CMat>,
    /// Projector onto "any mode at occupation n_max" (leakage monitor).
    pub top_level_proj: CMat,
    /// Total charge operator sum_x j^0(x) dx.
    pub charge: CMat,
    photon_dim: usize,
    fermion_dim: usize,
}

fn photon_ladder(n_levels: usize) -> CMat {
    let mut a = CMat::zeros(n_levels, n_levels);
    for n in 1..n_levels {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

impl OperatorSet {
    pub fn build(model: &Model) -> Result<Self> {
        let spec = &model.spec;
        let nf = spec.fermion_modes();
        let fdim = spec.fermion_dim();
        let pdim = spec.photon_dim();
        let dim = fdim * pdim;
        if dim > spec.fock_dim_cap {
            return Err(CoreError::DimensionOverflow {
                dim,
                cap: spec.fock_dim_cap,
            });
        }

        // Jordan-Wigner fermion operators in the fermion sector.
        let mut f_ferm = Vec::with_capacity(nf);
        for q in 0..nf {
            let mut m = CMat::zeros(fdim, fdim);
            let mask = 1usize << q;
            let below = mask - 1;
            for n in 0..fdim {
                if n & mask != 0 {
                    let sign = if (n & below).count_ones() % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    m[(n & !mask, n)] = Complex64::new(sign, 0.0);
                }
            }
            f_ferm.push(m);
        }

        // Single-particle lattice Dirac matrix with the centered difference.
        let dx = model.dx();
        let h_single = single_particle_dirac(model);

        // Filled-sea vacuum: occupy every negative-energy orbital of h_single.
        let eig = nalgebra::SymmetricEigen::new(h_single.clone());
        let mut order: Vec<usize> = (0..nf).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut vacuum_orbitals = Vec::new();
        let mut vacuum_energy_m = 0.0;
        for &k in &order {
            if eig.eigenvalues[k] < 0.0 {
                vacuum_orbitals.push(CVec::from(eig.eigenvectors.column(k).clone_owned()));
                vacuum_energy_m += eig.eigenvalues[k];
            }
        }
        let vacuum_fermion = slater_vector(&f_ferm, &vacuum_orbitals, fdim);

        // Photon sector: per-mode ladder operators embedded in the photon
        // sector (mode 0 least significant), then lifted to the full space.
        let n_levels = spec.n_max + 1;
        let ladder = photon_ladder(n_levels);
        let eye_lv = ceye(n_levels);
        let eye_f = ceye(fdim);
        let mut q_mode = Vec::new();
        let mut p_mode = Vec::new();
        let mut num_mode = Vec::new();
        let photon_embed = |m: usize, op: &CMat| -> CMat {
            let mut out = ceye(1);
            for mm in (0..spec.n_modes).rev() {
                out = kron(&out, if mm == m { op } else { &eye_lv });
            }
            out
        };
        for (m, mode) in model.modes.iter().enumerate() {
            let a = photon_embed(m, &ladder);
            let adag = a.adjoint();
            let w = mode.omega;
            let q = (&a + &adag) / Complex64::new((2.0 * w).sqrt(), 0.0);
            let p = (&adag - &a) * Complex64::new(0.0, (w / 2.0).sqrt());
            let num = &adag * &a;
            q_mode.push(kron(&eye_f, &q));
            p_mode.push(kron(&eye_f, &p));
            num_mode.push(kron(&eye_f, &num));
        }

        // Leakage projector: any mode at its top occupation level.
        let mut keep = ceye(1);
        let mut top_small = CMat::zeros(n_levels, n_levels);
        top_small[(n_levels - 1, n_levels - 1)] = ONE;
        let below = &eye_lv - &top_small;
        for _ in 0..spec.n_modes {
            keep = kron(&keep, &below);
        }
        let eye_p = ceye(pdim.max(1));
        let top_level_proj = if spec.n_modes == 0 {
            CMat::zeros(dim, dim)
        } else {
            kron(&eye_f, &(&eye_p - &keep))
        };

        // Potential and velocity operators per (mu, site).
        let n_mu = model.n_mu();
        let zero_full = CMat::zeros(dim, dim);
        let mut a_pot = vec![vec![zero_full.clone(); spec.n_sites]; n_mu];
        let mut adot_pot = vec![vec![zero_full.clone(); spec.n_sites]; n_mu];
        for (m, mode) in model.modes.iter().enumerate() {
            let mu = mode.polarization;
            for x in 0..spec.n_sites {
                let u = Complex64::new(mode.profile[x], 0.0);
                a_pot[mu][x] += &q_mode[m] * u;
                adot_pot[mu][x] += &p_mode[m] * u;
            }
        }

        // Currents j^mu(x) = psi^dag alpha^mu psi - tr(alpha^mu)/(2 dx),
        // the symmetrized form of the four-current.
        let mut j = Vec::with_capacity(n_mu);
        for mu in 0..n_mu {
            let alpha_mu = model.gamma.alpha(mu);
            let mut per_site = Vec::with_capacity(spec.n_sites);
            let trace: Complex64 = alpha_mu.diagonal().iter().sum();
            for x in 0..spec.n_sites {
                let bil = fermion_bilinear(model, &f_ferm, x, x, &alpha_mu);
                let mut full = kron(&bil, &eye_p) / Complex64::new(dx, 0.0);
                let shift = trace / Complex64::new(2.0 * dx, 0.0);
                for k in 0..dim {
                    full[(k, k)] -= shift;
                }
                per_site.push(full);
            }
            j.push(per_site);
        }

        // Total charge sum_x j^0(x) dx.
        let mut charge = CMat::zeros(dim, dim);
        for x in 0..spec.n_sites {
            charge += &j[0][x] * Complex64::new(dx, 0.0);
        }

        Ok(OperatorSet {
            model: model.clone(),
            f_ferm,
            h_single,
            vacuum_fermion,
            vacuum_orbitals,
            vacuum_energy_m,
            j,
            a_pot,
            adot_pot,
            q_mode,
            p_mode,
            num_mode,
            top_level_proj,
            charge,
            photon_dim: pdim,
            fermion_dim: fdim,
        })
    }

    pub fn dim(&self) -> usize {
        self.fermion_dim * self.photon_dim
    }

    pub fn photon_dim(&self) -> usize {
        self.photon_dim
    }

    pub fn fermion_dim(&self) -> usize {
        self.fermion_dim
    }

    /// Lift a fermion-sector operator to the full space.
    pub fn lift_fermion(&self, op: &CMat) -> CMat {
        kron(op, &ceye(self.photon_dim))
    }

    /// Lift a fermion-sector state to the full space with the photon vacuum.
    pub fn with_photon_vacuum(&self, fermion_state: &CVec) -> CVec {
        let mut ph = CVec::zeros(self.photon_dim);
        ph[0] = ONE;
        kron_vec(fermion_state, &ph)
    }

    /// psi_alpha(x) in the full space.
    pub fn psi(&self, site: usize, alpha: usize) -> CMat {
        let q = self.model.fermion_index(site, alpha);
        self.lift_fermion(&self.f_ferm[q]) / Complex64::new(self.model.dx().sqrt(), 0.0)
    }

    /// psibar_beta(x) = sum_a psi^dag_a(x) gamma^0_{a beta}.
    pub fn psi_bar(&self, site: usize, beta: usize) -> CMat {
        let d = self.model.spec.spinor_dim;
        let g0 = self.model.gamma.beta();
        let mut out = CMat::zeros(self.dim(), self.dim());
        for a in 0..d {
            out += self.psi(site, a).adjoint() * g0[(a, beta)];
        }
        out
    }

    /// The exported current operator with metadata.
    pub fn current_operator(&self, mu: usize, site: usize) -> OperatorMatrix {
        OperatorMatrix::new(self.j[mu][site].clone(), OperatorRole::Current).with_indices(
            Some(mu),
            None,
            Some(site),
        )
    }

    /// Normal-ordered current: psi^dag alpha^mu psi minus its expectation in
    /// the noninteracting vacuum. Equals the symmetrized form when the
    /// vacuum is half-filled with a symmetric spectrum.
    pub fn current_normal_ordered(&self, mu: usize, site: usize) -> CMat {
        let alpha_mu = self.model.gamma.alpha(mu);
        let bil = fermion_bilinear(&self.model, &self.f_ferm, site, site, &alpha_mu);
        let raw = self.lift_fermion(&bil) / Complex64::new(self.model.dx(), 0.0);
        let vac = self.with_photon_vacuum(&self.vacuum_fermion);
        let vev = expectation(&raw, &vac);
        let dim = self.dim();
        let mut out = raw;
        for k in 0..dim {
            out[(k, k)] -= vev;
        }
        out
    }

    /// Rate operators of the current equation of motion. All Hermitian:
    /// d<j^mu(x)>/dt = < r_kin + r_int + sum_nu r_n^{mu nu} a^ext_nu >.
    /// They are the operators q_kin, q_int, n of the equation of motion
    /// divided by i (the raw commutator forms are anti-Hermitian).
    pub fn q_operators(&self) -> QOperators {
        let model = &self.model;
        let spec = &model.spec;
        let n_mu = model.n_mu();
        let n = spec.n_sites;
        let dx = model.dx();
        let alpha1 = model.gamma.alpha(1);
        let g0 = model.gamma.beta().clone();
        let eye_p = ceye(self.photon_dim);
        let dim = self.dim();

        let mut q_kin = Vec::with_capacity(n_mu);
        let mut n_tensor = vec![vec![vec![CMat::zeros(dim, dim); n]; n_mu]; n_mu];
        let mut q_int = Vec::with_capacity(n_mu);
        for mu in 0..n_mu {
            let alpha_mu = model.gamma.alpha(mu);
            // hopping matrices of the point-split centered transcription
            let a_hop = &alpha_mu * &alpha1 * (-I);
            let b_hop = &alpha1 * &alpha_mu * (-I);
            let mass = (&alpha_mu * &g0 - &g0 * &alpha_mu) * Complex64::new(spec.m0, 0.0);
            let mut per_site_kin = Vec::with_capacity(n);
            let mut per_site_int = Vec::with_capacity(n);
            for x in 0..n {
                let xp = model.site_shift(x, 1);
                let xm = model.site_shift(x, -1);
                let mut op = fermion_bilinear(model, &self.f_ferm, x, xp, &a_hop);
                op -= fermion_bilinear(model, &self.f_ferm, x, xm, &a_hop);
                op += fermion_bilinear(model, &self.f_ferm, xp, x, &b_hop);
                op -= fermion_bilinear(model, &self.f_ferm, xm, x, &b_hop);
                op /= Complex64::new(2.0 * dx, 0.0);
                op += fermion_bilinear(model, &self.f_ferm, x, x, &mass);
                // psi fields carry 1/sqrt(dx) each
                let q_kin_x = kron(&op, &eye_p) / Complex64::new(dx, 0.0);

                // n^{mu nu}(x) = (e/dx) f^dag [alpha^mu, alpha^nu] f and
                // q_int^mu = sum_nu n^{mu nu} A_nu.
                let mut q_int_x = CMat::zeros(dim, dim);
                for nu in 0..n_mu {
                    let alpha_nu = model.gamma.alpha(nu);
                    let comm = &alpha_mu * &alpha_nu - &alpha_nu * &alpha_mu;
                    let n_f = fermion_bilinear(model, &self.f_ferm, x, x, &comm);
                    let n_full =
                        kron(&n_f, &eye_p) * Complex64::new(spec.e / dx, 0.0);
                    q_int_x += &n_full * &self.a_pot[nu][x];
                    n_tensor[mu][nu][x] = n_full;
                }
                per_site_kin.push(q_kin_x);
                per_site_int.push(q_int_x);
            }
            q_kin.push(per_site_kin);
            q_int.push(per_site_int);
        }

        // p_mu(x) = d^k d_k A_mu(x) = -Laplacian A_mu(x) on the lattice.
        let mut p_op = Vec::with_capacity(n_mu);
        for mu in 0..n_mu {
            let mut per_site = Vec::with_capacity(n);
            for x in 0..n {
                let xp = model.site_shift(x, 1);
                let xm = model.site_shift(x, -1);
                let lap = (&self.a_pot[mu][xp] + &self.a_pot[mu][xm]
                    - &self.a_pot[mu][x] * Complex64::new(2.0, 0.0))
                    / Complex64::new(dx * dx, 0.0);
                per_site.push(-lap);
            }
            p_op.push(per_site);
        }

        let to_rate = |m: CMat| m * (-I);
        QOperators {
            r_kin: q_kin
                .into_iter()
                .map(|v| v.into_iter().map(&to_rate).collect())
                .collect(),
            r_int: q_int
                .into_iter()
                .map(|v| v.into_iter().map(&to_rate).collect())
                .collect(),
            r_n: n_tensor
                .into_iter()
                .map(|vv| {
                    vv.into_iter()
                        .map(|v| v.into_iter().map(&to_rate).collect())
                        .collect()
                })
                .collect(),
            p_op,
        }
    }

    /// Current leakage of a state into the top photon occupation level.
    pub fn leakage(&self, state: &CVec) -> f64 {
        expectation(&self.top_level_proj, state).re
    }
}

/// The rate-form operators of the current equation of motion plus p_mu.
pub struct QOperators {
    /// r_kin^mu(x) = q_kin^mu(x)/i. [mu][site].
    pub r_kin: Vec<Vec<CMat>>,
    /// r_int^mu(x) = (n^{mu nu} A_nu)/i. [mu][site].
    pub r_int: Vec<Vec<CMat>>,
    /// r_n^{mu nu}(x) = n^{mu nu}(x)/i. [mu][nu][site].
    pub r_n: Vec<Vec<Vec<CMat>>>,
    /// p_mu(x) = -Laplacian A_mu(x). [mu][site].
    pub p_op: Vec<Vec<CMat>>,
}

/// Single-particle lattice Dirac matrix with the centered difference:
/// h = alpha^1 (-i d/dx) + m0 beta on the periodic chain.
pub fn single_particle_dirac(model: &Model) -> CMat {
    let spec = &model.spec;
    let d = spec.spinor_dim;
    let nf = spec.fermion_modes();
    let alpha1 = model.gamma.alpha(1);
    let beta = model.gamma.beta().clone();
    let dx = model.dx();
    let mut h_single = CMat::zeros(nf, nf);
    for x in 0..spec.n_sites {
        let xp = model.site_shift(x, 1);
        let xm = model.site_shift(x, -1);
        for a in 0..d {
            for b in 0..d {
                let hop = -I * alpha1[(a, b)] / Complex64::new(2.0 * dx, 0.0);
                h_single[(model.fermion_index(x, a), model.fermion_index(xp, b))] += hop;
                h_single[(model.fermion_index(x, a), model.fermion_index(xm, b))] -= hop;
                h_single[(model.fermion_index(x, a), model.fermion_index(x, b))] +=
                    Complex64::new(spec.m0, 0.0) * beta[(a, b)];
            }
        }
    }
    h_single
}

/// sum_{a,b} mat[a,b] f^dag_{(site_a,a)} f_{(site_b,b)} in the fermion sector.
pub fn fermion_bilinear(
    model: &Model,
    f_ferm: &[CMat],
    site_a: usize,
    site_b: usize,
    mat: &CMat,
) -> CMat {
    let d = model.spec.spinor_dim;
    let fdim = f_ferm[0].nrows();
    let mut out = CMat::zeros(fdim, fdim);
    for a in 0..d {
        for b in 0..d {
            let c = mat[(a, b)];
            if c == ZERO {
                continue;
            }
            let qa = model.fermion_index(site_a, a);
            let qb = model.fermion_index(site_b, b);
            out += f_ferm[qa].adjoint() * &f_ferm[qb] * c;
        }
    }
    out
}

/// Slater determinant state: apply the creation operators of the given
/// orbitals to the bare Fock vacuum.
pub fn slater_vector(f_ferm: &[CMat], orbitals: &[CVec], fdim: usize) -> CVec {
    let mut state = CVec::zeros(fdim);
    state[0] = ONE;
    for phi in orbitals {
        let mut created = CVec::zeros(fdim);
        for (q, f) in f_ferm.iter().enumerate() {
            if phi[q] != ZERO {
                created += f.adjoint() * &state * phi[q];
            }
        }
        state = created;
    }
    state
}

/// Coherent state of one photon mode on the truncated level space,
/// renormalized after truncation.
pub fn coherent_vector(n_levels: usize, alpha: Complex64) -> CVec {
    let mut v = CVec::zeros(n_levels);
    let mut amp = ONE;
    v[0] = amp;
    for n in 1..n_levels {
        amp *= alpha / Complex64::new((n as f64).sqrt(), 0.0);
        v[n] = amp;
    }
    let norm = v.norm();
    v / Complex64::new(norm, 0.0)
}

/// A weighted ensemble of orthonormal Fock vectors.
#[derive(Debug, Clone)]
pub struct InitialConfiguration {
    pub weights: Vec<f64>,
    pub states: Vec<CVec>,
}

impl InitialConfiguration {
    pub fn pure(state: CVec) -> Self {
        InitialConfiguration {
            weights: vec![1.0],
            states: vec![state],
        }
    }

    pub fn new(weights: Vec<f64>, states: Vec<CVec>) -> Result<Self> {
        if weights.is_empty() || weights.len() != states.len() {
            return Err(CoreError::InvalidConfiguration(
                "weights and states must be non-empty and matched".into(),
            ));
        }
        if weights.iter().any(|&p| p <= 0.0) {
            return Err(CoreError::InvalidConfiguration(
                "all weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(CoreError::InvalidConfiguration(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        for i in 0..states.len() {
            for k in i..states.len() {
                let ip = states[i].dotc(&states[k]);
                let expect = if i == k { 1.0 } else { 0.0 };
                if (ip - Complex64::new(expect, 0.0)).norm() > 1e-12 {
                    return Err(CoreError::InvalidConfiguration(format!(
                        "states {i},{k} not orthonormal: <i|k> = {ip}"
                    )));
                }
            }
        }
        Ok(InitialConfiguration { weights, states })
    }

    /// Ensemble expectation value of a Hermitian operator.
    pub fn expectation(&self, op: &CMat) -> f64 {
        self.weights
            .iter()
            .zip(&self.states)
            .map(|(p, s)| p * expectation(op, s).re)
            .sum()
    }

    pub fn expectation_complex(&self, op: &CMat) -> Complex64 {
        self.weights
            .iter()
            .zip(&self.states)
            .map(|(p, s)| expectation(op, s) * Complex64::new(*p, 0.0))
            .sum()
    }

    /// Noninteracting vacuum: filled Dirac sea (x) photon vacua.
    pub fn vacuum(ops: &OperatorSet) -> Self {
        InitialConfiguration::pure(ops.with_photon_vacuum(&ops.vacuum_fermion))
    }

    /// Slater determinant of the `n_filled` lowest free orbitals combined
    /// with coherent photon modes.
    pub fn coherent_slater(ops: &OperatorSet, n_filled: usize, alphas: &[Complex64]) -> Self {
        let eig = nalgebra::SymmetricEigen::new(ops.h_single.clone());
        let nf = ops.h_single.nrows();
        let mut order: Vec<usize> = (0..nf).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .unwrap()
                .then(i.cmp(&j))
        });
        let orbitals: Vec<CVec> = order
            .iter()
            .take(n_filled)
            .map(|&k| CVec::from(eig.eigenvectors.column(k).clone_owned()))
            .collect();
        let ferm = slater_vector(&ops.f_ferm, &orbitals, ops.fermion_dim());
        let n_levels = ops.model.spec.n_max + 1;
        let mut photon = CVec::from_element(1, ONE);
        for m in (0..ops.model.spec.n_modes).rev() {
            let alpha = alphas.get(m).copied().unwrap_or(ZERO);
            photon = kron_vec(&photon, &coherent_vector(n_levels, alpha));
        }
        InitialConfiguration::pure(kron_vec(&ferm, &photon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{anticommutator, hermiticity_residual};
    use crate::model::{build_model, ModelSpec};

    fn reference_ops() -> OperatorSet {
        let model = build_model(ModelSpec::reference()).unwrap();
        OperatorSet::build(&model).unwrap()
    }

    #[test]
    fn canonical_anticommutation_relations() {
        let ops = reference_ops();
        let nf = ops.f_ferm.len();
        let fdim = ops.fermion_dim();
        for q in 0..nf {
            for qp in 0..nf {
                let ac = anticommutator(&ops.f_ferm[q], &ops.f_ferm[qp].adjoint());
                let expect = if q == qp {
                    ceye(fdim)
                } else {
                    CMat::zeros(fdim, fdim)
                };
                assert!(max_abs(&(ac - expect)) < 1e-15, "{{f_{q}, f^+_{qp}}}");
                let aa = anticommutator(&ops.f_ferm[q], &ops.f_ferm[qp]);
                assert!(max_abs(&aa) < 1e-15, "{{f_{q}, f_{qp}}}");
            }
        }
    }

    #[test]
    fn field_anticommutator_has_lattice_delta() {
        // {psi_a(x), psibar_b(y)} = gamma^0_ab delta_xy / dx
        let mut spec = ModelSpec::reference();
        spec.lattice_spacing = 0.5;
        let model = build_model(spec).unwrap();
        let ops = OperatorSet::build(&model).unwrap();
        let dx = model.dx();
        let g0 = model.gamma.beta().clone();
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let ac = anticommutator(&ops.psi(x, a), &ops.psi_bar(y, b));
                        let expect = if x == y { g0[(a, b)] / dx } else { ZERO };
                        let dev = max_abs(&(ac - ceye(ops.dim()) * expect));
                        assert!(dev < 1e-13, "x{x} y{y} a{a} b{b}: {dev}");
                    }
                }
            }
        }
    }

    #[test]
    fn currents_hermitian_and_symmetrized_equals_normal_ordered() {
        let ops = reference_ops();
        for mu in 0..2 {
            for x in 0..2 {
                assert!(hermiticity_residual(&ops.j[mu][x]) < 1e-14);
                // the filled-sea vacuum of the symmetric lattice spectrum
                // makes both regularizations coincide
                let dev = max_abs(&(&ops.j[mu][x] - ops.current_normal_ordered(mu, x)));
                assert!(dev < 1e-12, "mu {mu} x {x}: {dev}");
            }
        }
    }

    #[test]
    fn vacuum_is_neutral_and_has_sea_energy() {
        let ops = reference_ops();
        let vac = ops.with_photon_vacuum(&ops.vacuum_fermion);
        assert!((vac.norm() - 1.0).abs() < 1e-13);
        let q = expectation(&ops.charge, &vac);
        assert!(q.norm() < 1e-12, "vacuum charge {q}");
        // two negative orbitals, each -sqrt(m0^2) on the 2-site lattice
        assert!((ops.vacuum_energy_m + 2.0).abs() < 1e-12);
    }

    #[test]
    fn charge_spectrum_is_integer_shifted() {
        let ops = reference_ops();
        // eigenvalues of the charge must be n_occupied - n_modes/2
        let eig = nalgebra::SymmetricEigen::new(ops.charge.clone());
        for lam in eig.eigenvalues.iter() {
            let shifted = lam + 2.0; // nf/2 = 2
            assert!((shifted - shifted.round()).abs() < 1e-10, "charge {lam}");
        }
    }

    #[test]
    fn truncated_quadrature_commutator() {
        // [P, Q] = -i (1 - (n_max+1) |top><top|) on the truncated ladder
        let ops = reference_ops();
        let w = ops.model.modes[0].omega;
        let _ = w;
        let comm = &ops.p_mode[0] * &ops.q_mode[0] - &ops.q_mode[0] * &ops.p_mode[0];
        let n_levels = ops.model.spec.n_max + 1;
        let expect = ceye(ops.dim()) * (-I)
            + ops.top_level_proj.clone() * (I * Complex64::new(n_levels as f64 - 1.0 + 1.0, 0.0));
        assert!(max_abs(&(comm - expect)) < 1e-12);
    }

    #[test]
    fn potential_velocity_commutator_matches_metric() {
        // With the full mode set, [Adot_1(x), A_1(y)] = -i delta_xy / dx
        // away from the truncation boundary. Project out top-level states.
        let mut spec = ModelSpec::reference();
        spec.n_modes = 2;
        spec.n_max = 3;
        let model = build_model(spec).unwrap();
        let ops = OperatorSet::build(&model).unwrap();
        let keep = ceye(ops.dim()) - &ops.top_level_proj;
        let dx = model.dx();
        for x in 0..2 {
            for y in 0..2 {
                let comm = &ops.adot_pot[1][x] * &ops.a_pot[1][y]
                    - &ops.a_pot[1][y] * &ops.adot_pot[1][x];
                let expect = if x == y { -I / dx } else { ZERO };
                let dev = &keep * (comm - ceye(ops.dim()) * expect) * &keep;
                assert!(max_abs(&dev) < 1e-12, "x{x} y{y}");
            }
        }
    }

    #[test]
    fn coherent_state_mean_field() {
        let ops = reference_ops();
        let alpha = Complex64::new(0.1, 0.05);
        let cfg = InitialConfiguration::coherent_slater(&ops, 2, &[alpha]);
        let w = ops.model.modes[0].omega;
        let u0 = ops.model.modes[0].profile[0];
        // <A_1(x)> = u(x) <Q> = u(x) * 2 Re(alpha) / sqrt(2 w)
        let expect = u0 * 2.0 * alpha.re / (2.0 * w).sqrt();
        let got = cfg.expectation(&ops.a_pot[1][0]);
        assert!((got - expect).abs() < 1e-8, "got {got} expect {expect}");
    }

    #[test]
    fn coherent_vector_amplitudes() {
        let alpha = Complex64::new(0.3, 0.0);
        let v = coherent_vector(5, alpha);
        // ratios are alpha/sqrt(n) independent of normalization
        for n in 1..5 {
            let ratio = v[n] / v[n - 1];
            let expect = alpha / Complex64::new((n as f64).sqrt(), 0.0);
            assert!((ratio - expect).norm() < 1e-13);
        }
        assert!((v.norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn initial_configuration_validation() {
        let ops = reference_ops();
        let dim = ops.dim();
        let mut s1 = CVec::zeros(dim);
        s1[0] = ONE;
        let mut s2 = CVec::zeros(dim);
        s2[1] = ONE;
        assert!(InitialConfiguration::new(vec![0.5, 0.5], vec![s1.clone(), s2.clone()]).is_ok());
        assert!(InitialConfiguration::new(vec![0.6, 0.6], vec![s1.clone(), s2.clone()]).is_err());
        assert!(InitialConfiguration::new(vec![0.5, 0.5], vec![s1.clone(), s1.clone()]).is_err());
        assert!(InitialConfiguration::new(vec![1.0, -1.0], vec![s1, s2]).is_err());
    }

    #[test]
    fn schwinger_tensor_vanishes_in_two_spinor_dims() {
        // alpha^0 = 1 and alpha^1 commute, so n^{mu nu} == 0 identically
        // in the 1+1D representation.
        let ops = reference_ops();
        let q = ops.q_operators();
        for mu in 0..2 {
            for nu in 0..2 {
                for x in 0..2 {
                    assert_eq!(max_abs(&q.r_n[mu][nu][x]), 0.0);
                }
            }
        }
    }

    #[test]
    fn schwinger_tensor_nonzero_in_four_spinor_dims() {
        let mut spec = ModelSpec::reference();
        spec.n_sites = 1;
        spec.spinor_dim = 4;
        let model = build_model(spec).unwrap();
        let ops = OperatorSet::build(&model).unwrap();
        let q = ops.q_operators();
        // [alpha^1, alpha^2] != 0 in the Dirac representation
        assert!(max_abs(&q.r_n[1][2][0]) > 0.1);
        for mu in 0..4 {
            for nu in 0..4 {
                assert!(hermiticity_residual(&q.r_n[mu][nu][0]) < 1e-13);
            }
        }
    }
}

/// Verify the operator identity of the current equation of motion:
/// [j^mu(x), H]/i == r_kin + r_int + sum_nu r_n^{mu nu} a^ext_nu(x).
/// Returns the worst entrywise deviation over all (mu, site).
pub fn eom_identity_residual(
    ops: &OperatorSet,
    q: &QOperators,
    hamiltonian: &CMat,
    a_ext: &[Vec<f64>],
) -> f64 {
    let mut worst: f64 = 0.0;
    for mu in 0..ops.model.n_mu() {
        for x in 0..ops.model.n_sites() {
            let lhs = commutator(&ops.j[mu][x], hamiltonian) * (-I);
            let mut rhs = q.r_kin[mu][x].clone() + &q.r_int[mu][x];
            for nu in 0..ops.model.n_mu() {
                rhs += &q.r_n[mu][nu][x] * Complex64::new(a_ext[x][nu], 0.0);
            }
            worst = worst.max(max_abs(&(lhs - rhs)));
        }
    }
    worst
}
