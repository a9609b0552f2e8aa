//! Assembly of the Hamiltonian: matter, photon field, interaction and the
//! time-dependent external part.
//!
//! H = H_M + H_E + H_int + H_ext(t) with
//!   H_M   = sum_{qq'} h_single f^dag f   (Dirac-sea energy subtracted)
//!   H_E   = sum_m w_m a^dag_m a_m        (+ 1/2 optionally)
//!   H_int = e dx sum_x j^mu(x) A_mu(x)
//!   H_ext = e dx sum_x [ j^mu(x) a^ext_mu(x,t) + j^mu_ext(x,t) A_mu(x) ]

use crate::error::Result;
use crate::fock::OperatorSet;
use crate::linalg::{ceye, CMat, CVec};
use crate::model::{ExternalDrive, Term};
use num_complex::Complex64;

/// Scalar coefficient function of one coupling operator.
#[derive(Debug, Clone)]
pub enum TimeFn {
    Const(f64),
    /// Analytic series in (t - t0).
    Series { terms: Vec<Term>, t0: f64 },
}

impl TimeFn {
    pub fn eval(&self, t: f64) -> f64 {
        self.deriv(t, 0)
    }

    /// l-th time derivative at t.
    pub fn deriv(&self, t: f64, l: u32) -> f64 {
        match self {
            TimeFn::Const(c) => {
                if l == 0 {
                    *c
                } else {
                    0.0
                }
            }
            TimeFn::Series { terms, t0 } => terms.iter().map(|term| term.deriv(t - t0, l)).sum(),
        }
    }
}

/// The static parts of the Hamiltonian.
pub struct HamiltonianSet {
    pub h_m: CMat,
    pub h_e: CMat,
    pub h_int: CMat,
}

impl HamiltonianSet {
    pub fn build(ops: &OperatorSet) -> Result<Self> {
        let model = &ops.model;
        let spec = &model.spec;
        let dim = ops.dim();
        let dx = model.dx();

        // H_M from the single-particle matrix, with the filled-sea energy
        // subtracted so the vacuum sits at zero.
        let nf = spec.fermion_modes();
        let fdim = spec.fermion_dim();
        let mut h_m_ferm = CMat::zeros(fdim, fdim);
        for q in 0..nf {
            let mut col = CMat::zeros(fdim, fdim);
            for qp in 0..nf {
                let c = ops.h_single[(q, qp)];
                if c != crate::linalg::ZERO {
                    col += &ops.f_ferm[qp] * c;
                }
            }
            h_m_ferm += ops.f_ferm[q].adjoint() * col;
        }
        let mut h_m = ops.lift_fermion(&h_m_ferm);
        let e_vac = Complex64::new(ops.vacuum_energy_m, 0.0);
        for k in 0..dim {
            h_m[(k, k)] -= e_vac;
        }

        // H_E
        let mut h_e = CMat::zeros(dim, dim);
        for (m, mode) in model.modes.iter().enumerate() {
            let w = Complex64::new(mode.omega, 0.0);
            h_e += &ops.num_mode[m] * w;
            if spec.retain_zero_point {
                h_e += ceye(dim) * (w * Complex64::new(0.5, 0.0));
            }
        }

        // H_int = e dx sum_{x,mu} j^mu(x) A_mu(x); the mu = 0 component has
        // no quantized modes by default and contributes zero.
        let mut h_int = CMat::zeros(dim, dim);
        let coupling = Complex64::new(spec.e * dx, 0.0);
        for mu in 0..model.n_mu() {
            for x in 0..spec.n_sites {
                h_int += (&ops.j[mu][x] * &ops.a_pot[mu][x]) * coupling;
            }
        }

        Ok(HamiltonianSet { h_m, h_e, h_int })
    }

    /// H_M + H_E + H_int.
    pub fn static_total(&self) -> CMat {
        &self.h_m + &self.h_e + &self.h_int
    }
}

/// Full time-dependent Hamiltonian: a static part plus coupling operators
/// with scalar coefficient functions.
pub struct TimeDependentHamiltonian {
    pub h0: CMat,
    pub couplings: Vec<(CMat, TimeFn)>,
}

impl TimeDependentHamiltonian {
    /// Assemble H(t) for the given analytic external drive.
    pub fn with_drive(
        ops: &OperatorSet,
        hs: &HamiltonianSet,
        drive: &ExternalDrive,
    ) -> Self {
        let spec = &ops.model.spec;
        let scale = Complex64::new(spec.e * ops.model.dx(), 0.0);
        let mut couplings = Vec::new();
        for entry in &drive.a_ext {
            couplings.push((
                &ops.j[entry.mu][entry.site] * scale,
                TimeFn::Series {
                    terms: entry.terms.clone(),
                    t0: drive.t0,
                },
            ));
        }
        for entry in &drive.j_ext {
            couplings.push((
                &ops.a_pot[entry.mu][entry.site] * scale,
                TimeFn::Series {
                    terms: entry.terms.clone(),
                    t0: drive.t0,
                },
            ));
        }
        TimeDependentHamiltonian {
            h0: hs.static_total(),
            couplings,
        }
    }

    /// H(t) as a dense matrix.
    pub fn at(&self, t: f64) -> CMat {
        let mut h = self.h0.clone();
        for (op, f) in &self.couplings {
            let c = f.eval(t);
            if c != 0.0 {
                h += op * Complex64::new(c, 0.0);
            }
        }
        h
    }
}

/// Ground state of a Hermitian matrix (lowest-eigenvalue eigenvector) with a
/// deterministic phase: the first entry of largest magnitude is made real
/// and positive.
pub fn ground_state(h: &CMat) -> (f64, CVec) {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let mut kmin = 0;
    for k in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[k] < eig.eigenvalues[kmin] {
            kmin = k;
        }
    }
    let mut v = CVec::from(eig.eigenvectors.column(kmin).clone_owned());
    let mut imax = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[imax].norm() {
            imax = i;
        }
    }
    let phase = v[imax] / Complex64::new(v[imax].norm(), 0.0);
    v /= phase;
    (eig.eigenvalues[kmin], v)
}
