//! Exact time derivatives of expectation values at a single instant.
//!
//! For H(t) = H0 + sum_c f_c(t) V_c and rho(t) obeying the von Neumann
//! equation, the derivatives of rho at t0 follow the binomial recursion
//!   rho^(l+1) = -i sum_{n<=l} C(l,n) [H^(n)(t0), rho^(l-n)],
//! with H^(n) the n-th derivative of the drive coefficients times their
//! coupling operators. Expectation derivatives are then traces against the
//! observable. Everything is algebraic -- no finite differences.

use crate::fock::InitialConfiguration;
use crate::hamiltonian::TimeDependentHamiltonian;
use crate::linalg::{commutator, CMat};
use num_complex::Complex64;

/// Density matrix of a weighted pure-state ensemble.
pub fn density_matrix(config: &InitialConfiguration) -> CMat {
    let dim = config.states[0].len();
    let mut rho = CMat::zeros(dim, dim);
    for (p, s) in config.weights.iter().zip(&config.states) {
        rho += s * s.adjoint() * Complex64::new(*p, 0.0);
    }
    rho
}

/// n-th time derivative of H(t) at t. For n = 0 this is H(t) itself; for
/// n >= 1 only the drive coefficients contribute.
pub fn hamiltonian_derivative(ham: &TimeDependentHamiltonian, t: f64, n: u32) -> CMat {
    if n == 0 {
        return ham.at(t);
    }
    let dim = ham.h0.nrows();
    let mut h = CMat::zeros(dim, dim);
    for (op, f) in &ham.couplings {
        let c = f.deriv(t, n);
        if c != 0.0 {
            h += op * Complex64::new(c, 0.0);
        }
    }
    h
}

fn binomial(l: usize, n: usize) -> f64 {
    let mut b = 1.0;
    for k in 0..n {
        b = b * (l - k) as f64 / (k + 1) as f64;
    }
    b
}

/// rho^(0..=l_max) at t0.
pub fn rho_derivatives(
    ham: &TimeDependentHamiltonian,
    rho0: &CMat,
    t0: f64,
    l_max: usize,
) -> Vec<CMat> {
    let h_derivs: Vec<CMat> = (0..=l_max as u32)
        .map(|n| hamiltonian_derivative(ham, t0, n))
        .collect();
    let mut rho = vec![rho0.clone()];
    for l in 0..l_max {
        let dim = rho0.nrows();
        let mut next = CMat::zeros(dim, dim);
        for n in 0..=l {
            let c = binomial(l, n);
            next += commutator(&h_derivs[n], &rho[l - n]) * Complex64::new(0.0, -c);
        }
        rho.push(next);
    }
    rho
}

/// l-th time derivative of <O> at t0 given the rho derivative table.
pub fn expectation_derivative(rho_derivs: &[CMat], op: &CMat, l: usize) -> f64 {
    (op * &rho_derivs[l]).trace().re
}
