//! Dense complex linear algebra helpers shared by the whole crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices at desk scale
//! (Fock dimensions of a few thousand at most), so dense algorithms are
//! always the right tool.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn czero(n: usize, m: usize) -> CMat {
    CMat::zeros(n, m)
}

pub fn ceye(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Kronecker product a (x) b.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two vectors (state tensor product).
pub fn kron_vec(a: &CVec, b: &CVec) -> CVec {
    let mut out = CVec::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for k in 0..b.len() {
            out[i * b.len() + k] = a[i] * b[k];
        }
    }
    out
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// max |M - M^dagger|.
pub fn hermiticity_residual(m: &CMat) -> f64 {
    let adj = m.adjoint();
    max_abs(&(m - adj))
}

/// max |M + M^dagger|.
pub fn antihermiticity_residual(m: &CMat) -> f64 {
    let adj = m.adjoint();
    max_abs(&(m + adj))
}

/// <v|M|v> for a normalized or unnormalized vector.
pub fn expectation(m: &CMat, v: &CVec) -> Complex64 {
    v.dotc(&(m * v))
}

/// Eigendecomposition of a Hermitian matrix, verified by reconstruction.
///
/// nalgebra's symmetric QR iteration can silently misassign eigenvectors
/// on matrices with degenerate eigenvalue clusters bridged by tiny
/// off-diagonal couplings (reconstruction residuals of order one). Every
/// decomposition is therefore checked before use; callers fall back to a
/// series evaluation of the exponential when the check fails.
fn verified_eigen(h: &CMat) -> Option<(CMat, RVec)> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let diag = CMat::from_diagonal(&eig.eigenvalues.map(|x| Complex64::new(x, 0.0)));
    let recon = &eig.eigenvectors * diag * eig.eigenvectors.adjoint();
    let residual = max_abs(&(&recon - h));
    if residual <= 1e-10 * (1.0 + max_abs(h)) {
        Some((eig.eigenvectors, eig.eigenvalues))
    } else {
        None
    }
}

/// exp(-i * scale * H) v by Taylor series over substeps sized so that each
/// partial argument has norm well below one. Robust for any Hermitian H;
/// used directly on small matrices and as the fallback for the verified
/// eigendecomposition path.
pub fn expm_multiply_series(h: &CMat, v: &CVec, scale: f64) -> CVec {
    let norm_est = h
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let n_sub = ((scale.abs() * norm_est) / 0.5).ceil().max(1.0) as usize;
    let step = Complex64::new(0.0, -scale / n_sub as f64);
    let mut out = v.clone();
    for _ in 0..n_sub {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..=40 {
            term = (h * &term) * (step / Complex64::new(k as f64, 0.0));
            acc += &term;
            if term.norm() < 1e-16 * acc.norm().max(1.0) {
                break;
            }
        }
        out = acc;
    }
    out
}

/// Unitary exp(-i * scale * H) for Hermitian H via a verified
/// eigendecomposition, with a columnwise series fallback.
pub fn expm_i_hermitian(h: &CMat, scale: f64) -> CMat {
    let n = h.nrows();
    if let Some((vectors, values)) = verified_eigen(h) {
        let mut phases = CMat::zeros(n, n);
        for k in 0..n {
            let phi = -scale * values[k];
            phases[(k, k)] = Complex64::new(phi.cos(), phi.sin());
        }
        &vectors * phases * vectors.adjoint()
    } else {
        let mut out = CMat::zeros(n, n);
        for j in 0..n {
            let mut e = CVec::zeros(n);
            e[j] = ONE;
            out.set_column(j, &expm_multiply_series(h, &e, scale));
        }
        out
    }
}

/// One eigendecomposition of a Hermitian matrix, reusable for evolving
/// states over several time intervals (e.g. full step and half step).
/// Falls back to the series evaluation when the decomposition does not
/// reconstruct the input.
pub struct StepPropagator {
    decomposition: Option<(CMat, RVec)>,
    h: CMat,
}

impl StepPropagator {
    pub fn new(h: &CMat) -> Self {
        StepPropagator {
            decomposition: verified_eigen(h),
            h: h.clone(),
        }
    }

    /// exp(-i * dt * H) v.
    pub fn apply(&self, v: &CVec, dt: f64) -> CVec {
        match &self.decomposition {
            Some((vectors, values)) => {
                let mut coeffs = vectors.adjoint() * v;
                for k in 0..coeffs.len() {
                    let phi = -dt * values[k];
                    coeffs[k] *= Complex64::new(phi.cos(), phi.sin());
                }
                vectors * coeffs
            }
            None => expm_multiply_series(&self.h, v, dt),
        }
    }
}

/// exp(-i * scale * H) v through a Lanczos subspace; used when the Fock
/// dimension makes the full eigendecomposition too expensive.
pub fn lanczos_expv(h: &CMat, v: &CVec, scale: f64, krylov_dim: usize, tol: f64) -> CVec {
    let n = v.len();
    let m = krylov_dim.min(n);
    let beta0 = v.norm();
    if beta0 == 0.0 {
        return v.clone();
    }
    let mut basis: Vec<CVec> = Vec::with_capacity(m + 1);
    basis.push(v / Complex64::new(beta0, 0.0));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for j in 0..m {
        let mut w = h * &basis[j];
        let alpha = basis[j].dotc(&w).re;
        w -= &basis[j] * Complex64::new(alpha, 0.0);
        if j > 0 {
            let b = betas[j - 1];
            w -= &basis[j - 1] * Complex64::new(b, 0.0);
        }
        // one step of reorthogonalization keeps the basis clean at these dims
        for q in &basis {
            let c = q.dotc(&w);
            w -= q * c;
        }
        alphas.push(alpha);
        let beta = w.norm();
        if beta < tol {
            break;
        }
        betas.push(beta);
        basis.push(w / Complex64::new(beta, 0.0));
    }
    let k = alphas.len();
    let mut t = CMat::zeros(k, k);
    for j in 0..k {
        t[(j, j)] = Complex64::new(alphas[j], 0.0);
        if j + 1 < k {
            t[(j, j + 1)] = Complex64::new(betas[j], 0.0);
            t[(j + 1, j)] = Complex64::new(betas[j], 0.0);
        }
    }
    // Only the first column of exp(-i scale T) is needed; the series
    // evaluation sidesteps eigendecomposition failures on tridiagonal
    // matrices with nearly decoupled degenerate blocks.
    let mut e1 = CVec::zeros(k);
    e1[0] = ONE;
    let u1 = expm_multiply_series(&t, &e1, scale);
    let mut out = CVec::zeros(n);
    for j in 0..k {
        out += &basis[j] * (u1[j] * Complex64::new(beta0, 0.0));
    }
    out
}

/// Minimum-norm-update least-squares solve of K a = r anchored at `seed`:
/// a = seed + pinv(K) (r - K seed), with singular values below
/// `rel_floor * s_max` treated as exact zeros (gauge directions).
///
/// Returns the solution together with the numerical rank and the smallest
/// retained singular value.
pub fn lstsq_seeded(k: &RMat, r: &RVec, seed: &RVec, rel_floor: f64) -> (RVec, usize, f64) {
    let resid = r - k * seed;
    let svd = k.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let floor = rel_floor * smax.max(1e-300);
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    let mut coeffs = RVec::zeros(svd.singular_values.len());
    let uty = u.transpose() * &resid;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > floor {
            coeffs[i] = uty[i] / s;
            rank += 1;
            smin = smin.min(s);
        }
    }
    let delta = vt.transpose() * coeffs;
    (seed + delta, rank, if rank == 0 { 0.0 } else { smin })
}

/// Real part of an expectation value, asserting the imaginary part is noise.
pub fn real_expectation(m: &CMat, v: &CVec) -> f64 {
    expectation(m, v).re
}
