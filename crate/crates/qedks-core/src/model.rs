//! The finite regularized model: periodic 1D lattice, gamma matrices,
//! quantized photon modes and analytic external drives.
//!
//! The continuum theory is represented on `n_sites` periodic lattice points
//! with centered-difference derivatives. The photon field is expanded in the
//! real Fourier eigenmodes of the lattice Laplacian; each quantized mode
//! carries one polarization index. The zero-momentum mode receives a small
//! configurable mass `omega_min` so every oscillator has a normalizable
//! ground state.

use crate::error::{CoreError, Result};
use crate::linalg::{CMat, ONE, ZERO};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Specification of the finite regularization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Spatial lattice points (periodic).
    pub n_sites: usize,
    /// Lattice spacing in natural units (hbar = c = 1).
    pub lattice_spacing: f64,
    /// 2 for the 1+1D representation, 4 for the 3+1D gamma representation.
    pub spinor_dim: usize,
    /// Number of quantized photon modes (Fourier modes of the potential).
    pub n_modes: usize,
    /// Photon occupation cutoff per mode.
    pub n_max: usize,
    /// Quantized mu-component per mode. Empty means "all spatial index 1".
    #[serde(default)]
    pub polarizations: Vec<usize>,
    /// Coupling constant.
    pub e: f64,
    /// Bare mass.
    pub m0: f64,
    /// Mass assigned to the zero-momentum photon mode.
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    /// Keep the 1/2-quanta of the field energy instead of normal ordering.
    #[serde(default)]
    pub retain_zero_point: bool,
    /// Refuse to build Fock spaces larger than this.
    #[serde(default = "default_dim_cap")]
    pub fock_dim_cap: usize,
    /// Flag runs whose top photon level collects more weight than this.
    #[serde(default = "default_leak_max")]
    pub leak_max: f64,
    /// Admissibility tolerance for drive gauge/continuity residuals.
    #[serde(default = "default_tol_gauge")]
    pub tol_gauge: f64,
}

fn default_omega_min() -> f64 {
    1e-3
}
fn default_dim_cap() -> usize {
    16384
}
fn default_leak_max() -> f64 {
    1e-6
}
fn default_tol_gauge() -> f64 {
    1e-10
}

impl ModelSpec {
    /// The 2-site, single-mode configuration used throughout the test suite.
    pub fn reference() -> Self {
        ModelSpec {
            n_sites: 2,
            lattice_spacing: 1.0,
            spinor_dim: 2,
            n_modes: 1,
            n_max: 4,
            polarizations: vec![],
            e: 0.2,
            m0: 1.0,
            omega_min: 1e-3,
            retain_zero_point: false,
            fock_dim_cap: default_dim_cap(),
            leak_max: default_leak_max(),
            tol_gauge: default_tol_gauge(),
        }
    }

    pub fn fermion_modes(&self) -> usize {
        self.n_sites * self.spinor_dim
    }

    pub fn fermion_dim(&self) -> usize {
        1usize << self.fermion_modes()
    }

    pub fn photon_dim(&self) -> usize {
        (self.n_max + 1).pow(self.n_modes as u32)
    }

    pub fn fock_dim(&self) -> usize {
        self.fermion_dim() * self.photon_dim()
    }
}

/// Gamma matrices with the (+,-,-,-) signature restricted to the active
/// mu-indices.
#[derive(Debug, Clone)]
pub struct GammaSet {
    /// gamma[mu], one per active index.
    pub gamma: Vec<CMat>,
    /// Diagonal of the metric restricted to the active indices.
    pub metric: Vec<f64>,
    pub spinor_dim: usize,
}

impl GammaSet {
    /// alpha^mu = gamma^0 gamma^mu (alpha^0 is the identity).
    pub fn alpha(&self, mu: usize) -> CMat {
        &self.gamma[0] * &self.gamma[mu]
    }

    pub fn beta(&self) -> &CMat {
        &self.gamma[0]
    }

    pub fn active_mu(&self) -> usize {
        self.gamma.len()
    }
}

/// Gamma matrices for the requested spinor dimension. Entries are exactly
/// 0, +/-1 or +/-i and the Clifford relations hold exactly.
pub fn gamma_matrices(spinor_dim: usize) -> Result<GammaSet> {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    match spinor_dim {
        2 => {
            let g0 = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
            let g1 = CMat::from_row_slice(2, 2, &[ZERO, ONE, -ONE, ZERO]);
            Ok(GammaSet {
                gamma: vec![g0, g1],
                metric: vec![1.0, -1.0],
                spinor_dim,
            })
        }
        4 => {
            // Dirac representation: gamma^0 = diag(1,1,-1,-1),
            // gamma^k = [[0, sigma_k], [-sigma_k, 0]].
            let z = ZERO;
            let o = ONE;
            let i = c(0.0, 1.0);
            let g0 = CMat::from_row_slice(
                4,
                4,
                &[o, z, z, z, z, o, z, z, z, z, -o, z, z, z, z, -o],
            );
            let g1 = CMat::from_row_slice(
                4,
                4,
                &[z, z, z, o, z, z, o, z, z, -o, z, z, -o, z, z, z],
            );
            let g2 = CMat::from_row_slice(
                4,
                4,
                &[z, z, z, -i, z, z, i, z, z, i, z, z, -i, z, z, z],
            );
            let g3 = CMat::from_row_slice(
                4,
                4,
                &[z, z, o, z, z, z, z, -o, -o, z, z, z, z, o, z, z],
            );
            Ok(GammaSet {
                gamma: vec![g0, g1, g2, g3],
                metric: vec![1.0, -1.0, -1.0, -1.0],
                spinor_dim,
            })
        }
        other => Err(CoreError::UnsupportedSpinorDim(other)),
    }
}

/// One quantized photon mode: a real orthonormal spatial profile, a
/// frequency, and the polarization index it carries.
#[derive(Debug, Clone)]
pub struct PhotonMode {
    /// Profile u_m(x), orthonormal under sum_x u u dx.
    pub profile: Vec<f64>,
    pub omega: f64,
    /// Lower mu-index of the potential component this mode quantizes.
    pub polarization: usize,
    /// Eigenvalue of minus the lattice Laplacian for this profile.
    pub laplacian_eigenvalue: f64,
}

/// A validated model: spec, gamma data and the photon mode table.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub gamma: GammaSet,
    pub modes: Vec<PhotonMode>,
}

impl Model {
    pub fn dx(&self) -> f64 {
        self.spec.lattice_spacing
    }

    pub fn n_sites(&self) -> usize {
        self.spec.n_sites
    }

    /// Number of active mu-indices (2 in 1+1D, 4 in 3+1D).
    pub fn n_mu(&self) -> usize {
        self.gamma.active_mu()
    }

    pub fn fock_dim(&self) -> usize {
        self.spec.fock_dim()
    }

    /// Fermion mode index of (site, spinor component); fixes the
    /// Jordan-Wigner ordering for the whole crate.
    pub fn fermion_index(&self, site: usize, alpha: usize) -> usize {
        site * self.spec.spinor_dim + alpha
    }

    /// Periodic neighbor.
    pub fn site_shift(&self, site: usize, by: isize) -> usize {
        let n = self.spec.n_sites as isize;
        (((site as isize + by) % n + n) % n) as usize
    }
}

/// Real Fourier profiles of the periodic lattice Laplacian, in the fixed
/// order: (cos, sin) pairs of increasing momentum, then the staggered mode
/// when `n_sites` is even, and the constant profile last. Propagating modes
/// come first: the zero-momentum profile is a Wilson-line degree of freedom
/// that only exists through its clamp mass, so it is quantized only when
/// the full mode set is requested.
fn laplacian_modes(n_sites: usize, dx: f64) -> Vec<(Vec<f64>, f64)> {
    let n = n_sites;
    let norm_full = 1.0 / (n as f64 * dx).sqrt();
    let mut out = Vec::new();
    let half = n / 2;
    for j in 1..=half {
        let k = 2.0 * PI * j as f64 / (n as f64 * dx);
        let lam = (2.0 - 2.0 * (k * dx).cos()) / (dx * dx);
        if 2 * j == n {
            // staggered mode, real on its own
            let u: Vec<f64> = (0..n).map(|x| norm_full * if x % 2 == 0 { 1.0 } else { -1.0 }).collect();
            out.push((u, lam));
        } else {
            let amp = (2.0f64).sqrt() * norm_full;
            let uc: Vec<f64> = (0..n).map(|x| amp * (k * x as f64 * dx).cos()).collect();
            let us: Vec<f64> = (0..n).map(|x| amp * (k * x as f64 * dx).sin()).collect();
            out.push((uc, lam));
            out.push((us, lam));
        }
    }
    out.push((vec![norm_full; n], 0.0));
    out
}

/// Validate a spec and derive the photon mode table.
pub fn build_model(spec: ModelSpec) -> Result<Model> {
    if spec.n_sites < 1 {
        return Err(CoreError::InvalidSpec("n_sites must be >= 1".into()));
    }
    if spec.lattice_spacing <= 0.0 {
        return Err(CoreError::InvalidSpec("lattice_spacing must be > 0".into()));
    }
    if spec.n_modes > 0 && spec.n_max < 1 {
        return Err(CoreError::InvalidSpec("n_max must be >= 1".into()));
    }
    let gamma = gamma_matrices(spec.spinor_dim)?;
    let dim = spec.fock_dim();
    if dim > spec.fock_dim_cap {
        return Err(CoreError::DimensionOverflow {
            dim,
            cap: spec.fock_dim_cap,
        });
    }
    let profiles = laplacian_modes(spec.n_sites, spec.lattice_spacing);
    if spec.n_modes > profiles.len() {
        return Err(CoreError::InvalidSpec(format!(
            "n_modes = {} exceeds the {} lattice Fourier modes",
            spec.n_modes,
            profiles.len()
        )));
    }
    if !spec.polarizations.is_empty() && spec.polarizations.len() != spec.n_modes {
        return Err(CoreError::InvalidSpec(
            "polarizations must be empty or have one entry per mode".into(),
        ));
    }
    let n_mu = gamma.active_mu();
    let mut modes = Vec::with_capacity(spec.n_modes);
    for m in 0..spec.n_modes {
        let pol = if spec.polarizations.is_empty() {
            1
        } else {
            spec.polarizations[m]
        };
        if pol == 0 || pol >= n_mu {
            return Err(CoreError::InvalidSpec(format!(
                "polarization {pol} is not a spatial index of this model"
            )));
        }
        let (profile, lam) = profiles[m].clone();
        let omega = lam.sqrt().max(spec.omega_min);
        modes.push(PhotonMode {
            profile,
            omega,
            polarization: pol,
            laplacian_eigenvalue: lam,
        });
    }
    Ok(Model { spec, gamma, modes })
}

/// One analytic term of a drive series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// c * (t - t0)^power
    Poly { c: f64, power: u32 },
    /// c * cos(omega (t - t0))
    Cos { c: f64, omega: f64 },
    /// c * sin(omega (t - t0))
    Sin { c: f64, omega: f64 },
}

impl Term {
    /// l-th time derivative evaluated at offset tau = t - t0.
    pub fn deriv(&self, tau: f64, l: u32) -> f64 {
        match *self {
            Term::Poly { c, power } => {
                if l > power {
                    0.0
                } else {
                    let mut coeff = c;
                    for k in 0..l {
                        coeff *= (power - k) as f64;
                    }
                    coeff * tau.powi((power - l) as i32)
                }
            }
            Term::Cos { c, omega } => {
                let phase = omega * tau + l as f64 * PI / 2.0;
                c * omega.powi(l as i32) * phase.cos()
            }
            Term::Sin { c, omega } => {
                let phase = omega * tau + l as f64 * PI / 2.0;
                c * omega.powi(l as i32) * phase.sin()
            }
        }
    }
}

/// A finite analytic series attached to one (site, mu) slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveEntry {
    pub site: usize,
    pub mu: usize,
    pub terms: Vec<Term>,
}

/// Analytic-in-time external potential and current.
///
/// `a_ext` entries are the lower-index potential components a_mu, `j_ext`
/// entries are the upper-index current components j^mu. Both are finite
/// series, so the analyticity hypothesis of the construction holds by
/// construction.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExternalDrive {
    #[serde(default)]
    pub a_ext: Vec<DriveEntry>,
    #[serde(default)]
    pub j_ext: Vec<DriveEntry>,
    #[serde(default)]
    pub t0: f64,
}

impl ExternalDrive {
    pub fn zero() -> Self {
        ExternalDrive::default()
    }

    fn eval_entries(
        entries: &[DriveEntry],
        n_sites: usize,
        n_mu: usize,
        tau: f64,
        l: u32,
    ) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; n_mu]; n_sites];
        for e in entries {
            let v: f64 = e.terms.iter().map(|t| t.deriv(tau, l)).sum();
            out[e.site][e.mu] += v;
        }
        out
    }

    /// a_mu values per [site][mu] at time t (l-th derivative).
    pub fn a_deriv(&self, model: &Model, t: f64, l: u32) -> Vec<Vec<f64>> {
        Self::eval_entries(
            &self.a_ext,
            model.n_sites(),
            model.n_mu(),
            t - self.t0,
            l,
        )
    }

    /// j^mu values per [site][mu] at time t (l-th derivative).
    pub fn j_deriv(&self, model: &Model, t: f64, l: u32) -> Vec<Vec<f64>> {
        Self::eval_entries(
            &self.j_ext,
            model.n_sites(),
            model.n_mu(),
            t - self.t0,
            l,
        )
    }

    pub fn a_values(&self, model: &Model, t: f64) -> Vec<Vec<f64>> {
        self.a_deriv(model, t, 0)
    }

    pub fn j_values(&self, model: &Model, t: f64) -> Vec<Vec<f64>> {
        self.j_deriv(model, t, 0)
    }

    /// Discrete Lorenz residual of a_ext at time t:
    /// max_x |d_t a_0(x) - D_c a_1(x)| with the centered difference D_c.
    pub fn lorenz_residual(&self, model: &Model, t: f64) -> f64 {
        let a = self.a_values(model, t);
        let adot = self.a_deriv(model, t, 1);
        let dx = model.dx();
        let mut worst: f64 = 0.0;
        for x in 0..model.n_sites() {
            let xp = model.site_shift(x, 1);
            let xm = model.site_shift(x, -1);
            // d^mu a_mu = d_t a_0 - sum_k d_k a_k with spatial derivative
            // along the lattice direction (index 1) only.
            let div = (a[xp][1] - a[xm][1]) / (2.0 * dx);
            worst = worst.max((adot[x][0] - div).abs());
        }
        worst
    }

    /// Discrete continuity residual of j_ext at time t:
    /// max_x |d_t j^0(x) + D_c j^1(x)|.
    pub fn continuity_residual(&self, model: &Model, t: f64) -> f64 {
        let j = self.j_values(model, t);
        let jdot = self.j_deriv(model, t, 1);
        let dx = model.dx();
        let mut worst: f64 = 0.0;
        for x in 0..model.n_sites() {
            let xp = model.site_shift(x, 1);
            let xm = model.site_shift(x, -1);
            let div = (j[xp][1] - j[xm][1]) / (2.0 * dx);
            worst = worst.max((jdot[x][0] + div).abs());
        }
        worst
    }

    /// Check admissibility (Lorenz + continuity) on a set of sample times.
    pub fn admissible(&self, model: &Model, times: &[f64]) -> Result<()> {
        let tol = model.spec.tol_gauge;
        for &t in times {
            let lr = self.lorenz_residual(model, t);
            if lr > tol {
                return Err(CoreError::InvalidSpec(format!(
                    "a_ext violates the Lorenz condition at t = {t}: residual {lr:.3e}"
                )));
            }
            let cr = self.continuity_residual(model, t);
            if cr > tol {
                return Err(CoreError::InvalidSpec(format!(
                    "j_ext violates continuity at t = {t}: residual {cr:.3e}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{anticommutator, ceye, max_abs};

    #[test]
    fn clifford_relations_exact() {
        for dim in [2usize, 4] {
            let g = gamma_matrices(dim).unwrap();
            for mu in 0..g.active_mu() {
                for nu in 0..g.active_mu() {
                    let ac = anticommutator(&g.gamma[mu], &g.gamma[nu]);
                    let expect = if mu == nu {
                        ceye(dim) * Complex64::new(2.0 * g.metric[mu], 0.0)
                    } else {
                        CMat::zeros(dim, dim)
                    };
                    assert_eq!(max_abs(&(ac - expect)), 0.0, "dim {dim} mu {mu} nu {nu}");
                }
            }
        }
    }

    #[test]
    fn gamma2_matches_stated_form() {
        let g = gamma_matrices(2).unwrap();
        assert_eq!(g.gamma[0][(0, 0)], ONE);
        assert_eq!(g.gamma[0][(1, 1)], -ONE);
        assert_eq!(g.gamma[1][(0, 1)], ONE);
        assert_eq!(g.gamma[1][(1, 0)], -ONE);
    }

    #[test]
    fn unsupported_spinor_dim_rejected() {
        assert!(matches!(
            gamma_matrices(3),
            Err(CoreError::UnsupportedSpinorDim(3))
        ));
    }

    #[test]
    fn fock_dimension_counting() {
        let mut spec = ModelSpec::reference();
        spec.n_max = 1;
        assert_eq!(spec.fock_dim(), 32); // 2^4 * 2

        let mut pure_matter = ModelSpec::reference();
        pure_matter.n_sites = 1;
        pure_matter.n_modes = 0;
        assert_eq!(pure_matter.fock_dim(), 4); // 2^spinor_dim

        let mut larger = ModelSpec::reference();
        larger.n_sites = 4;
        larger.n_modes = 2;
        larger.n_max = 2;
        assert_eq!(larger.fock_dim(), 2304); // 2^8 * 9
    }

    #[test]
    fn dimension_cap_enforced() {
        let mut spec = ModelSpec::reference();
        spec.n_sites = 8;
        spec.n_modes = 3;
        spec.fock_dim_cap = 1000;
        match build_model(spec) {
            Err(CoreError::DimensionOverflow { dim, cap }) => {
                assert_eq!(cap, 1000);
                assert!(dim > cap);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn mode_profiles_orthonormal() {
        for n in [2usize, 3, 4, 5, 6] {
            let dx = 0.7;
            let modes = laplacian_modes(n, dx);
            assert_eq!(modes.len(), n);
            for (i, (ui, _)) in modes.iter().enumerate() {
                for (j, (uj, _)) in modes.iter().enumerate() {
                    let ip: f64 = ui.iter().zip(uj).map(|(a, b)| a * b * dx).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-12, "n {n} modes {i},{j}: {ip}");
                }
            }
        }
    }

    #[test]
    fn reference_mode_is_the_propagating_one() {
        // On two sites the first quantized mode must be the staggered
        // (momentum pi) profile with omega = 2/dx, not the clamped
        // zero-momentum one.
        let model = build_model(ModelSpec::reference()).unwrap();
        let mode = &model.modes[0];
        assert!((mode.omega - 2.0).abs() < 1e-12);
        assert!((mode.profile[0] + mode.profile[1]).abs() < 1e-12);
        // requesting both modes appends the clamped zero-momentum profile
        let mut spec = ModelSpec::reference();
        spec.n_modes = 2;
        spec.n_max = 2;
        let full = build_model(spec).unwrap();
        assert!((full.modes[1].omega - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn drive_polynomial_derivative() {
        let model = build_model(ModelSpec::reference()).unwrap();
        let c = 0.37;
        let drive = ExternalDrive {
            a_ext: vec![DriveEntry {
                site: 0,
                mu: 1,
                terms: vec![Term::Poly { c, power: 1 }],
            }],
            j_ext: vec![],
            t0: 0.0,
        };
        for t in [0.0, 0.5, 2.0] {
            let d1 = drive.a_deriv(&model, t, 1);
            assert!((d1[0][1] - c).abs() < 1e-15);
            let d2 = drive.a_deriv(&model, t, 2);
            assert_eq!(d2[0][1], 0.0);
        }
    }

    #[test]
    fn drive_mixed_series_matches_hand_sum() {
        // Independent oracle: evaluate the series term by term by hand.
        let model = build_model(ModelSpec::reference()).unwrap();
        let terms = vec![
            Term::Poly { c: 0.2, power: 2 },
            Term::Cos { c: -0.4, omega: 1.3 },
        ];
        let drive = ExternalDrive {
            a_ext: vec![DriveEntry {
                site: 1,
                mu: 0,
                terms: terms.clone(),
            }],
            j_ext: vec![],
            t0: 0.25,
        };
        let t = 0.25;
        let tau: f64 = 0.0;
        let hand = 0.2 * tau * tau + (-0.4) * (1.3 * tau).cos();
        let got = drive.a_values(&model, t)[1][0];
        assert!((got - hand).abs() < 1e-15);
    }

    #[test]
    fn zero_drive_is_zero() {
        let model = build_model(ModelSpec::reference()).unwrap();
        let drive = ExternalDrive::zero();
        for t in [0.0, 1.0, 3.5] {
            let a = drive.a_values(&model, t);
            let j = drive.j_values(&model, t);
            assert!(a.iter().flatten().all(|&v| v == 0.0));
            assert!(j.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn basis_determinism() {
        let m1 = build_model(ModelSpec::reference()).unwrap();
        let m2 = build_model(ModelSpec::reference()).unwrap();
        for (a, b) in m1.modes.iter().zip(&m2.modes) {
            assert_eq!(a.profile, b.profile);
            assert_eq!(a.omega, b.omega);
        }
        for s in 0..2 {
            for al in 0..2 {
                assert_eq!(m1.fermion_index(s, al), m2.fermion_index(s, al));
            }
        }
    }
}
