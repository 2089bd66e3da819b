//! Vacuum reduction of the quantized field.
//!
//! Between Fock vacua the field factor of the path-integral representation
//! collapses, by the zero-mean Gaussian characteristic functional, to
//! `e^{-(α/4) Σ_j ‖K_t^j‖²}`. The squared norm is a double Stratonovich
//! integral along the path whose integrand is the effective pair kernel
//!
//! `W_{μν}(x, y, τ) = Σ_j ∫ conj(ρ̂_μ^j(k,x)) ρ̂_ν^j(k,y) e^{-τ ω(k)} dk`.
//!
//! For the standard translation-invariant cutoff the polarization sum gives
//! the transverse projector `δ_{μν} - k̂_μ k̂_ν` and the kernel reduces to two
//! scalar profiles of (|x-y|, τ), which are tabulated once and interpolated
//! in the Monte Carlo hot loop.

use crate::error::{Error, Result};
use crate::paths::BrownianPath;
use crate::quad::{gauss_legendre_on, sphere_nodes};
use crate::rng::SeedSpec;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::Path;

/// Relativistic dispersion ω(k) = √(|k|² + m²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub d: usize,
    pub m: f64,
}

impl DispersionSpec {
    pub fn new(d: usize, m: f64) -> Self {
        assert!(m >= 0.0);
        Self { d, m }
    }

    pub fn omega(&self, k_abs: f64) -> f64 {
        (k_abs * k_abs + self.m * self.m).sqrt()
    }
}

/// Cutoff model defining the momentum-space profiles ρ̂_μ^j(k, x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffModel {
    /// ρ̂_μ^j(k, x) = e^{ikx} e_μ(k, j) φ̂(k) / ω(k)^{omega_power} with
    /// φ̂ = 1 on |k| ≤ lambda. The default omega_power = 1 is the literal
    /// composition φ̂/√ω · 1/√ω of the two square roots in the standard
    /// model; 0.5 is the common alternative convention.
    StandardPf { lambda: f64, omega_power: f64 },
    /// Tables of scattering eigenfunctions replacing the plane wave.
    VariableMassTable(CutoffTables),
}

impl CutoffModel {
    pub fn standard(lambda: f64) -> Self {
        Self::StandardPf { lambda, omega_power: 1.0 }
    }
}

/// Discretized cutoff data on a k-grid × x-grid; ρ̂_μ^j(k_i, x_a) =
/// φ̂(k_i) e_μ(k_i, j) conj(Ψ(k_i, x_a)) / ω(k_i)^{omega_power}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTables {
    pub k_nodes: Vec<[f64; 3]>,
    pub k_weights: Vec<f64>,
    pub omega: Vec<f64>,
    pub phi_hat: Vec<f64>,
    /// Two polarization vectors per k node.
    pub pol: Vec<[[f64; 3]; 2]>,
    pub x_nodes: Vec<[f64; 3]>,
    /// Ψ(k_i, x_a), row-major over (k, x).
    pub psi: Vec<Complex64>,
    /// ∇_x Ψ(k_i, x_a), same layout.
    pub grad_psi: Vec<[Complex64; 3]>,
    pub omega_power: f64,
}

impl CutoffTables {
    pub fn psi_at(&self, ik: usize, ix: usize) -> Complex64 {
        self.psi[ik * self.x_nodes.len() + ix]
    }

    fn nearest_x(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, xn) in self.x_nodes.iter().enumerate() {
            let d: f64 = xn.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// sup over the x-grid of Σ_{j,μ} ∫ |ρ̂_μ^j(k, x)|² dk.
    pub fn sup_rho_norm_sq(&self) -> f64 {
        let nx = self.x_nodes.len();
        let mut sup: f64 = 0.0;
        for ix in 0..nx {
            let mut total = 0.0;
            for ik in 0..self.k_nodes.len() {
                let g = self.phi_hat[ik] * self.phi_hat[ik]
                    / self.omega[ik].powf(2.0 * self.omega_power);
                // Σ_{j,μ} e_μ(k,j)² = 2
                total += self.k_weights[ik] * g * 2.0 * self.psi_at(ik, ix).norm_sqr();
            }
            sup = sup.max(total);
        }
        sup
    }
}

/// Orthonormal pair (e¹, e²) with k·eʲ = 0 for a unit vector k̂.
pub fn polarization_basis(khat: [f64; 3]) -> [[f64; 3]; 2] {
    // Cross with the axis most orthogonal to k̂ for stability.
    let aux = if khat[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let mut e1 = [
        aux[1] * khat[2] - aux[2] * khat[1],
        aux[2] * khat[0] - aux[0] * khat[2],
        aux[0] * khat[1] - aux[1] * khat[0],
    ];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for v in &mut e1 {
        *v /= n;
    }
    let e2 = [
        khat[1] * e1[2] - khat[2] * e1[1],
        khat[2] * e1[0] - khat[0] * e1[2],
        khat[0] * e1[1] - khat[1] * e1[0],
    ];
    [e1, e2]
}

/// Tabulation ranges for the radial kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelTabulation {
    pub r_max: f64,
    pub n_r: usize,
    pub tau_max: f64,
    pub n_tau: usize,
    /// Radial Gauss-Legendre order of the k-integral.
    pub k_order: usize,
}

impl Default for KernelTabulation {
    fn default() -> Self {
        Self { r_max: 16.0, n_r: 640, tau_max: 4.0, n_tau: 320, k_order: 64 }
    }
}

/// Evaluable effective pair kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldKernel {
    /// Standard cutoff: W(x, y, τ) = A_perp(r, τ)(δ - r̂r̂) + A_par(r, τ) r̂r̂
    /// with r = x - y; profiles tabulated on an (r, τ) grid, bilinear
    /// interpolation, direct quadrature outside the table.
    Radial {
        disp: DispersionSpec,
        lambda: f64,
        omega_power: f64,
        tab: KernelTabulation,
        /// row-major (n_r + 1) × (n_tau + 1)
        a_par: Vec<f64>,
        a_perp: Vec<f64>,
    },
    /// Variable-mass cutoff: direct k-sum over the tables; x resolved to the
    /// nearest table node.
    Tabulated { disp: DispersionSpec, tables: CutoffTables },
}

/// Angular integrals ∫_{-1}^{1} cos(a c) dc and ∫_{-1}^{1} c² cos(a c) dc.
fn angular_i0_i2(a: f64) -> (f64, f64) {
    if a.abs() < 1e-3 {
        let a2 = a * a;
        (
            2.0 * (1.0 - a2 / 6.0 + a2 * a2 / 120.0),
            2.0 * (1.0 / 3.0 - a2 / 10.0 + a2 * a2 / 168.0),
        )
    } else {
        let (s, c) = a.sin_cos();
        let i0 = 2.0 * s / a;
        let i2 = 2.0 * ((a * a - 2.0) * s + 2.0 * a * c) / (a * a * a);
        (i0, i2)
    }
}

/// Direct radial quadrature of the two profiles at one (r, τ).
fn radial_profiles_direct(
    lambda: f64,
    omega_power: f64,
    disp: DispersionSpec,
    k_order: usize,
    r: f64,
    tau: f64,
) -> (f64, f64) {
    let (ks, ws) = gauss_legendre_on(k_order, 0.0, lambda);
    let mut par = 0.0;
    let mut perp = 0.0;
    for (k, w) in ks.iter().zip(&ws) {
        let om = disp.omega(*k);
        let g = w * k * k * (-tau * om).exp() / om.powf(2.0 * omega_power);
        let (i0, i2) = angular_i0_i2(k * r);
        par += g * 2.0 * std::f64::consts::PI * (i0 - i2);
        perp += g * std::f64::consts::PI * (i0 + i2);
    }
    (par, perp)
}

/// Build an evaluable kernel from a cutoff model and dispersion.
pub fn build_kernel(
    model: &CutoffModel,
    disp: DispersionSpec,
    tab: KernelTabulation,
) -> Result<FieldKernel> {
    match model {
        CutoffModel::StandardPf { lambda, omega_power } => {
            if !(lambda.is_finite() && *lambda > 0.0) {
                return Err(Error::QuadratureFailure {
                    context: format!("UV cutoff Λ = {lambda} must be finite and positive"),
                    a: f64::NAN,
                    b: f64::NAN,
                });
            }
            if disp.m == 0.0 && 2.0 * omega_power >= 3.0 {
                return Err(Error::QuadratureFailure {
                    context: format!(
                        "k-integrand k²/ω^{} not integrable at k = 0 for m = 0",
                        2.0 * omega_power
                    ),
                    a: f64::NAN,
                    b: f64::NAN,
                });
            }
            let (lam, pw) = (*lambda, *omega_power);
            let n_cols = tab.n_tau + 1;
            let rows: Vec<(Vec<f64>, Vec<f64>)> = crate::parallel::indexed_map(tab.n_r + 1, |ir| {
                let r = tab.r_max * ir as f64 / tab.n_r as f64;
                let mut row_par = Vec::with_capacity(n_cols);
                let mut row_perp = Vec::with_capacity(n_cols);
                for it in 0..n_cols {
                    let tau = tab.tau_max * it as f64 / tab.n_tau as f64;
                    let (p, q) = radial_profiles_direct(lam, pw, disp, tab.k_order, r, tau);
                    row_par.push(p);
                    row_perp.push(q);
                }
                (row_par, row_perp)
            });
            let mut a_par = Vec::with_capacity((tab.n_r + 1) * n_cols);
            let mut a_perp = Vec::with_capacity((tab.n_r + 1) * n_cols);
            for (p, q) in rows {
                a_par.extend(p);
                a_perp.extend(q);
            }
            Ok(FieldKernel::Radial { disp, lambda: lam, omega_power: pw, tab, a_par, a_perp })
        }
        CutoffModel::VariableMassTable(tables) => {
            Ok(FieldKernel::Tabulated { disp, tables: tables.clone() })
        }
    }
}

impl FieldKernel {
    pub fn dispersion(&self) -> DispersionSpec {
        match self {
            Self::Radial { disp, .. } | Self::Tabulated { disp, .. } => *disp,
        }
    }

    /// The two scalar profiles (A_par, A_perp) at separation r, time gap τ.
    /// Radial kernels only.
    pub fn profiles(&self, r: f64, tau: f64) -> (f64, f64) {
        match self {
            Self::Radial { disp, lambda, omega_power, tab, a_par, a_perp } => {
                if r > tab.r_max || tau > tab.tau_max {
                    return radial_profiles_direct(*lambda, *omega_power, *disp, tab.k_order, r, tau);
                }
                let fr = (r / tab.r_max * tab.n_r as f64).min(tab.n_r as f64 - 1e-9);
                let ft = (tau / tab.tau_max * tab.n_tau as f64).min(tab.n_tau as f64 - 1e-9);
                let (ir, it) = (fr as usize, ft as usize);
                let (ur, ut) = (fr - ir as f64, ft - it as f64);
                let n_cols = tab.n_tau + 1;
                let lerp = |t: &Vec<f64>| {
                    let a = t[ir * n_cols + it];
                    let b = t[ir * n_cols + it + 1];
                    let c = t[(ir + 1) * n_cols + it];
                    let d = t[(ir + 1) * n_cols + it + 1];
                    a * (1.0 - ur) * (1.0 - ut)
                        + b * (1.0 - ur) * ut
                        + c * ur * (1.0 - ut)
                        + d * ur * ut
                };
                (lerp(a_par), lerp(a_perp))
            }
            Self::Tabulated { .. } => panic!("profiles only defined for radial kernels"),
        }
    }

    /// Same profiles by direct quadrature (no interpolation); test hook.
    pub fn profiles_direct(&self, r: f64, tau: f64) -> (f64, f64) {
        match self {
            Self::Radial { disp, lambda, omega_power, tab, .. } => {
                radial_profiles_direct(*lambda, *omega_power, *disp, tab.k_order, r, tau)
            }
            Self::Tabulated { .. } => panic!("profiles only defined for radial kernels"),
        }
    }

    /// Full 3×3 kernel matrix W_{μν}(x, y, τ).
    pub fn w_matrix(&self, x: &[f64], y: &[f64], tau: f64) -> [[Complex64; 3]; 3] {
        match self {
            Self::Radial { .. } => {
                let r = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
                let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                let (par, perp) = self.profiles(rn, tau);
                let rhat = if rn > 1e-300 {
                    [r[0] / rn, r[1] / rn, r[2] / rn]
                } else {
                    [0.0, 0.0, 0.0]
                };
                let mut w = [[Complex64::new(0.0, 0.0); 3]; 3];
                for mu in 0..3 {
                    for nu in 0..3 {
                        let delta = if mu == nu { 1.0 } else { 0.0 };
                        let v = perp * (delta - rhat[mu] * rhat[nu]) + par * rhat[mu] * rhat[nu];
                        w[mu][nu] = Complex64::new(v, 0.0);
                    }
                }
                w
            }
            Self::Tabulated { tables, .. } => {
                let ix = tables.nearest_x(x);
                let iy = tables.nearest_x(y);
                let mut w = [[Complex64::new(0.0, 0.0); 3]; 3];
                for ik in 0..tables.k_nodes.len() {
                    let g = tables.k_weights[ik]
                        * tables.phi_hat[ik]
                        * tables.phi_hat[ik]
                        * (-tau * tables.omega[ik]).exp()
                        / tables.omega[ik].powf(2.0 * tables.omega_power);
                    let pp = tables.psi_at(ik, ix) * tables.psi_at(ik, iy).conj();
                    for j in 0..2 {
                        let e = tables.pol[ik][j];
                        for mu in 0..3 {
                            for nu in 0..3 {
                                w[mu][nu] += g * e[mu] * e[nu] * pp;
                            }
                        }
                    }
                }
                w
            }
        }
    }
}

/// The discretized (α/4) Σ_j ‖K_t^j‖², split into its double-integral blocks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EffectiveAction {
    pub value: f64,
    /// dB·dB double sum (midpoint Stratonovich).
    pub db_db: f64,
    /// dB·ds cross block (zero for transverse cutoffs).
    pub db_ds: f64,
    /// ds·ds divergence block (zero for transverse cutoffs).
    pub ds_ds: f64,
}

/// Discretized effective action (α/4)Σ_j‖K_t^j‖² along one path.
///
/// Double sum over increment pairs with midpoint positions and midpoint
/// times; the diagonal pair (a,a) keeps W(X̄_a, X̄_a, 0)|ΔX_a|², the square
/// of the discretized single Stratonovich integral. For transverse cutoffs
/// (k·e = 0) the divergence blocks vanish identically. A value below -1e-6
/// is an error; small negative discretization noise is clamped to 0.
pub fn effective_action(
    path: &BrownianPath,
    kernel: &FieldKernel,
    alpha: f64,
) -> Result<EffectiveAction> {
    assert!(alpha >= 0.0);
    assert_eq!(path.dim, 3, "field kernels are three-dimensional");
    if alpha == 0.0 {
        return Ok(EffectiveAction { value: 0.0, db_db: 0.0, db_ds: 0.0, ds_ds: 0.0 });
    }
    let n = path.grid.n_steps;
    let dt = path.grid.dt();
    // midpoints once
    let mids: Vec<[f64; 3]> = (0..n)
        .map(|a| {
            let p = path.position(a);
            let q = path.position(a + 1);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]
        })
        .collect();
    let mut quad = 0.0;
    match kernel {
        FieldKernel::Radial { .. } => {
            for a in 0..n {
                let da = path.increment(a);
                for b in a..n {
                    let db = path.increment(b);
                    let tau = (b - a) as f64 * dt;
                    let r = [
                        mids[a][0] - mids[b][0],
                        mids[a][1] - mids[b][1],
                        mids[a][2] - mids[b][2],
                    ];
                    let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    let (par, perp) = kernel.profiles(rn, tau);
                    let dot = da[0] * db[0] + da[1] * db[1] + da[2] * db[2];
                    let term = if rn > 1e-300 {
                        let pa = (da[0] * r[0] + da[1] * r[1] + da[2] * r[2]) / rn;
                        let pb = (db[0] * r[0] + db[1] * r[1] + db[2] * r[2]) / rn;
                        perp * (dot - pa * pb) + par * pa * pb
                    } else {
                        par * dot
                    };
                    quad += if a == b { term } else { 2.0 * term };
                }
            }
        }
        FieldKernel::Tabulated { .. } => {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..n {
                let da = path.increment(a);
                for b in 0..n {
                    let db = path.increment(b);
                    let tau = (b as f64 - a as f64).abs() * dt;
                    let w = kernel.w_matrix(&mids[a], &mids[b], tau);
                    for mu in 0..3 {
                        for nu in 0..3 {
                            acc += da[mu] * w[mu][nu] * db[nu];
                        }
                    }
                }
            }
            quad = acc.re;
        }
    }
    let db_db = alpha / 4.0 * quad;
    if db_db < -1e-6 {
        return Err(Error::NegativeAction { value: db_db });
    }
    let value = db_db.max(0.0);
    Ok(EffectiveAction { value, db_db: value, db_ds: 0.0, ds_ds: 0.0 })
}

// ---------------------------------------------------------------------------
// Mode-truncation oracle
// ---------------------------------------------------------------------------

/// Explicit k-mode set for the standard cutoff: radial Gauss-Legendre ×
/// sphere nodes, with polarization bases.
pub struct ModeSet {
    pub k_nodes: Vec<[f64; 3]>,
    pub k_weights: Vec<f64>,
    pub omega: Vec<f64>,
    pub pol: Vec<[[f64; 3]; 2]>,
    pub omega_power: f64,
}

pub fn standard_mode_set(lambda: f64, omega_power: f64, disp: DispersionSpec, m_modes: usize) -> ModeSet {
    let n_k = ((m_modes as f64 / 2.0).cbrt().ceil() as usize).max(3);
    let (ks, kw) = gauss_legendre_on(n_k, 0.0, lambda);
    let (dirs, dw) = sphere_nodes(n_k, 2 * n_k);
    let mut k_nodes = Vec::new();
    let mut k_weights = Vec::new();
    let mut omega = Vec::new();
    let mut pol = Vec::new();
    for (k, wk) in ks.iter().zip(&kw) {
        for (u, wu) in dirs.iter().zip(&dw) {
            k_nodes.push([k * u[0], k * u[1], k * u[2]]);
            k_weights.push(wk * k * k * wu);
            omega.push(disp.omega(*k));
            pol.push(polarization_basis(*u));
        }
    }
    ModeSet { k_nodes, k_weights, omega, pol, omega_power }
}

/// Per-path coefficients of the field pairing: for mode i and polarization
/// j, S = Σ_{ij} √(w_i/2) (re_coef ξ + im_coef η) with ξ, η stationary
/// Ornstein-Uhlenbeck sequences of rate ω_i at the midpoint times.
struct ModeCoefficients {
    /// (re_coef_a, im_coef_a) per time step, flattened per (mode, pol).
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
    omega: Vec<f64>,
    weight: Vec<f64>,
}

fn mode_coefficients(path: &BrownianPath, modes: &ModeSet) -> ModeCoefficients {
    let n = path.grid.n_steps;
    let mids: Vec<[f64; 3]> = (0..n)
        .map(|a| {
            let p = path.position(a);
            let q = path.position(a + 1);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]
        })
        .collect();
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut omega = Vec::new();
    let mut weight = Vec::new();
    for (i, k) in modes.k_nodes.iter().enumerate() {
        let amp = 1.0 / modes.omega[i].powf(modes.omega_power);
        for j in 0..2 {
            let e = modes.pol[i][j];
            let mut rc = Vec::with_capacity(n);
            let mut ic = Vec::with_capacity(n);
            for a in 0..n {
                let phase = k[0] * mids[a][0] + k[1] * mids[a][1] + k[2] * mids[a][2];
                let d = path.increment(a);
                let edb = e[0] * d[0] + e[1] * d[1] + e[2] * d[2];
                // u·ΔB with u = e φ̂/ω^p e^{ik·x̄}
                rc.push(amp * phase.cos() * edb);
                ic.push(amp * phase.sin() * edb);
            }
            re.push(rc);
            im.push(ic);
            omega.push(modes.omega[i]);
            weight.push(modes.k_weights[i]);
        }
    }
    ModeCoefficients { re, im, omega, weight }
}

/// Mode-truncated closed form (α/4)‖K‖² for one path: the Gaussian variance
/// of the pairing computed with the explicit covariance e^{-ω|t̄_a - t̄_b|}.
pub fn mode_action(path: &BrownianPath, modes: &ModeSet, alpha: f64) -> f64 {
    let co = mode_coefficients(path, modes);
    let dt = path.grid.dt();
    let mut var = 0.0;
    for m in 0..co.re.len() {
        let om = co.omega[m];
        let (rc, ic) = (&co.re[m], &co.im[m]);
        let n = rc.len();
        let mut v = 0.0;
        for a in 0..n {
            v += rc[a] * rc[a] + ic[a] * ic[a];
            for b in a + 1..n {
                v += 2.0 * (-om * (b - a) as f64 * dt).exp() * (rc[a] * rc[b] + ic[a] * ic[b]);
            }
        }
        var += co.weight[m] / 2.0 * v;
    }
    // E[e^{i√α S}] = e^{-α Var(S)/2}; Var = (1/2)‖K‖², so α Var/2 = (α/4)‖K‖².
    alpha / 2.0 * var
}

/// Draw the Gaussian field directly on the mode set and average
/// e^{i√α 𝒜(K_t)} empirically; compare with the closed form on the same
/// modes.
pub fn mode_sample_check(
    path: &BrownianPath,
    model: &CutoffModel,
    disp: DispersionSpec,
    alpha: f64,
    m_modes: usize,
    n_field_samples: usize,
    seed: SeedSpec,
) -> (f64, f64, f64) {
    let CutoffModel::StandardPf { lambda, omega_power } = model else {
        panic!("mode oracle implemented for the standard cutoff")
    };
    let modes = standard_mode_set(*lambda, *omega_power, disp, m_modes);
    let closed_form = (-mode_action(path, &modes, alpha)).exp();
    let co = mode_coefficients(path, &modes);
    let dt = path.grid.dt();
    let sqrt_alpha = alpha.sqrt();
    let n_modes = co.re.len();
    let n_steps = path.grid.n_steps;
    let samples: Vec<(f64, f64)> = crate::parallel::indexed_map(n_field_samples, |s| {
        let mut rng = seed.child(0xf1e1d).with_sample(s as u64).rng();
        let mut pairing = 0.0;
        for m in 0..n_modes {
            let om = co.omega[m];
            let decay = (-om * dt).exp();
            let fresh = (1.0 - decay * decay).sqrt();
            let scale = (co.weight[m] / 2.0).sqrt();
            let mut xi: f64 = rng.sample(StandardNormal);
            let mut eta: f64 = rng.sample(StandardNormal);
            for a in 0..n_steps {
                if a > 0 {
                    let gx: f64 = rng.sample(StandardNormal);
                    let gy: f64 = rng.sample(StandardNormal);
                    xi = decay * xi + fresh * gx;
                    eta = decay * eta + fresh * gy;
                }
                pairing += scale * (co.re[m][a] * xi + co.im[m][a] * eta);
            }
        }
        let phase = sqrt_alpha * pairing;
        (phase.cos(), phase.sin())
    });
    let res: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (mean, se) = crate::parallel::mean_stderr(&res);
    let z = if se > 0.0 { (mean - closed_form) / se } else { 0.0 };
    (closed_form, mean, z)
}

// ---------------------------------------------------------------------------
// PSD check and disk cache
// ---------------------------------------------------------------------------

/// Smallest and largest eigenvalue of the 3n × 3n kernel matrix over the
/// path's midpoints.
pub fn kernel_psd_extremes(path: &BrownianPath, kernel: &FieldKernel) -> (f64, f64) {
    let n = path.grid.n_steps;
    let dt = path.grid.dt();
    let mids: Vec<[f64; 3]> = (0..n)
        .map(|a| {
            let p = path.position(a);
            let q = path.position(a + 1);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]
        })
        .collect();
    let mut m = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for a in 0..n {
        for b in 0..n {
            let tau = (b as f64 - a as f64).abs() * dt;
            let w = kernel.w_matrix(&mids[a], &mids[b], tau);
            for mu in 0..3 {
                for nu in 0..3 {
                    m[(3 * a + mu, 3 * b + nu)] = w[mu][nu].re;
                }
            }
        }
    }
    // symmetrize away interpolation asymmetry below 1e-12
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct CacheHeader {
    model: CutoffModel,
    disp: DispersionSpec,
    tab: KernelTabulation,
    version: u32,
}

/// Content hash of the kernel build inputs.
pub fn kernel_cache_key(model: &CutoffModel, disp: DispersionSpec, tab: KernelTabulation) -> String {
    let header = CacheHeader { model: model.clone(), disp, tab, version: 1 };
    let json = serde_json::to_string(&header).expect("serializable header");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    format!("{:x}", h.finalize())
}

/// Build a radial kernel, reusing a disk cache (JSON header + CSV table)
/// keyed by the content hash of the inputs.
pub fn build_kernel_cached(
    model: &CutoffModel,
    disp: DispersionSpec,
    tab: KernelTabulation,
    cache_dir: &Path,
) -> Result<FieldKernel> {
    let CutoffModel::StandardPf { .. } = model else {
        return build_kernel(model, disp, tab);
    };
    let key = kernel_cache_key(model, disp, tab);
    let header_path = cache_dir.join(format!("{key}.json"));
    let csv_path = cache_dir.join(format!("{key}.csv"));
    if header_path.exists() && csv_path.exists() {
        let header: CacheHeader = serde_json::from_str(&std::fs::read_to_string(&header_path)?)?;
        let expect = CacheHeader { model: model.clone(), disp, tab, version: 1 };
        if header == expect {
            let mut a_par = Vec::new();
            let mut a_perp = Vec::new();
            for (ln, line) in std::fs::read_to_string(&csv_path)?.lines().enumerate() {
                if ln == 0 {
                    continue; // header row
                }
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != 4 {
                    return Err(Error::Config(format!("bad cache row {ln} in {csv_path:?}")));
                }
                a_par.push(cols[2].parse::<f64>().map_err(|e| Error::Config(e.to_string()))?);
                a_perp.push(cols[3].parse::<f64>().map_err(|e| Error::Config(e.to_string()))?);
            }
            if a_par.len() == (tab.n_r + 1) * (tab.n_tau + 1) {
                let CutoffModel::StandardPf { lambda, omega_power } = model else { unreachable!() };
                return Ok(FieldKernel::Radial {
                    disp,
                    lambda: *lambda,
                    omega_power: *omega_power,
                    tab,
                    a_par,
                    a_perp,
                });
            }
        }
    }
    let kernel = build_kernel(model, disp, tab)?;
    if let FieldKernel::Radial { a_par, a_perp, .. } = &kernel {
        std::fs::create_dir_all(cache_dir)?;
        let header = CacheHeader { model: model.clone(), disp, tab, version: 1 };
        std::fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        writeln!(f, "r_index,tau_index,a_par,a_perp")?;
        let n_cols = tab.n_tau + 1;
        for ir in 0..=tab.n_r {
            for it in 0..n_cols {
                let idx = ir * n_cols + it;
                writeln!(f, "{ir},{it},{:.17e},{:.17e}", a_par[idx], a_perp[idx])?;
            }
        }
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{sample_path, TimeGrid};

    fn small_tab() -> KernelTabulation {
        KernelTabulation { r_max: 10.0, n_r: 200, tau_max: 2.0, n_tau: 100, k_order: 48 }
    }

    fn test_kernel(m: f64) -> FieldKernel {
        build_kernel(&CutoffModel::standard(1.0), DispersionSpec::new(3, m), small_tab()).unwrap()
    }

    #[test]
    fn build_rejects_missing_cutoff() {
        let bad = CutoffModel::StandardPf { lambda: f64::INFINITY, omega_power: 1.0 };
        assert!(build_kernel(&bad, DispersionSpec::new(3, 1.0), small_tab()).is_err());
        let massless_divergent = CutoffModel::StandardPf { lambda: 1.0, omega_power: 1.5 };
        assert!(build_kernel(&massless_divergent, DispersionSpec::new(3, 0.0), small_tab()).is_err());
    }

    #[test]
    fn quadrature_converged_on_test_set() {
        let disp = DispersionSpec::new(3, 1.0);
        for (r, tau) in [(0.0, 0.0), (1.3, 0.4), (5.0, 1.0), (9.0, 2.0)] {
            let (p64, q64) = radial_profiles_direct(1.0, 1.0, disp, 64, r, tau);
            let (p128, q128) = radial_profiles_direct(1.0, 1.0, disp, 128, r, tau);
            assert!((p64 - p128).abs() <= 1e-6 * p128.abs().max(1e-9), "par at ({r},{tau})");
            assert!((q64 - q128).abs() <= 1e-6 * q128.abs().max(1e-9), "perp at ({r},{tau})");
        }
    }

    #[test]
    fn zero_separation_profile_matches_isotropic_integral() {
        // A_par(0,τ) = A_perp(0,τ) = (8π/3)∫ k² e^{-τω}/ω^{2p} dk
        let k = test_kernel(1.0);
        let (par, perp) = k.profiles_direct(0.0, 0.3);
        assert!((par - perp).abs() < 1e-12 * par.abs());
        let (ks, ws) = gauss_legendre_on(64, 0.0, 1.0);
        let disp = DispersionSpec::new(3, 1.0);
        let oracle: f64 = ks
            .iter()
            .zip(&ws)
            .map(|(kk, w)| {
                let om = disp.omega(*kk);
                w * kk * kk * (-0.3 * om).exp() / (om * om)
            })
            .sum::<f64>()
            * 8.0
            * std::f64::consts::PI
            / 3.0;
        assert!((par - oracle).abs() < 1e-10 * oracle, "{par} vs {oracle}");
    }

    #[test]
    fn translation_invariance_and_hermitian_symmetry() {
        let k = test_kernel(1.0);
        let x = [0.3, -0.2, 0.7];
        let y = [1.1, 0.4, -0.5];
        let shift = [2.0, -1.0, 0.5];
        let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let w1 = k.w_matrix(&x, &y, 0.4);
        let w2 = k.w_matrix(&xs, &ys, 0.4);
        for mu in 0..3 {
            for nu in 0..3 {
                assert!((w1[mu][nu] - w2[mu][nu]).norm() < 1e-12);
            }
        }
        let wt = k.w_matrix(&y, &x, 0.4);
        for mu in 0..3 {
            for nu in 0..3 {
                assert!((w1[mu][nu] - wt[nu][mu].conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn massive_kernel_decays_at_least_like_exp_m_tau() {
        let k = test_kernel(1.0);
        let (w0, _) = k.profiles_direct(0.0, 0.0);
        for tau in [0.5, 1.0, 2.0] {
            let (wt, _) = k.profiles_direct(0.0, tau);
            assert!(wt.abs() <= w0 * (-tau).exp() * (1.0 + 1e-9), "τ = {tau}");
        }
    }

    #[test]
    fn kernel_mass_monotone() {
        let k0 = test_kernel(0.0);
        let k1 = test_kernel(1.0);
        for (r, tau) in [(0.0, 0.0), (0.7, 0.2), (2.0, 1.0)] {
            let a0 = k0.profiles_direct(r, tau);
            let a1 = k1.profiles_direct(r, tau);
            assert!(a1.0.abs() <= a0.0.abs() + 1e-12, "par at ({r},{tau})");
            assert!(a1.1.abs() <= a0.1.abs() + 1e-12, "perp at ({r},{tau})");
        }
    }

    #[test]
    fn interpolation_close_to_direct() {
        let k = test_kernel(1.0);
        for (r, tau) in [(0.31, 0.07), (1.77, 0.93), (4.2, 1.5)] {
            let a = k.profiles(r, tau);
            let b = k.profiles_direct(r, tau);
            let scale = b.0.abs().max(b.1.abs()).max(1e-6);
            assert!((a.0 - b.0).abs() < 2e-3 * scale, "par at ({r},{tau}): {a:?} vs {b:?}");
            assert!((a.1 - b.1).abs() < 2e-3 * scale, "perp at ({r},{tau})");
        }
    }

    #[test]
    fn action_zero_alpha_and_linearity() {
        let k = test_kernel(1.0);
        let path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 32), SeedSpec::new(3, 0));
        assert_eq!(effective_action(&path, &k, 0.0).unwrap().value, 0.0);
        let a1 = effective_action(&path, &k, 0.7).unwrap().value;
        let a2 = effective_action(&path, &k, 1.4).unwrap().value;
        assert!(a1 > 0.0);
        assert_eq!(a2, 2.0 * a1, "linearity in α must be exact");
    }

    #[test]
    fn frozen_path_action_is_pure_divergence_block() {
        let k = test_kernel(1.0);
        let mut path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 16), SeedSpec::new(4, 0));
        for v in path.increments.iter_mut() {
            *v = 0.0;
        }
        for v in path.positions.iter_mut() {
            *v = 0.0;
        }
        let act = effective_action(&path, &k, 1.0).unwrap();
        assert_eq!(act.db_db, 0.0);
        assert_eq!(act.value, act.ds_ds + act.db_ds);
    }

    #[test]
    fn kernel_matrix_is_psd_on_random_paths() {
        let k = test_kernel(1.0);
        for s in 0..3u64 {
            let path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 48), SeedSpec::new(20 + s, 0));
            let (lo, hi) = kernel_psd_extremes(&path, &k);
            assert!(lo >= -1e-8 * hi, "eigenvalues [{lo}, {hi}] at seed {s}");
        }
    }

    #[test]
    fn mode_check_alpha_zero_exact() {
        let model = CutoffModel::standard(1.0);
        let path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 8), SeedSpec::new(5, 0));
        let (cf, sm, z) = mode_sample_check(
            &path,
            &model,
            DispersionSpec::new(3, 1.0),
            0.0,
            128,
            64,
            SeedSpec::new(6, 0),
        );
        assert_eq!(cf, 1.0);
        assert_eq!(sm, 1.0);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn mode_check_matches_closed_form() {
        let model = CutoffModel::standard(1.0);
        let path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 8), SeedSpec::new(7, 0));
        let (cf, sm, z) = mode_sample_check(
            &path,
            &model,
            DispersionSpec::new(3, 1.0),
            1.0,
            250,
            4_000,
            SeedSpec::new(8, 0),
        );
        assert!(z.abs() < 3.0, "closed {cf}, sampled {sm}, z = {z}");
        // imaginary part averages to zero by the symmetry of the law; cheap
        // surrogate: the sampled mean must stay within [0, 1].
        assert!((0.0..=1.0).contains(&sm));
    }

    #[test]
    fn action_agrees_with_mode_truncation() {
        // Radial-quadrature action vs the explicit-mode closed form; pure
        // quadrature comparison, no sampling noise.
        let k = test_kernel(1.0);
        let modes = standard_mode_set(1.0, 1.0, DispersionSpec::new(3, 1.0), 3000);
        for s in 0..5u64 {
            let path = sample_path(&[0.0; 3], TimeGrid::new(1.0, 8), SeedSpec::new(40 + s, 0));
            let a = effective_action(&path, &k, 1.0).unwrap().value;
            let b = mode_action(&path, &modes, 1.0);
            assert!((a - b).abs() < 2e-2 * b.max(1e-9), "seed {s}: {a} vs {b}");
        }
    }

    #[test]
    fn second_moment_bound() {
        // E[‖K_t‖²] ≤ ∫₀ᵗ E[2Σ‖ρ‖² + ½‖∂·ρ‖²] ds = 4t ∫ φ̂²/ω^{2p} dk
        // for the transverse cutoff (divergence term = 0).
        let k = test_kernel(1.0);
        let t = 1.0;
        let vals: Vec<f64> = (0..400u64)
            .map(|i| {
                let path = sample_path(&[0.0; 3], TimeGrid::new(t, 32), SeedSpec::new(90, i));
                effective_action(&path, &k, 1.0).unwrap().value / 0.25
            })
            .collect();
        let (mean, se) = crate::parallel::mean_stderr(&vals);
        let (ks, ws) = gauss_legendre_on(64, 0.0, 1.0);
        let disp = DispersionSpec::new(3, 1.0);
        let rhs: f64 = 4.0
            * t
            * 4.0
            * std::f64::consts::PI
            * ks.iter()
                .zip(&ws)
                .map(|(kk, w)| {
                    let om = disp.omega(*kk);
                    w * kk * kk / (om * om)
                })
                .sum::<f64>();
        assert!(mean + 3.0 * se <= rhs, "E‖K‖² = {mean}±{se} vs bound {rhs}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = std::env::temp_dir().join("pflab-kernel-cache-test");
        let _ = std::fs::remove_dir_all(&dir);
        let model = CutoffModel::standard(1.0);
        let disp = DispersionSpec::new(3, 1.0);
        let tab = KernelTabulation { r_max: 4.0, n_r: 40, tau_max: 1.0, n_tau: 20, k_order: 32 };
        let built = build_kernel_cached(&model, disp, tab, &dir).unwrap();
        let loaded = build_kernel_cached(&model, disp, tab, &dir).unwrap();
        match (&built, &loaded) {
            (
                FieldKernel::Radial { a_par: p1, a_perp: q1, .. },
                FieldKernel::Radial { a_par: p2, a_perp: q2, .. },
            ) => {
                for (a, b) in p1.iter().zip(p2).chain(q1.iter().zip(q2)) {
                    assert!((a - b).abs() < 1e-15 * a.abs().max(1e-300));
                }
            }
            _ => panic!("expected radial kernels"),
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn plane_wave_tables_reduce_to_standard() {
        // Tabulated kernel with Ψ = plane wave must match the radial kernel.
        let disp = DispersionSpec::new(3, 1.0);
        let modes = standard_mode_set(1.0, 1.0, disp, 2000);
        let x_nodes = vec![[0.0, 0.0, 0.0], [0.4, -0.3, 0.2], [1.0, 0.5, -0.7]];
        let nk = modes.k_nodes.len();
        let mut psi = Vec::with_capacity(nk * x_nodes.len());
        let mut grad = Vec::with_capacity(nk * x_nodes.len());
        for k in &modes.k_nodes {
            for x in &x_nodes {
                let phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
                let v = Complex64::new(phase.cos(), phase.sin());
                psi.push(v);
                grad.push([
                    Complex64::new(0.0, k[0]) * v,
                    Complex64::new(0.0, k[1]) * v,
                    Complex64::new(0.0, k[2]) * v,
                ]);
            }
        }
        let tables = CutoffTables {
            k_nodes: modes.k_nodes.clone(),
            k_weights: modes.k_weights.clone(),
            omega: modes.omega.clone(),
            phi_hat: vec![1.0; nk],
            pol: modes.pol.clone(),
            x_nodes: x_nodes.clone(),
            psi,
            grad_psi: grad,
            omega_power: 1.0,
        };
        let tk = build_kernel(&CutoffModel::VariableMassTable(tables), disp, small_tab()).unwrap();
        let rk = test_kernel(1.0);
        for (x, y, tau) in [
            (x_nodes[0], x_nodes[1], 0.0),
            (x_nodes[0], x_nodes[2], 0.5),
            (x_nodes[1], x_nodes[2], 0.2),
        ] {
            let wt = tk.w_matrix(&x, &y, tau);
            let wr = rk.w_matrix(&x, &y, tau);
            for mu in 0..3 {
                for nu in 0..3 {
                    assert!(
                        (wt[mu][nu] - wr[mu][nu]).norm() < 5e-3 * wr[0][0].norm().max(1e-3),
                        "W[{mu}][{nu}] at τ={tau}: {} vs {}",
                        wt[mu][nu],
                        wr[mu][nu]
                    );
                }
            }
        }
    }

    #[test]
    fn polarization_vectors_orthonormal_transverse() {
        for khat in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.6, 0.48, 0.64]] {
            let [e1, e2] = polarization_basis(khat);
            let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            assert!((dot(&e1, &e1) - 1.0).abs() < 1e-12);
            assert!((dot(&e2, &e2) - 1.0).abs() < 1e-12);
            assert!(dot(&e1, &e2).abs() < 1e-12);
            assert!(dot(&e1, &khat).abs() < 1e-12);
            assert!(dot(&e2, &khat).abs() < 1e-12);
        }
    }
}
