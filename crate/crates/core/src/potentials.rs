//! External potentials: evaluation, numerical Kato-class classification,
//! Khasminskii constants and ℰ-class decompositions.

use crate::error::{Error, Result};
use crate::parallel::{indexed_map, mean_stderr};
use crate::paths::{potential_partial_integrals, sample_path, TimeGrid};
use crate::quad::{gauss_legendre_on, kato_lambda, sphere_nodes};
use crate::rng::SeedSpec;
use serde::{Deserialize, Serialize};

/// Declared integrability class of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredClass {
    Bounded,
    /// L^p with the dimension-dependent legal range: p = 1 (d = 1),
    /// p > d/2 (d ≥ 2).
    Lp { p: f64 },
    L1locPositive,
    KatoCandidate,
}

/// Closed-form radial potential families plus tabulated profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PotentialForm {
    Constant { value: f64 },
    /// V(x) = Σ_j c_j |x|^j
    RadialPolynomial { coefficients: Vec<f64> },
    /// V(x) = -a/|x|^b on r_min ≤ |x| ≤ r_max, 0 outside.
    CoulombLike {
        a: f64,
        b: f64,
        #[serde(default)]
        r_min: f64,
        #[serde(default = "infty")]
        r_max: f64,
    },
    /// V(x) = -depth · exp(-|x|²/width²)
    GaussianWell { depth: f64, width: f64 },
    /// V(x) = lambda · ln(1 + |x|²)
    LogWell { lambda: f64 },
    /// Radial linear interpolation; constant extrapolation beyond the table.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
    Scaled { factor: f64, term: Box<PotentialForm> },
    Sum { terms: Vec<PotentialForm> },
}

fn infty() -> f64 {
    f64::INFINITY
}

impl PotentialForm {
    pub fn eval_radial(&self, r: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::RadialPolynomial { coefficients } => {
                let mut acc = 0.0;
                for c in coefficients.iter().rev() {
                    acc = acc * r + c;
                }
                acc
            }
            Self::CoulombLike { a, b, r_min, r_max } => {
                if r >= *r_min && r <= *r_max {
                    -a / r.powf(*b)
                } else {
                    0.0
                }
            }
            Self::GaussianWell { depth, width } => -depth * (-(r * r) / (width * width)).exp(),
            Self::LogWell { lambda } => lambda * (1.0 + r * r).ln(),
            Self::Tabulated { radii, values } => {
                if radii.is_empty() {
                    return 0.0;
                }
                if r <= radii[0] {
                    return values[0];
                }
                if r >= *radii.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = radii.partition_point(|&t| t < r);
                let (r0, r1) = (radii[i - 1], radii[i]);
                let f = (r - r0) / (r1 - r0);
                values[i - 1] * (1.0 - f) + values[i] * f
            }
            Self::Scaled { factor, term } => factor * term.eval_radial(r),
            Self::Sum { terms } => terms.iter().map(|t| t.eval_radial(r)).sum(),
        }
    }

    /// True if the form has an r = 0 singularity.
    fn singular_at_origin(&self) -> bool {
        match self {
            Self::CoulombLike { a, b, r_min, .. } => *a != 0.0 && *b > 0.0 && *r_min == 0.0,
            Self::Scaled { term, .. } => term.singular_at_origin(),
            Self::Sum { terms } => terms.iter().any(|t| t.singular_at_origin()),
            _ => false,
        }
    }
}

/// An evaluable external potential with singularity metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub form: PotentialForm,
    pub dim: usize,
    #[serde(default)]
    pub singular_points: Vec<Vec<f64>>,
    pub declared_class: DeclaredClass,
}

impl PotentialSpec {
    pub fn new(form: PotentialForm, dim: usize) -> Self {
        let singular_points =
            if form.singular_at_origin() { vec![vec![0.0; dim]] } else { vec![] };
        Self { form, dim, singular_points, declared_class: DeclaredClass::KatoCandidate }
    }

    pub fn with_class(mut self, class: DeclaredClass) -> Self {
        if let DeclaredClass::Lp { p } = class {
            assert!(legal_lp(p, self.dim), "p = {p} outside the legal range for d = {}", self.dim);
        }
        self.declared_class = class;
        self
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Self::new(PotentialForm::Constant { value }, dim).with_class(DeclaredClass::Bounded)
    }

    pub fn coulomb_like(a: f64, b: f64, dim: usize) -> Self {
        Self::new(
            PotentialForm::CoulombLike { a, b, r_min: 0.0, r_max: f64::INFINITY },
            dim,
        )
    }

    /// V(x) = ½ c |x|²
    pub fn harmonic(c: f64, dim: usize) -> Self {
        Self::new(
            PotentialForm::RadialPolynomial { coefficients: vec![0.0, 0.0, 0.5 * c] },
            dim,
        )
        .with_class(DeclaredClass::L1locPositive)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.form.eval_radial(r)
    }

    pub fn eval_radial(&self, r: f64) -> f64 {
        self.form.eval_radial(r)
    }

    /// Evaluation along a sampled path. A position within 1e-12 of a
    /// declared singular point is shifted by √dt (the path displacement
    /// scale) along the first axis; the continuum event has probability
    /// zero and the shift stays below the discretization error.
    pub fn evaluate_on_path(&self, x: &[f64], dt: f64) -> Result<f64> {
        let hit = self.singular_points.iter().any(|s| {
            s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 1e-12
        });
        let val = if hit {
            let mut shifted = x.to_vec();
            shifted[0] += dt.sqrt();
            self.evaluate(&shifted)
        } else {
            self.evaluate(x)
        };
        if val.is_finite() {
            Ok(val)
        } else {
            Err(Error::NonFinite { context: format!("potential at {x:?}") })
        }
    }

    /// ‖V‖_p by radial quadrature on [0, r_max], with refinement check.
    pub fn radial_lp_norm(&self, p: f64, r_max: f64) -> Result<f64> {
        let d = self.dim;
        let area = surface_area(d);
        let integrand = |r: f64| self.form.eval_radial(r).abs().powf(p) * r.powi(d as i32 - 1);
        let mut prev = f64::NAN;
        for n in [256usize, 512, 1024, 2048] {
            let (xs, ws) = gauss_legendre_on(n, 0.0, r_max);
            let val: f64 = xs.iter().zip(&ws).map(|(r, w)| w * integrand(*r)).sum();
            if prev.is_finite() && (val - prev).abs() <= 1e-6 * val.abs().max(1e-12) {
                return Ok((area * val).powf(1.0 / p));
            }
            prev = val;
        }
        Err(Error::NotInE {
            context: format!("L^{p} radial quadrature did not converge (last {prev})"),
        })
    }
}

pub fn legal_lp(p: f64, d: usize) -> bool {
    if d == 1 {
        p == 1.0
    } else {
        p > d as f64 / 2.0
    }
}

/// Surface area of the unit sphere S^{d-1}.
pub fn surface_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            let df = d as f64;
            2.0 * std::f64::consts::PI.powf(df / 2.0) / gamma_fn(df / 2.0)
        }
    }
}

fn gamma_fn(x: f64) -> f64 {
    // Lanczos, g = 7
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, &g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

// ---------------------------------------------------------------------------
// Kato ball norms
// ---------------------------------------------------------------------------

/// sup over `x_grid` of the quadrature of ∫_{B_r(x)} |λ(x-y) V(y)| dy.
///
/// The quadrature is radial-around-x (Gauss-Legendre in the radius, a
/// direction set on the sphere). Estimates are refined by doubling the
/// radial order; a divergent integrand shows up as estimates that keep
/// growing, in which case the largest estimate is returned so that the
/// r-scan exposes the divergence.
pub fn kato_ball_norm(v: &PotentialSpec, r: f64, x_grid: &[Vec<f64>]) -> Result<f64> {
    assert!(r > 0.0);
    let d = v.dim;
    let dirs: Vec<(Vec<f64>, f64)> = direction_set(d);
    let mut best: f64 = 0.0;
    for x in x_grid {
        let mut prev = f64::NAN;
        let mut val = 0.0;
        for n in [64usize, 128, 256, 512] {
            let (ss, ws) = gauss_legendre_on(n, 0.0, r);
            val = 0.0;
            for (s, w) in ss.iter().zip(&ws) {
                let lam = kato_lambda(d, *s).abs();
                let shell: f64 = dirs
                    .iter()
                    .map(|(u, du)| {
                        let mut y = x.clone();
                        for i in 0..d {
                            y[i] += s * u[i];
                        }
                        du * v.evaluate(&y).abs()
                    })
                    .sum();
                val += w * lam * s.powi(d as i32 - 1) * shell;
            }
            if prev.is_finite() {
                if (val - prev).abs() <= 1e-4 * val.abs().max(1e-12) {
                    break;
                }
                if val < prev * (1.0 - 1e-6) {
                    // shrinking non-convergent estimates: genuine quadrature trouble
                    return Err(Error::QuadratureFailure {
                        context: format!("ball norm at x = {x:?}, r = {r}"),
                        a: prev,
                        b: val,
                    });
                }
            }
            prev = val;
        }
        best = best.max(val);
    }
    Ok(best)
}

fn direction_set(d: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let n = 64;
            let w = 2.0 * std::f64::consts::PI / n as f64;
            (0..n)
                .map(|i| {
                    let phi = w * (i as f64 + 0.5);
                    (vec![phi.cos(), phi.sin()], w)
                })
                .collect()
        }
        3 => {
            let (dirs, ws) = sphere_nodes(16, 32);
            dirs.into_iter().map(|u| u.to_vec()).zip(ws).collect()
        }
        _ => panic!("direction set only implemented for d <= 3"),
    }
}

// ---------------------------------------------------------------------------
// α_t and Khasminskii
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of sup_x E^x[∫₀ᵗ |V(B_s)| ds] for each t in `ts`
/// (nondecreasing). Returns one `(value, stderr)` per t, the sup taken over
/// `x_grid` pointwise in t.
pub fn alpha_curve(
    v: &PotentialSpec,
    ts: &[f64],
    x_grid: &[Vec<f64>],
    n_samples: usize,
    seed: SeedSpec,
) -> Result<Vec<(f64, f64)>> {
    let t_max = *ts.last().expect("nonempty t list");
    let n_steps = ((t_max * 256.0).ceil() as usize).clamp(32, 1024);
    let grid = TimeGrid::new(t_max, n_steps);
    let mut sup: Vec<(f64, f64)> = vec![(f64::NEG_INFINITY, 0.0); ts.len()];
    for (gi, x0) in x_grid.iter().enumerate() {
        let gseed = seed.child(gi as u64 + 1);
        let rows: Vec<Result<Vec<f64>>> = indexed_map(n_samples, |i| {
            let path = sample_path(x0, grid, gseed.with_sample(i as u64));
            potential_partial_integrals(&path, v, ts, true)
        });
        let mut per_t: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); ts.len()];
        for row in rows {
            let row = row?;
            for (j, val) in row.into_iter().enumerate() {
                per_t[j].push(val);
            }
        }
        for (j, vals) in per_t.iter().enumerate() {
            let (m, se) = mean_stderr(vals);
            if m > sup[j].0 {
                sup[j] = (m, se);
            }
        }
    }
    Ok(sup)
}

/// Single-t wrapper around [`alpha_curve`].
pub fn alpha_t(
    v: &PotentialSpec,
    t: f64,
    x_grid: &[Vec<f64>],
    n_samples: usize,
    seed: SeedSpec,
) -> Result<f64> {
    assert!(t > 0.0);
    Ok(alpha_curve(v, &[t], x_grid, n_samples, seed)?[0].0)
}

/// Khasminskii constants (γ, β) and the iterated bound γ^{⌊t/t*⌋+1}.
pub fn khasminskii_bound(t_star: f64, alpha_tstar: f64, t: f64) -> Result<(f64, f64, f64)> {
    assert!(t_star > 0.0 && t >= 0.0);
    if alpha_tstar >= 1.0 {
        return Err(Error::AlphaTooLarge { alpha: alpha_tstar, t_star });
    }
    let gamma = 1.0 / (1.0 - alpha_tstar);
    let beta = gamma.ln() / t_star;
    let bound = gamma.powi((t / t_star).floor() as i32 + 1);
    Ok((gamma, beta, bound))
}

/// Constructive upper estimate of the Khasminskii rate β for an L^p
/// potential, linear in ‖V‖_p.
///
/// Uses β ≤ (2/t₀)·α_{t₀} with α_{t₀} ≤ C_{t₀}(ε)·‖V‖_p at t₀ = 1, ε = ½,
/// where C_t(ε) collects the Gaussian far-field term and the
/// resolvent-kernel near-field term of the ε-split.
pub fn beta_lp_estimate(v: &PotentialSpec) -> Result<f64> {
    let DeclaredClass::Lp { p } = v.declared_class else {
        return Err(Error::Config("beta_lp_estimate requires declared_class = Lp".into()));
    };
    let d = v.dim;
    // L^p presets are compactly supported or Gaussian-decaying; 40 covers
    // every tail to double precision.
    let norm = v.radial_lp_norm(p, 40.0)?;
    Ok(beta_lp_coefficient(d, p) * norm)
}

/// The d- and p-dependent coefficient multiplying ‖V‖_p in
/// [`beta_lp_estimate`]; exposed so tests can check linearity directly.
pub fn beta_lp_coefficient(d: usize, p: f64) -> f64 {
    let t0 = 1.0;
    let eps = 0.5;
    if d == 1 {
        // α_t ≤ ∫₀ᵗ (2πs)^{-1/2} ds ‖V‖₁ = √(2t/π) ‖V‖₁
        return (2.0 / t0) * (2.0 * t0 / std::f64::consts::PI).sqrt();
    }
    let q = p / (p - 1.0);
    let df = d as f64;
    // far field: t (2π)^{-d/2} (∫ e^{-q|y|²/2} dy)^{1/q}
    let gauss = (2.0 * std::f64::consts::PI / q).powf(df / 2.0);
    let far = t0 * (2.0 * std::f64::consts::PI).powf(-df / 2.0) * gauss.powf(1.0 / q);
    // near field: e^{t} C_f (∫_{|z|<ε} λ(z)^q dz)^{1/q}
    let c_f = resolvent_kernel_constant(d);
    let lam_q = lambda_q_ball(d, q, eps);
    let near = t0.exp() * c_f * lam_q.powf(1.0 / q);
    (2.0 / t0) * (far + near)
}

/// C with |kernel of (p²/2+1)^{-1}|(z) ≤ C λ(z) for |z| ≤ ½.
fn resolvent_kernel_constant(d: usize) -> f64 {
    match d {
        2 => 1.0 / std::f64::consts::PI,
        _ => 2.0 / ((d as f64 - 2.0) * surface_area(d)),
    }
}

/// ∫_{|z|<ε} λ(z)^q dz.
fn lambda_q_ball(d: usize, q: f64, eps: f64) -> f64 {
    let area = surface_area(d);
    if d == 2 {
        let (xs, ws) = gauss_legendre_on(512, 0.0, eps);
        area * xs.iter().zip(&ws).map(|(s, w)| w * (-s.ln()).powf(q) * s).sum::<f64>()
    } else {
        let expo = (2.0 - d as f64) * q + d as f64;
        assert!(expo > 0.0, "λ^q not integrable: q outside legal range");
        area * eps.powf(expo) / expo
    }
}

// ---------------------------------------------------------------------------
// ℰ-class decomposition
// ---------------------------------------------------------------------------

/// V = W + U with W locally integrable and bounded below, U ≤ 0 in L^p.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EDecomposition {
    pub w: PotentialSpec,
    pub u: PotentialSpec,
    pub w_inf: f64,
    pub p: f64,
    pub u_p_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DecompositionHints {
    /// Radius of the ball around each singular point absorbed into U.
    pub u_radius: f64,
    pub p: f64,
    /// Apply the neighborhood trick so that W_∞ < Σ when possible.
    pub ensure_w_inf_lt_sigma: bool,
    /// Radius of the radial scan used for inf W.
    pub scan_radius: f64,
}

impl Default for DecompositionHints {
    fn default() -> Self {
        Self { u_radius: 1.0, p: 2.0, ensure_w_inf_lt_sigma: false, scan_radius: 30.0 }
    }
}

/// Split V into W + U ∈ ℰ by the hint rule: U collects the negative
/// singular spikes near declared singular points, W the remainder.
pub fn decompose_e(v: &PotentialSpec, hints: DecompositionHints) -> Result<EDecomposition> {
    assert!(legal_lp(hints.p, v.dim), "hint p outside legal range");
    let (w_terms, u_terms) = split_terms(&v.form, hints.u_radius);
    let w_form = match w_terms.len() {
        0 => PotentialForm::Constant { value: 0.0 },
        1 => w_terms.into_iter().next().unwrap(),
        _ => PotentialForm::Sum { terms: w_terms },
    };
    let u_form = match u_terms.len() {
        0 => PotentialForm::Constant { value: 0.0 },
        1 => u_terms.into_iter().next().unwrap(),
        _ => PotentialForm::Sum { terms: u_terms },
    };
    let w = PotentialSpec::new(w_form, v.dim).with_class(DeclaredClass::L1locPositive);
    let u = PotentialSpec::new(u_form, v.dim).with_class(DeclaredClass::Lp { p: hints.p });
    // U must be ≤ 0 and in L^p.
    let u_p_norm = if matches!(u.form, PotentialForm::Constant { value } if value == 0.0) {
        0.0
    } else {
        u.radial_lp_norm(hints.p, hints.u_radius.max(1.0) * 2.0)?
    };
    for i in 0..200 {
        let r = hints.u_radius * (i as f64 + 0.5) / 200.0;
        if u.eval_radial(r) > 1e-12 {
            return Err(Error::NotInE { context: format!("U > 0 at r = {r}") });
        }
    }
    let w_inf = radial_inf(&w, hints.scan_radius);
    if !w_inf.is_finite() {
        return Err(Error::NotInE { context: "W unbounded below on scan grid".into() });
    }
    let mut decomp = EDecomposition { w, u, w_inf, p: hints.p, u_p_norm };
    if hints.ensure_w_inf_lt_sigma {
        let sig = sigma_liminf(&decomp, &[hints.scan_radius / 2.0, hints.scan_radius]);
        if decomp.w_inf >= sig.sigma && !sig.diverging {
            // Fold the U spike near the global minimizer of V back into W so
            // that W dips below the asymptotic floor there.
            let (w2, u2) = (
                PotentialForm::Sum {
                    terms: vec![decomp.w.form.clone(), decomp.u.form.clone()],
                },
                PotentialForm::Constant { value: 0.0 },
            );
            let w = PotentialSpec::new(w2, v.dim).with_class(DeclaredClass::L1locPositive);
            let u = PotentialSpec::new(u2, v.dim).with_class(DeclaredClass::Lp { p: hints.p });
            let w_inf = radial_inf(&w, hints.scan_radius);
            if w_inf.is_finite() {
                decomp = EDecomposition { w, u, w_inf, p: hints.p, u_p_norm: 0.0 };
            }
        }
    }
    Ok(decomp)
}

fn split_terms(form: &PotentialForm, u_radius: f64) -> (Vec<PotentialForm>, Vec<PotentialForm>) {
    match form {
        PotentialForm::Sum { terms } => {
            let mut ws = Vec::new();
            let mut us = Vec::new();
            for t in terms {
                let (w, u) = split_terms(t, u_radius);
                ws.extend(w);
                us.extend(u);
            }
            (ws, us)
        }
        PotentialForm::CoulombLike { a, b, r_min, r_max } if form.singular_at_origin() => {
            let cut = u_radius.min(*r_max);
            let u = PotentialForm::CoulombLike { a: *a, b: *b, r_min: *r_min, r_max: cut };
            let w = PotentialForm::CoulombLike { a: *a, b: *b, r_min: cut, r_max: *r_max };
            (vec![w], vec![u])
        }
        other => (vec![other.clone()], vec![]),
    }
}

fn radial_inf(v: &PotentialSpec, r_max: f64) -> f64 {
    let n = 4000;
    (0..=n)
        .map(|i| v.eval_radial(r_max * i as f64 / n as f64))
        .fold(f64::INFINITY, f64::min)
}

/// W_a(x) = inf of W over a grid of the open ball B_a(x).
pub fn w_a(decomp: &EDecomposition, x: &[f64], a: f64, grid_spacing: f64) -> f64 {
    assert!(a > 0.0);
    let d = decomp.w.dim;
    let mut best = decomp.w.evaluate(x);
    let dirs = direction_set(d);
    let n_r = ((a / grid_spacing).ceil() as usize).max(2);
    for j in 1..n_r {
        let s = a * j as f64 / n_r as f64;
        for (u, _) in &dirs {
            let mut y = x.to_vec();
            for i in 0..d {
                y[i] += s * u[i];
            }
            best = best.min(decomp.w.evaluate(&y));
        }
    }
    best
}

/// Shell-inf estimate of Σ = liminf_{|x|→∞} W(x).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaEstimate {
    /// (R, inf over the shell |x| = R), in the order of `r_list`.
    pub shell_infs: Vec<(f64, f64)>,
    /// inf over the largest shell.
    pub sigma: f64,
    /// Set when the shell sequence increases without visible bound
    /// (Σ = +∞ flag).
    pub diverging: bool,
}

pub fn sigma_liminf(decomp: &EDecomposition, r_list: &[f64]) -> SigmaEstimate {
    let dirs = direction_set(decomp.w.dim);
    let shell_infs: Vec<(f64, f64)> = r_list
        .iter()
        .map(|&r| {
            let inf = dirs
                .iter()
                .map(|(u, _)| {
                    let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                    decomp.w.evaluate(&x)
                })
                .fold(f64::INFINITY, f64::min);
            (r, inf)
        })
        .collect();
    let sigma = shell_infs.last().map(|t| t.1).unwrap_or(f64::NAN);
    let monotone = shell_infs.windows(2).all(|w| w[1].1 > w[0].1);
    let diverging = monotone
        && shell_infs.len() >= 2
        && sigma - shell_infs[0].1 > 1.0
        && sigma - shell_infs[shell_infs.len() - 2].1 > 0.1;
    SigmaEstimate { shell_infs, sigma, diverging }
}

// ---------------------------------------------------------------------------
// Kato classification report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KatoVerdict {
    Kato,
    NotKato,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KatoReport {
    pub radii: Vec<f64>,
    pub ball_norms: Vec<f64>,
    pub alpha_curve: Vec<(f64, f64)>,
    pub verdict: KatoVerdict,
    /// (ball-norm decay factor per radius halving, α target at smallest t)
    pub thresholds: (f64, f64),
    pub seed: SeedSpec,
}

/// Run both Kato criteria: ball norms over a decreasing radius list and the
/// Brownian time-average curve α_t over a decreasing t list.
///
/// Verdict thresholds: "kato" requires the ball norms to decrease by a
/// factor ≥ 1.5 per radius halving and α_t to decrease monotonically to
/// below 0.5 at the smallest t (for a borderline Coulomb in d = 3, theory
/// gives α_t = 2√(2t/π) ≈ 0.36 at t = 0.05). d = 1 only requires
/// finiteness of the sup.
pub fn kato_classify(
    v: &PotentialSpec,
    radii: &[f64],
    ts: &[f64],
    x_grid: &[Vec<f64>],
    n_samples: usize,
    seed: SeedSpec,
) -> Result<KatoReport> {
    let decay_factor = 1.5;
    let alpha_target = 0.5;
    let mut ball_norms = Vec::with_capacity(radii.len());
    for &r in radii {
        ball_norms.push(kato_ball_norm(v, r, x_grid)?);
    }
    let mut ts_sorted = ts.to_vec();
    ts_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let curve = alpha_curve(v, &ts_sorted, x_grid, n_samples, seed)?;
    let alpha_pairs: Vec<(f64, f64)> =
        ts_sorted.iter().copied().zip(curve.iter().map(|c| c.0)).collect();

    let all_zero = ball_norms.iter().all(|b| b.abs() < 1e-10);
    let finite = ball_norms.iter().all(|b| b.is_finite());
    let verdict = if v.dim == 1 {
        // only finiteness of the sup, per the two-branch criterion
        if finite {
            KatoVerdict::Kato
        } else {
            KatoVerdict::NotKato
        }
    } else if all_zero {
        KatoVerdict::Kato
    } else {
        let ball_ok = ball_norms.windows(2).all(|w| {
            // radii decreasing; require each halving to shrink the norm
            w[0] > 0.0 && w[0] / w[1].max(1e-300) >= decay_factor
        });
        let alpha_monotone = alpha_pairs.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9);
        let alpha_small = alpha_pairs.first().map(|p| p.1 < alpha_target).unwrap_or(false);
        if ball_ok && alpha_monotone && alpha_small {
            KatoVerdict::Kato
        } else if !ball_ok {
            KatoVerdict::NotKato
        } else {
            KatoVerdict::Inconclusive
        }
    };
    Ok(KatoReport {
        radii: radii.to_vec(),
        ball_norms,
        alpha_curve: alpha_pairs,
        verdict,
        thresholds: (decay_factor, alpha_target),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin_grid(d: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; d]]
    }

    #[test]
    fn lambda_kernel_consistency() {
        // V ≡ 1, d = 3: ∫_{B_r}|y|^{-1} dy = 2π r², 1e-3 relative.
        let v = PotentialSpec::constant(1.0, 3);
        for r in [0.1, 0.5, 1.0] {
            let got = kato_ball_norm(&v, r, &origin_grid(3)).unwrap();
            let exact = 2.0 * std::f64::consts::PI * r * r;
            assert!((got - exact).abs() < 1e-3 * exact, "r = {r}: {got} vs {exact}");
        }
    }

    #[test]
    fn zero_potential_ball_norms_vanish() {
        let v = PotentialSpec::constant(0.0, 3);
        assert_eq!(kato_ball_norm(&v, 0.3, &origin_grid(3)).unwrap(), 0.0);
    }

    #[test]
    fn coulomb_ball_norms_decrease() {
        // -1/|x| in d = 3: positive, decreasing, heading to 0.
        let v = PotentialSpec::coulomb_like(1.0, 1.0, 3);
        let radii = [0.1, 0.05, 0.025];
        let norms: Vec<f64> =
            radii.iter().map(|&r| kato_ball_norm(&v, r, &origin_grid(3)).unwrap()).collect();
        assert!(norms[0] > 0.0);
        assert!(norms[0] / norms[1] >= 1.5 && norms[1] / norms[2] >= 1.5, "{norms:?}");
        // exact: ∫_{B_r} |y|^{-1}·|y|^{-1} dy = 4π r
        let exact = 4.0 * std::f64::consts::PI * 0.1;
        assert!((norms[0] - exact).abs() < 1e-2 * exact);
    }

    #[test]
    fn supercritical_coulomb_ball_norms_do_not_vanish() {
        // -1/|x|^{2.5}: radial integrand s^{-1.5} diverges; norms stay large
        // as r shrinks instead of heading to 0.
        let v = PotentialSpec::coulomb_like(1.0, 2.5, 3);
        let radii = [0.1, 0.05, 0.025];
        let norms: Vec<f64> =
            radii.iter().map(|&r| kato_ball_norm(&v, r, &origin_grid(3)).unwrap()).collect();
        assert!(
            norms[0] / norms[2] < 1.5 * 1.5,
            "ball norms decayed like a Kato potential: {norms:?}"
        );
    }

    #[test]
    fn alpha_t_zero_potential() {
        let v = PotentialSpec::constant(0.0, 1);
        let a = alpha_t(&v, 0.5, &origin_grid(1), 100, SeedSpec::new(1, 0)).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn alpha_t_bounded_by_sup_times_t() {
        let v = PotentialSpec::constant(-3.0, 1);
        let a = alpha_t(&v, 0.5, &origin_grid(1), 100, SeedSpec::new(1, 0)).unwrap();
        assert!((a - 1.5).abs() < 1e-10, "constant |V| = 3, t = 0.5: α = {a}");
    }

    #[test]
    fn alpha_t_coulomb_decreases_to_zero() {
        let v = PotentialSpec::coulomb_like(1.0, 1.0, 3);
        let grid = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
        let curve =
            alpha_curve(&v, &[0.05, 0.1, 0.2], &grid, 4000, SeedSpec::new(17, 0)).unwrap();
        assert!(
            curve[0].0 < curve[1].0 && curve[1].0 < curve[2].0,
            "α_t not monotone: {curve:?}"
        );
        // theory: α_t = 2√(2t/π) ≈ 0.357 at t = 0.05, plus O(√dt) bias
        assert!(curve[0].0 < 0.5, "α at t = 0.05 too large: {}", curve[0].0);
    }

    #[test]
    fn khasminskii_trivial_and_substitution() {
        let (g, b, bd) = khasminskii_bound(1.0, 0.0, 5.0).unwrap();
        assert_eq!((g, b, bd), (1.0, 0.0, 1.0));
        let (g, _b, bd) = khasminskii_bound(1.0, 0.5, 2.0).unwrap();
        assert_eq!(g, 2.0);
        assert_eq!(bd, 8.0);
        assert!(khasminskii_bound(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn khasminskii_dominates_empirical_exponential_moment() {
        // Truncated Coulomb in d = 3: empirical sup_x E^x[e^{∫|V|}] ≤ bound.
        use crate::paths::{potential_line_integral, sample_path, TimeGrid};
        let v = PotentialSpec::new(
            PotentialForm::CoulombLike { a: 1.0, b: 1.0, r_min: 0.0, r_max: 10.0 },
            3,
        );
        let x_grid: Vec<Vec<f64>> =
            (0..5).map(|i| vec![0.25 * i as f64, 0.0, 0.0]).collect();
        let t_star = 0.1;
        let alpha = alpha_t(&v, t_star, &x_grid, 5_000, SeedSpec::new(5, 0)).unwrap();
        assert!(alpha < 1.0, "α_{{t*}} = {alpha}");
        let t = 1.0;
        let (_g, _b, bound) = khasminskii_bound(t_star, alpha, t).unwrap();
        let grid = TimeGrid::new(t, 128);
        let mut worst: f64 = 0.0;
        for (gi, x0) in x_grid.iter().enumerate() {
            let vals: Vec<f64> = (0..10_000u64)
                .map(|i| {
                    let p = sample_path(x0, grid, SeedSpec::new(500 + gi as u64, i));
                    // |V| = -V here since V ≤ 0
                    (-potential_line_integral(&p, &v).unwrap()).exp()
                })
                .collect();
            let (m, se) = mean_stderr(&vals);
            worst = worst.max(m - 3.0 * se);
        }
        assert!(worst <= bound, "empirical {worst} vs Khasminskii bound {bound}");
    }

    #[test]
    fn beta_lp_zero_and_linearity() {
        let v = PotentialSpec::new(PotentialForm::Constant { value: 0.0 }, 3)
            .with_class(DeclaredClass::Lp { p: 2.0 });
        assert_eq!(beta_lp_estimate(&v).unwrap(), 0.0);
        let v1 = PotentialSpec::new(PotentialForm::GaussianWell { depth: 1.0, width: 1.0 }, 3)
            .with_class(DeclaredClass::Lp { p: 2.0 });
        let v2 = PotentialSpec::new(
            PotentialForm::Scaled {
                factor: 2.0,
                term: Box::new(PotentialForm::GaussianWell { depth: 1.0, width: 1.0 }),
            },
            3,
        )
        .with_class(DeclaredClass::Lp { p: 2.0 });
        let b1 = beta_lp_estimate(&v1).unwrap();
        let b2 = beta_lp_estimate(&v2).unwrap();
        assert!((b2 - 2.0 * b1).abs() < 1e-8 * b1, "{b2} vs 2·{b1}");
    }

    #[test]
    fn beta_lp_dominates_measured_rate() {
        // Gaussian well depth 1: measured slope of log sup_x E[e^{∫|V|}] vs t
        // must sit below the constructive estimate.
        use crate::parallel::linear_fit;
        use crate::paths::{potential_line_integral, sample_path, TimeGrid};
        let v = PotentialSpec::new(PotentialForm::GaussianWell { depth: 1.0, width: 1.0 }, 3)
            .with_class(DeclaredClass::Lp { p: 2.0 });
        let est = beta_lp_estimate(&v).unwrap();
        let ts = [0.5, 1.0, 1.5, 2.0];
        let mut logs = Vec::new();
        for (k, &t) in ts.iter().enumerate() {
            let grid = TimeGrid::new(t, 64);
            let vals: Vec<f64> = (0..4_000u64)
                .map(|i| {
                    let p = sample_path(&[0.0; 3], grid, SeedSpec::new(60 + k as u64, i));
                    (-potential_line_integral(&p, &v).unwrap()).exp()
                })
                .collect();
            logs.push(mean_stderr(&vals).0.ln());
        }
        let (_a, slope, _r) = linear_fit(&ts, &logs);
        assert!(est >= slope, "estimate {est} < measured slope {slope}");
    }

    #[test]
    fn decompose_trivial_quadratic() {
        let v = PotentialSpec::new(
            PotentialForm::RadialPolynomial { coefficients: vec![0.0, 0.0, 1.0] },
            1,
        );
        let d = decompose_e(&v, DecompositionHints { p: 1.0, ..Default::default() }).unwrap();
        assert_eq!(d.u_p_norm, 0.0);
        assert!((d.w_inf - 0.0).abs() < 1e-12);
        assert_eq!(d.w.eval_radial(2.0), 4.0);
    }

    #[test]
    fn decompose_coulomb_plus_quadratic() {
        // V = x² - 1/|x| in d = 3: U = -1/|x| on |x| ≤ 1, ‖U‖₂² = 4π.
        let v = PotentialSpec::new(
            PotentialForm::Sum {
                terms: vec![
                    PotentialForm::RadialPolynomial { coefficients: vec![0.0, 0.0, 1.0] },
                    PotentialForm::CoulombLike { a: 1.0, b: 1.0, r_min: 0.0, r_max: f64::INFINITY },
                ],
            },
            3,
        );
        let d = decompose_e(&v, DecompositionHints::default()).unwrap();
        let exact = (4.0 * std::f64::consts::PI).sqrt();
        assert!((d.u_p_norm - exact).abs() < 1e-3 * exact, "{} vs {exact}", d.u_p_norm);
        // pointwise round trip, exact in floating point
        for r in [0.1, 0.5, 0.99, 1.5, 3.0] {
            let x = [r, 0.0, 0.0];
            assert_eq!(d.w.evaluate(&x) + d.u.evaluate(&x), v.evaluate(&x), "r = {r}");
        }
    }

    #[test]
    fn decompose_neighborhood_trick() {
        // Bounded V with inf V < liminf V admits W_∞ < Σ.
        let v = PotentialSpec::new(
            PotentialForm::Sum {
                terms: vec![
                    PotentialForm::Constant { value: 3.0 },
                    PotentialForm::GaussianWell { depth: 2.0, width: 1.0 },
                ],
            },
            3,
        );
        let d = decompose_e(
            &v,
            DecompositionHints { ensure_w_inf_lt_sigma: true, ..Default::default() },
        )
        .unwrap();
        let sig = sigma_liminf(&d, &[5.0, 10.0]);
        assert!(d.w_inf < sig.sigma, "W_∞ = {} vs Σ = {}", d.w_inf, sig.sigma);
    }

    #[test]
    fn w_a_examples() {
        let mk = |coeffs: Vec<f64>| {
            let v = PotentialSpec::new(PotentialForm::RadialPolynomial { coefficients: coeffs }, 1);
            decompose_e(&v, DecompositionHints { p: 1.0, ..Default::default() }).unwrap()
        };
        let c = PotentialSpec::constant(2.5, 1);
        let dc = decompose_e(&c, DecompositionHints { p: 1.0, ..Default::default() }).unwrap();
        assert_eq!(w_a(&dc, &[1.0], 3.0, 0.01), 2.5);
        let q = mk(vec![0.0, 0.0, 1.0]);
        let inner = w_a(&q, &[4.0], 2.0, 0.001);
        assert!((inner - 4.0).abs() < 1e-2, "inf over (2,6) of y²: {inner}");
        let through_zero = w_a(&q, &[1.0], 2.0, 0.001);
        assert!(through_zero.abs() < 1e-4, "ball contains 0: {through_zero}");
    }

    #[test]
    fn sigma_examples() {
        let q = PotentialSpec::new(
            PotentialForm::RadialPolynomial { coefficients: vec![0.0, 0.0, 1.0] },
            1,
        );
        let dq = decompose_e(&q, DecompositionHints { p: 1.0, ..Default::default() }).unwrap();
        let s = sigma_liminf(&dq, &[5.0, 10.0, 20.0]);
        assert!(s.diverging, "x² should flag Σ = +∞: {s:?}");

        let c = PotentialSpec::constant(3.0, 1);
        let dcst = decompose_e(&c, DecompositionHints { p: 1.0, ..Default::default() }).unwrap();
        assert_eq!(sigma_liminf(&dcst, &[5.0, 10.0]).sigma, 3.0);

        let g = PotentialSpec::new(
            PotentialForm::Sum {
                terms: vec![
                    PotentialForm::Constant { value: 3.0 },
                    PotentialForm::GaussianWell { depth: 2.0, width: 1.0 },
                ],
            },
            3,
        );
        let dg = decompose_e(&g, DecompositionHints::default()).unwrap();
        let s = sigma_liminf(&dg, &[5.0, 10.0]);
        assert!((s.sigma - 3.0).abs() < 1e-6, "Σ = {}", s.sigma);
    }

    #[test]
    fn alpha_subadditivity_surrogate() {
        // α_{t+s} ≤ α_t + α_s within stderr (Markov property consequence).
        let v = PotentialSpec::new(PotentialForm::GaussianWell { depth: 2.0, width: 1.0 }, 3);
        let grid: Vec<Vec<f64>> = vec![vec![0.0; 3], vec![1.0, 0.0, 0.0]];
        let curve = alpha_curve(&v, &[0.3, 0.6], &grid, 8_000, SeedSpec::new(9, 0)).unwrap();
        let (a_t, se) = curve[0];
        let (a_2t, se2) = curve[1];
        assert!(a_2t <= 2.0 * a_t + 3.0 * (se + se2), "α_{{2t}} = {a_2t}, α_t = {a_t}");
    }

    #[test]
    fn classify_coulomb_kato_and_supercritical_not() {
        let grid = vec![vec![0.0, 0.0, 0.0], vec![0.3, 0.0, 0.0]];
        let radii = [0.1, 0.05, 0.025];
        let ts = [0.05, 0.1, 0.2];
        let kato = kato_classify(
            &PotentialSpec::coulomb_like(1.0, 1.0, 3),
            &radii,
            &ts,
            &grid,
            3_000,
            SeedSpec::new(100, 0),
        )
        .unwrap();
        assert_eq!(kato.verdict, KatoVerdict::Kato, "{kato:?}");
        let not = kato_classify(
            &PotentialSpec::coulomb_like(1.0, 2.5, 3),
            &radii,
            &ts,
            &grid,
            500,
            SeedSpec::new(101, 0),
        )
        .unwrap();
        assert_eq!(not.verdict, KatoVerdict::NotKato);
        let zero = kato_classify(
            &PotentialSpec::constant(0.0, 3),
            &radii,
            &ts,
            &grid,
            100,
            SeedSpec::new(102, 0),
        )
        .unwrap();
        assert_eq!(zero.verdict, KatoVerdict::Kato);
    }

    #[test]
    fn d1_rule_is_finiteness_only() {
        let v = PotentialSpec::constant(5.0, 1);
        let rep = kato_classify(
            &v,
            &[0.5, 0.25],
            &[0.1, 0.2],
            &origin_grid(1),
            100,
            SeedSpec::new(7, 0),
        )
        .unwrap();
        assert_eq!(rep.verdict, KatoVerdict::Kato);
    }

    #[test]
    fn surface_area_matches_known_values() {
        assert!((surface_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-10);
    }
}
