//! Discretized Brownian paths and integrals along them.

use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;
use crate::rng::SeedSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Uniform time grid on [0, t_final].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Self {
        assert!(t_final > 0.0 && n_steps > 0, "time grid must be nondegenerate");
        Self { t_final, n_steps }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// t_k = k·t_final/n_steps; t_{n_steps} equals t_final exactly.
    pub fn time(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        self.t_final * k as f64 / self.n_steps as f64
    }
}

/// A sampled Wiener path: positions are the exact prefix sum of the
/// increments from `start`.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub dim: usize,
    pub grid: TimeGrid,
    /// flat [n_steps × dim]
    pub increments: Vec<f64>,
    /// flat [(n_steps+1) × dim]
    pub positions: Vec<f64>,
}

impl BrownianPath {
    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.position(0)
    }

    pub fn end(&self) -> &[f64] {
        self.position(self.grid.n_steps)
    }

    /// Midpoint (X_k + X_{k+1})/2 of step k.
    pub fn midpoint(&self, k: usize, out: &mut [f64]) {
        let a = k * self.dim;
        let b = (k + 1) * self.dim;
        for i in 0..self.dim {
            out[i] = 0.5 * (self.positions[a + i] + self.positions[b + i]);
        }
    }

    pub fn quadratic_variation(&self) -> f64 {
        self.increments.iter().map(|d| d * d).sum()
    }
}

/// Sample a Brownian path started at `x0`.
pub fn sample_path(x0: &[f64], grid: TimeGrid, seed: SeedSpec) -> BrownianPath {
    let dim = x0.len();
    assert!(dim >= 1);
    let mut rng = seed.rng();
    let sqrt_dt = grid.dt().sqrt();
    let n = grid.n_steps;
    let mut increments = Vec::with_capacity(n * dim);
    let mut positions = Vec::with_capacity((n + 1) * dim);
    positions.extend_from_slice(x0);
    for k in 0..n {
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            let dz = sqrt_dt * z;
            increments.push(dz);
            let prev = positions[k * dim + i];
            positions.push(prev + dz);
        }
    }
    BrownianPath { dim, grid, increments, positions }
}

/// Trapezoidal quadrature of ∫₀ᵗ V(B_s) ds along the path.
///
/// Positions that hit a declared singular point within 1e-12 are evaluated
/// at a dt-shifted point instead; the continuum event has probability zero.
pub fn potential_line_integral(path: &BrownianPath, v: &PotentialSpec) -> Result<f64> {
    let dt = path.grid.dt();
    let n = path.grid.n_steps;
    let mut sum = 0.0;
    for k in 0..=n {
        let val = v.evaluate_on_path(path.position(k), dt)?;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        sum += w * val;
    }
    Ok(sum * dt)
}

/// Running trapezoidal integrals of |V| (or V) up to each requested time.
/// `times` must be nondecreasing and within the grid horizon. Used by the
/// Kato α_t sweep so one path serves several t values.
pub fn potential_partial_integrals(
    path: &BrownianPath,
    v: &PotentialSpec,
    times: &[f64],
    absolute: bool,
) -> Result<Vec<f64>> {
    let dt = path.grid.dt();
    let n = path.grid.n_steps;
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    let mut prev = {
        let val = v.evaluate_on_path(path.position(0), dt)?;
        if absolute { val.abs() } else { val }
    };
    let mut ti = 0;
    // check t=0 requests
    while ti < times.len() && times[ti] <= 0.0 {
        out.push(0.0);
        ti += 1;
    }
    for k in 0..n {
        let val = v.evaluate_on_path(path.position(k + 1), dt)?;
        let val = if absolute { val.abs() } else { val };
        acc += 0.5 * dt * (prev + val);
        prev = val;
        let t_now = path.grid.time(k + 1);
        while ti < times.len() && times[ti] <= t_now + 1e-12 {
            out.push(acc);
            ti += 1;
        }
    }
    while ti < times.len() {
        out.push(acc);
        ti += 1;
    }
    Ok(out)
}

/// A vector field with an evaluable divergence, the integrand class of the
/// Stratonovich line integral.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], out: &mut [f64]);
    fn divergence(&self, x: &[f64]) -> f64;
}

/// Midpoint-rule Stratonovich integral Σ_k f((X_k+X_{k+1})/2)·ΔB_k.
pub fn stratonovich_integral(path: &BrownianPath, f: &dyn VectorField) -> Result<f64> {
    assert_eq!(f.dim(), path.dim);
    let mut mid = vec![0.0; path.dim];
    let mut fx = vec![0.0; path.dim];
    let mut sum = 0.0;
    for k in 0..path.grid.n_steps {
        path.midpoint(k, &mut mid);
        f.value(&mid, &mut fx);
        let db = path.increment(k);
        for i in 0..path.dim {
            sum += fx[i] * db[i];
        }
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite { context: "stratonovich_integral".into() });
    }
    Ok(sum)
}

/// Left-endpoint Itô integral Σ_k f(X_k)·ΔB_k.
pub fn ito_integral(path: &BrownianPath, f: &dyn VectorField) -> Result<f64> {
    let mut fx = vec![0.0; path.dim];
    let mut sum = 0.0;
    for k in 0..path.grid.n_steps {
        f.value(path.position(k), &mut fx);
        let db = path.increment(k);
        for i in 0..path.dim {
            sum += fx[i] * db[i];
        }
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite { context: "ito_integral".into() });
    }
    Ok(sum)
}

/// Itô-plus-divergence form of the Stratonovich integral:
/// ∫ f·dB + ½ ∫ ∂·f ds, the conversion the continuum definition prescribes.
/// Cross-check route for [`stratonovich_integral`].
pub fn stratonovich_via_ito(path: &BrownianPath, f: &dyn VectorField) -> Result<f64> {
    let ito = ito_integral(path, f)?;
    let dt = path.grid.dt();
    let n = path.grid.n_steps;
    let mut div_int = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        div_int += w * f.divergence(path.position(k));
    }
    Ok(ito + 0.5 * div_int * dt)
}
