//! Lippmann-Schwinger generalized eigenfunctions.
//!
//! Solves Ψ(k,x) = e^{ik·x} − (1/4π) ∫ e^{i|k||x−y|}/|x−y| v(y) Ψ(k,y) dy
//! for compactly supported v in d = 3 by Born iteration with a dense
//! collocation fallback, and assembles the solutions into variable-mass
//! cutoff tables.

use crate::error::{Error, Result};
use crate::fieldkernel::{polarization_basis, CutoffTables, DispersionSpec};
use crate::potentials::PotentialSpec;
use crate::quad::{gauss_legendre_on, sphere_nodes};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatteringProblem {
    /// Compactly supported potential, d = 3.
    pub v: PotentialSpec,
    pub k: [f64; 3],
    /// Cubic grid on [-half_width, half_width]³.
    pub half_width: f64,
    /// Nodes per axis (including both boundaries).
    pub n: usize,
    pub far_points: Vec<[f64; 3]>,
}

impl ScatteringProblem {
    pub fn new(v: PotentialSpec, k: [f64; 3], half_width: f64, n: usize) -> Self {
        assert_eq!(v.dim, 3);
        assert!(k.iter().map(|c| c * c).sum::<f64>() > 0.0, "|k| > 0 required");
        assert!(n >= 3);
        Self { v, k, half_width, n, far_points: Vec::new() }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        let n = self.n;
        let h = self.h();
        let (iz, rem) = (i % n, i / n);
        let (iy, ix) = (rem % n, rem / n);
        [
            -self.half_width + ix as f64 * h,
            -self.half_width + iy as f64 * h,
            -self.half_width + iz as f64 * h,
        ]
    }

    pub fn n_nodes(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn k_abs(&self) -> f64 {
        self.k.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn plane_wave(&self, x: &[f64; 3]) -> Complex64 {
        let phase = self.k[0] * x[0] + self.k[1] * x[1] + self.k[2] * x[2];
        Complex64::new(phase.cos(), phase.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Born,
    Collocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatteringSolution {
    pub psi_on_grid: Vec<Complex64>,
    pub method: SolveMethod,
    pub iterations: usize,
    /// Max-norm residual of the discretized integral equation.
    pub residual_norm: f64,
    /// Reported Born operator norm estimate ‖A[φ]‖_∞/‖φ‖_∞ on the first
    /// iterate (contraction indicator).
    pub born_norm_estimate: f64,
}

/// Free outgoing kernel e^{i|k| s}/s of the integral equation; reciprocal in
/// (x, y) exactly.
pub fn free_kernel(k_abs: f64, x: &[f64; 3], y: &[f64; 3]) -> Complex64 {
    let s = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
    let phase = k_abs * s;
    Complex64::new(phase.cos(), phase.sin()) / s
}

/// ∫_{ball of volume h³} e^{i|k|s}/s dV = 4π(1 − e^{ikR}(1 − ikR))/k²,
/// the analytic diagonal-cell weight with R the equal-volume ball radius.
fn diagonal_weight(k_abs: f64, h: f64) -> Result<Complex64> {
    let r = (3.0 * h * h * h / (4.0 * std::f64::consts::PI)).cbrt();
    let kr = k_abs * r;
    let e = Complex64::new(kr.cos(), kr.sin());
    let val = 4.0 * std::f64::consts::PI * (Complex64::new(1.0, 0.0) - e * Complex64::new(1.0, -kr))
        / (k_abs * k_abs);
    if val.is_finite() {
        Ok(val)
    } else {
        Err(Error::SingularQuadrature {
            context: format!("diagonal cell weight at |k| = {k_abs}, h = {h}"),
        })
    }
}

struct GridData {
    nodes: Vec<[f64; 3]>,
    v_vals: Vec<f64>,
    diag: Complex64,
    h3: f64,
    k_abs: f64,
}

fn grid_data(p: &ScatteringProblem) -> Result<GridData> {
    let n = p.n_nodes();
    let nodes: Vec<[f64; 3]> = (0..n).map(|i| p.node(i)).collect();
    let v_vals: Vec<f64> = nodes.iter().map(|x| p.v.evaluate(x)).collect();
    let h = p.h();
    Ok(GridData { nodes, v_vals, diag: diagonal_weight(p.k_abs(), h)?, h3: h * h * h, k_abs: p.k_abs() })
}

/// One application of the integral operator A: ψ ↦ −(1/4π)∫ G v ψ.
fn apply_operator(g: &GridData, psi: &[Complex64]) -> Vec<Complex64> {
    let n = g.nodes.len();
    crate::parallel::indexed_map(n, |i| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            if g.v_vals[j] == 0.0 {
                continue;
            }
            let w = if i == j { g.diag } else { g.h3 * free_kernel(g.k_abs, &g.nodes[i], &g.nodes[j]) };
            acc += w * g.v_vals[j] * psi[j];
        }
        -acc / (4.0 * std::f64::consts::PI)
    })
}

fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solve the discretized Lippmann-Schwinger equation.
///
/// Born iteration first; if the residual stops contracting before reaching
/// 1e-8, falls back to a dense complex LU solve of (I − A)ψ = φ.
pub fn solve_ls(problem: &ScatteringProblem) -> Result<ScatteringSolution> {
    let g = grid_data(problem)?;
    let n = g.nodes.len();
    let phi: Vec<Complex64> = g.nodes.iter().map(|x| problem.plane_wave(x)).collect();
    if g.v_vals.iter().all(|v| *v == 0.0) {
        return Ok(ScatteringSolution {
            psi_on_grid: phi,
            method: SolveMethod::Born,
            iterations: 0,
            residual_norm: 0.0,
            born_norm_estimate: 0.0,
        });
    }
    let tol = 1e-8;
    let first = apply_operator(&g, &phi);
    let born_norm_estimate = max_norm(&first) / max_norm(&phi);
    let mut psi: Vec<Complex64> = phi.iter().zip(&first).map(|(a, b)| a + b).collect();
    let mut prev_res = f64::INFINITY;
    for it in 1..=50 {
        let a_psi = apply_operator(&g, &psi);
        let next: Vec<Complex64> = phi.iter().zip(&a_psi).map(|(a, b)| a + b).collect();
        let res = psi.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        psi = next;
        if res < tol {
            let final_res = residual(&g, &phi, &psi);
            return Ok(ScatteringSolution {
                psi_on_grid: psi,
                method: SolveMethod::Born,
                iterations: it + 1,
                residual_norm: final_res,
                born_norm_estimate,
            });
        }
        if res > prev_res {
            break; // diverging: dense fallback below
        }
        prev_res = res;
    }
    // Dense collocation: (I − A)ψ = φ.
    if n > 2200 {
        return Err(Error::BornDivergence { iterations: 50, residual: prev_res });
    }
    let mut m = nalgebra::DMatrix::<Complex64>::identity(n, n);
    let minus_inv_4pi = -1.0 / (4.0 * std::f64::consts::PI);
    for i in 0..n {
        for j in 0..n {
            if g.v_vals[j] == 0.0 {
                continue;
            }
            let w = if i == j { g.diag } else { g.h3 * free_kernel(g.k_abs, &g.nodes[i], &g.nodes[j]) };
            m[(i, j)] -= minus_inv_4pi * w * g.v_vals[j];
        }
    }
    let rhs = nalgebra::DVector::<Complex64>::from_vec(phi.clone());
    let lu = m.lu();
    let sol = lu.solve(&rhs).ok_or(Error::BornDivergence { iterations: 50, residual: prev_res })?;
    let psi: Vec<Complex64> = sol.iter().copied().collect();
    let final_res = residual(&g, &phi, &psi);
    Ok(ScatteringSolution {
        psi_on_grid: psi,
        method: SolveMethod::Collocation,
        iterations: 50,
        residual_norm: final_res,
        born_norm_estimate,
    })
}

/// Max-norm residual ‖ψ − φ − A[ψ]‖_∞ of the discretized equation.
fn residual(g: &GridData, phi: &[Complex64], psi: &[Complex64]) -> f64 {
    let a_psi = apply_operator(g, psi);
    psi.iter()
        .zip(phi)
        .zip(&a_psi)
        .map(|((p, f), a)| (p - f - a).norm())
        .fold(0.0, f64::max)
}

/// Re-substitute a solution into the discretized equation (test hook).
pub fn back_substitution_residual(problem: &ScatteringProblem, sol: &ScatteringSolution) -> Result<f64> {
    let g = grid_data(problem)?;
    let phi: Vec<Complex64> = g.nodes.iter().map(|x| problem.plane_wave(x)).collect();
    Ok(residual(&g, &phi, &sol.psi_on_grid))
}

/// Evaluate Ψ at an arbitrary (typically far) point by one application of
/// the integral operator to the grid solution.
pub fn evaluate_off_grid(problem: &ScatteringProblem, sol: &ScatteringSolution, x: &[f64; 3]) -> Result<Complex64> {
    let g = grid_data(problem)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..g.nodes.len() {
        if g.v_vals[j] == 0.0 {
            continue;
        }
        let d2: f64 = x.iter().zip(&g.nodes[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = if d2 < 1e-24 { g.diag } else { g.h3 * free_kernel(g.k_abs, x, &g.nodes[j]) };
        acc += w * g.v_vals[j] * sol.psi_on_grid[j];
    }
    Ok(problem.plane_wave(x) - acc / (4.0 * std::f64::consts::PI))
}

/// Max over interior grid points of |(−Δ_h + v − |k|²)Ψ| with the 7-point
/// Laplacian stencil.
pub fn helmholtz_residual(sol: &ScatteringSolution, problem: &ScatteringProblem) -> f64 {
    let n = problem.n;
    let h = problem.h();
    let k2 = problem.k_abs() * problem.k_abs();
    let idx = |ix: usize, iy: usize, iz: usize| (ix * n + iy) * n + iz;
    let mut worst: f64 = 0.0;
    for ix in 1..n - 1 {
        for iy in 1..n - 1 {
            for iz in 1..n - 1 {
                let c = sol.psi_on_grid[idx(ix, iy, iz)];
                let lap = (sol.psi_on_grid[idx(ix + 1, iy, iz)]
                    + sol.psi_on_grid[idx(ix - 1, iy, iz)]
                    + sol.psi_on_grid[idx(ix, iy + 1, iz)]
                    + sol.psi_on_grid[idx(ix, iy - 1, iz)]
                    + sol.psi_on_grid[idx(ix, iy, iz + 1)]
                    + sol.psi_on_grid[idx(ix, iy, iz - 1)]
                    - 6.0 * c)
                    / (h * h);
                let x = problem.node(idx(ix, iy, iz));
                let r = -lap + (problem.v.evaluate(&x) - k2) * c;
                worst = worst.max(r.norm());
            }
        }
    }
    worst
}

/// max over far points of |Ψ(x) − e^{ik·x}|·(1 + |x|²)^{1/2}.
pub fn decay_constant(
    sol: &ScatteringSolution,
    problem: &ScatteringProblem,
    far_points: &[[f64; 3]],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in far_points {
        let psi = evaluate_off_grid(problem, sol, x)?;
        let diff = (psi - problem.plane_wave(x)).norm();
        let weight = (1.0 + x.iter().map(|c| c * c).sum::<f64>()).sqrt();
        worst = worst.max(diff * weight);
    }
    Ok(worst)
}

/// Max over the grid of |∇_h Ψ| by central differences (boundedness oracle
/// for the derivative estimate).
pub fn max_gradient(sol: &ScatteringSolution, problem: &ScatteringProblem) -> f64 {
    let n = problem.n;
    let h = problem.h();
    let idx = |ix: usize, iy: usize, iz: usize| (ix * n + iy) * n + iz;
    let mut worst: f64 = 0.0;
    for ix in 1..n - 1 {
        for iy in 1..n - 1 {
            for iz in 1..n - 1 {
                let gx = (sol.psi_on_grid[idx(ix + 1, iy, iz)] - sol.psi_on_grid[idx(ix - 1, iy, iz)]).norm();
                let gy = (sol.psi_on_grid[idx(ix, iy + 1, iz)] - sol.psi_on_grid[idx(ix, iy - 1, iz)]).norm();
                let gz = (sol.psi_on_grid[idx(ix, iy, iz + 1)] - sol.psi_on_grid[idx(ix, iy, iz - 1)]).norm();
                worst = worst.max((gx * gx + gy * gy + gz * gz).sqrt() / (2.0 * h));
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Variable-mass cutoff tables
// ---------------------------------------------------------------------------

/// Radial profile of φ̂ supported in an annulus excluding k = 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhiHatSpec {
    pub k_min: f64,
    pub k_max: f64,
}

/// Assemble cutoff tables ρ̂_μ^j(k, x) = φ̂(k) e_μ(k, j) conj(Ψ(k, x))/ω^p
/// from per-k scattering solutions.
///
/// The k-grid is a radial Gauss-Legendre × sphere product over the φ̂
/// annulus; `solutions` must hold one solved problem for each node of
/// `variable_mass_k_grid(phi, n_k_radial)` in order. Gradients come from
/// central differences of Ψ on the grid.
pub fn build_variable_mass_cutoff(
    solutions: &[(ScatteringProblem, ScatteringSolution)],
    phi: &PhiHatSpec,
    disp: DispersionSpec,
    omega_power: f64,
) -> Result<CutoffTables> {
    if phi.k_min <= 0.0 {
        return Err(Error::SupportViolation {
            context: format!("phi_hat support touches k = 0 (k_min = {})", phi.k_min),
        });
    }
    assert!(!solutions.is_empty());
    let p0 = &solutions[0].0;
    let nx = p0.n_nodes();
    let x_nodes: Vec<[f64; 3]> = (0..nx).map(|i| p0.node(i)).collect();
    let mut k_nodes = Vec::new();
    let mut k_weights = Vec::new();
    let mut omega = Vec::new();
    let mut phi_hat = Vec::new();
    let mut pol = Vec::new();
    let mut psi = Vec::with_capacity(solutions.len() * nx);
    let mut grad_psi = Vec::with_capacity(solutions.len() * nx);
    for (prob, sol) in solutions {
        assert_eq!(prob.n_nodes(), nx, "all solves must share the x-grid");
        let k = prob.k;
        let k_abs = prob.k_abs();
        if k_abs < phi.k_min - 1e-12 || k_abs > phi.k_max + 1e-12 {
            return Err(Error::SupportViolation {
                context: format!("|k| = {k_abs} outside the φ̂ annulus"),
            });
        }
        k_nodes.push(k);
        omega.push(disp.omega(k_abs));
        phi_hat.push(1.0);
        let khat = [k[0] / k_abs, k[1] / k_abs, k[2] / k_abs];
        pol.push(polarization_basis(khat));
        psi.extend(sol.psi_on_grid.iter().copied());
        grad_psi.extend(grid_gradient(prob, &sol.psi_on_grid));
        k_weights.push(f64::NAN); // filled below from the product rule
    }
    // Product-rule weights: caller constructed the solves over
    // variable_mass_k_grid; recompute the weights in the same order.
    let nodes_expected = variable_mass_k_grid(phi, infer_radial_order(solutions.len()));
    if nodes_expected.len() == solutions.len() {
        for (i, (kn, w)) in nodes_expected.iter().enumerate() {
            let diff: f64 = kn.iter().zip(&k_nodes[i]).map(|(a, b)| (a - b).abs()).sum();
            if diff > 1e-9 {
                return Err(Error::Config(format!(
                    "solution {i} k-node {:?} does not match the product grid {kn:?}",
                    k_nodes[i]
                )));
            }
            k_weights[i] = *w;
        }
    } else {
        return Err(Error::Config(format!(
            "{} solutions do not fill the product k-grid ({} nodes)",
            solutions.len(),
            nodes_expected.len()
        )));
    }
    Ok(CutoffTables {
        k_nodes,
        k_weights,
        omega,
        phi_hat,
        pol,
        x_nodes,
        psi,
        grad_psi,
        omega_power,
    })
}

fn infer_radial_order(n_solutions: usize) -> usize {
    // product grid is n_k radial × (n_k θ × 2 n_k φ) = 2 n_k³
    let mut n_k = 1;
    while 2 * n_k * n_k * n_k < n_solutions {
        n_k += 1;
    }
    n_k
}

/// The (k-node, weight) product grid over the φ̂ annulus.
pub fn variable_mass_k_grid(phi: &PhiHatSpec, n_k_radial: usize) -> Vec<([f64; 3], f64)> {
    let (ks, kw) = gauss_legendre_on(n_k_radial, phi.k_min, phi.k_max);
    let (dirs, dw) = sphere_nodes(n_k_radial, 2 * n_k_radial);
    let mut out = Vec::new();
    for (k, wk) in ks.iter().zip(&kw) {
        for (u, wu) in dirs.iter().zip(&dw) {
            out.push(([k * u[0], k * u[1], k * u[2]], wk * k * k * wu));
        }
    }
    out
}

fn grid_gradient(problem: &ScatteringProblem, psi: &[Complex64]) -> Vec<[Complex64; 3]> {
    let n = problem.n;
    let h = problem.h();
    let idx = |ix: usize, iy: usize, iz: usize| (ix * n + iy) * n + iz;
    let mut out = vec![[Complex64::new(0.0, 0.0); 3]; psi.len()];
    let diff = |hi: Complex64, lo: Complex64, span: f64| (hi - lo) / span;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let i = idx(ix, iy, iz);
                let gx = if ix == 0 {
                    diff(psi[idx(1, iy, iz)], psi[i], h)
                } else if ix == n - 1 {
                    diff(psi[i], psi[idx(n - 2, iy, iz)], h)
                } else {
                    diff(psi[idx(ix + 1, iy, iz)], psi[idx(ix - 1, iy, iz)], 2.0 * h)
                };
                let gy = if iy == 0 {
                    diff(psi[idx(ix, 1, iz)], psi[i], h)
                } else if iy == n - 1 {
                    diff(psi[i], psi[idx(ix, n - 2, iz)], h)
                } else {
                    diff(psi[idx(ix, iy + 1, iz)], psi[idx(ix, iy - 1, iz)], 2.0 * h)
                };
                let gz = if iz == 0 {
                    diff(psi[idx(ix, iy, 1)], psi[i], h)
                } else if iz == n - 1 {
                    diff(psi[i], psi[idx(ix, iy, n - 2)], h)
                } else {
                    diff(psi[idx(ix, iy, iz + 1)], psi[idx(ix, iy, iz - 1)], 2.0 * h)
                };
                out[i] = [gx, gy, gz];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Table emit/parse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CutoffTableHeader {
    pub k_nodes: Vec<[f64; 3]>,
    pub k_weights: Vec<f64>,
    pub omega: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub pol: Vec<[[f64; 3]; 2]>,
    pub x_nodes: Vec<[f64; 3]>,
    pub omega_power: f64,
}

/// Write tables as a JSON header (grids, ω data) plus a CSV of the complex
/// ρ̂ building blocks: columns (k_index, x_index, Re Ψ, Im Ψ, Re ∂Ψ…).
pub fn emit_cutoff_tables(tables: &CutoffTables, json_path: &Path, csv_path: &Path) -> Result<()> {
    let header = CutoffTableHeader {
        k_nodes: tables.k_nodes.clone(),
        k_weights: tables.k_weights.clone(),
        omega: tables.omega.clone(),
        phi_hat: tables.phi_hat.clone(),
        pol: tables.pol.clone(),
        x_nodes: tables.x_nodes.clone(),
        omega_power: tables.omega_power,
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&header)?)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(f, "k_index,x_index,re_psi,im_psi,re_dx,im_dx,re_dy,im_dy,re_dz,im_dz")?;
    let nx = tables.x_nodes.len();
    for ik in 0..tables.k_nodes.len() {
        for ix in 0..nx {
            let p = tables.psi[ik * nx + ix];
            let g = tables.grad_psi[ik * nx + ix];
            writeln!(
                f,
                "{ik},{ix},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                p.re, p.im, g[0].re, g[0].im, g[1].re, g[1].im, g[2].re, g[2].im
            )?;
        }
    }
    Ok(())
}

pub fn parse_cutoff_tables(json_path: &Path, csv_path: &Path) -> Result<CutoffTables> {
    let header: CutoffTableHeader = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
    let nx = header.x_nodes.len();
    let nk = header.k_nodes.len();
    let mut psi = vec![Complex64::new(0.0, 0.0); nk * nx];
    let mut grad = vec![[Complex64::new(0.0, 0.0); 3]; nk * nx];
    for (ln, line) in std::fs::read_to_string(csv_path)?.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Config(format!("bad table row {ln}")));
        }
        let ik: usize = cols[0].parse().map_err(|e: std::num::ParseIntError| Error::Config(e.to_string()))?;
        let ix: usize = cols[1].parse().map_err(|e: std::num::ParseIntError| Error::Config(e.to_string()))?;
        let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("row {ln}: {e}")));
        let idx = ik * nx + ix;
        psi[idx] = Complex64::new(f(cols[2])?, f(cols[3])?);
        grad[idx] = [
            Complex64::new(f(cols[4])?, f(cols[5])?),
            Complex64::new(f(cols[6])?, f(cols[7])?),
            Complex64::new(f(cols[8])?, f(cols[9])?),
        ];
    }
    Ok(CutoffTables {
        k_nodes: header.k_nodes,
        k_weights: header.k_weights,
        omega: header.omega,
        phi_hat: header.phi_hat,
        pol: header.pol,
        x_nodes: header.x_nodes,
        psi,
        grad_psi: grad,
        omega_power: header.omega_power,
    })
}
