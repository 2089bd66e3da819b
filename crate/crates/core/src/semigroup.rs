//! Monte Carlo estimation of the vacuum-reduced semigroup T_t.
//!
//! T_t g(x) = E^x[e^{-∫V(B_s)ds} e^{-(α/4)Σ_j‖K_t^j‖²} g(B_t)]; matrix
//! elements (f, T_t g) integrate over the start point by importance
//! sampling from the normalized |f|.

use crate::error::{Error, Result};
use crate::fieldkernel::{effective_action, FieldKernel};
use crate::parallel::{indexed_map, linear_fit, mean_stderr};
use crate::paths::{potential_line_integral, sample_path, BrownianPath, TimeGrid};
use crate::potentials::PotentialSpec;
use crate::report::content_hash;
use crate::rng::SeedSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Scaled Gaussian test function s · N(x; center, σ²1); the importance
/// proposal is its normalized profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub dim: usize,
    pub center: Vec<f64>,
    pub sigma: f64,
    pub scale: f64,
}

impl TestFunction {
    pub fn gaussian(dim: usize, sigma: f64) -> Self {
        Self { dim, center: vec![0.0; dim], sigma, scale: 1.0 }
    }

    pub fn shifted(dim: usize, sigma: f64, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), dim);
        Self { dim, center, sigma, scale: 1.0 }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm = (2.0 * std::f64::consts::PI * self.sigma * self.sigma).powf(self.dim as f64 / 2.0);
        self.scale * (-d2 / (2.0 * self.sigma * self.sigma)).exp() / norm
    }

    /// ∫ value dx.
    pub fn mass(&self) -> f64 {
        self.scale
    }

    pub fn sup_norm(&self) -> f64 {
        self.scale
            / (2.0 * std::f64::consts::PI * self.sigma * self.sigma).powf(self.dim as f64 / 2.0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.center[i] + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn is_radial(&self) -> bool {
        self.center.iter().all(|c| *c == 0.0)
    }
}

/// Closed-form (f, g) for two scaled Gaussians.
pub fn inner_product(f: &TestFunction, g: &TestFunction) -> f64 {
    heat_element(f, g, 0.0)
}

/// Closed-form (f, P_t g) under the free heat semigroup: Gaussian
/// convolution with total variance σ_f² + σ_g² + t.
pub fn heat_element(f: &TestFunction, g: &TestFunction, t: f64) -> f64 {
    assert_eq!(f.dim, g.dim);
    let var = f.sigma * f.sigma + g.sigma * g.sigma + t;
    let d2: f64 = f.center.iter().zip(&g.center).map(|(a, b)| (a - b) * (a - b)).sum();
    f.scale * g.scale * (2.0 * std::f64::consts::PI * var).powf(-(f.dim as f64) / 2.0)
        * (-d2 / (2.0 * var)).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixElementEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub t: f64,
    pub seed: SeedSpec,
    pub alpha: f64,
    pub potential_id: String,
    pub kernel_id: Option<String>,
}

/// One path weight e^{-∫V} e^{-action}; errors on overflow past 1e300.
fn path_weight(
    path: &BrownianPath,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    sample_index: u64,
) -> Result<f64> {
    let line = potential_line_integral(path, v)?;
    if -line > 690.0 {
        return Err(Error::WeightOverflow { sample_index, exponent: -line });
    }
    let mut w = (-line).exp();
    if alpha > 0.0 {
        let kernel = kernel.expect("kernel required when alpha > 0");
        w *= (-effective_action(path, kernel, alpha)?.value).exp();
    }
    Ok(w)
}

/// MC estimate of (f, T_t g).
///
/// Start points are importance-sampled from the normalized |f|; each sample
/// index owns substreams for the start point and the path, so estimates are
/// independent of worker count.
#[allow(clippy::too_many_arguments)]
pub fn matrix_element(
    f: &TestFunction,
    g: &TestFunction,
    t: f64,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    n_steps: usize,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<MatrixElementEstimate> {
    assert_eq!(f.dim, v.dim);
    assert_eq!(g.dim, v.dim);
    let kernel_id = kernel.map(content_hash);
    let potential_id = content_hash(v);
    if t == 0.0 {
        return Ok(MatrixElementEstimate {
            mean: inner_product(f, g),
            stderr: 0.0,
            n_samples: 0,
            t,
            seed,
            alpha,
            potential_id,
            kernel_id,
        });
    }
    let grid = TimeGrid::new(t, n_steps);
    let mass = f.mass();
    let vals: Vec<Result<f64>> = indexed_map(n_samples, |i| {
        let mut xrng = seed.child(0xA).with_sample(i as u64).rng();
        let x0 = f.sample(&mut xrng);
        let path = sample_path(&x0, grid, seed.child(0xB).with_sample(i as u64));
        let w = path_weight(&path, v, kernel, alpha, i as u64)?;
        Ok(mass * w * g.value(path.end()))
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let (mean, stderr) = mean_stderr(&vals);
    Ok(MatrixElementEstimate {
        mean,
        stderr,
        n_samples,
        t,
        seed,
        alpha,
        potential_id,
        kernel_id,
    })
}

/// (T_t f)(x) with stderr, per grid point.
#[allow(clippy::too_many_arguments)]
pub fn apply_tt(
    f: &TestFunction,
    t: f64,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    x_grid: &[Vec<f64>],
    n_steps: usize,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<Vec<(f64, f64)>> {
    let grid = TimeGrid::new(t, n_steps);
    let mut out = Vec::with_capacity(x_grid.len());
    for (gi, x0) in x_grid.iter().enumerate() {
        let gseed = seed.child(gi as u64 + 1);
        let vals: Vec<Result<f64>> = indexed_map(n_samples, |i| {
            let path = sample_path(x0, grid, gseed.with_sample(i as u64));
            let w = path_weight(&path, v, kernel, alpha, i as u64)?;
            Ok(w * f.value(path.end()))
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        out.push(mean_stderr(&vals));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub e0: f64,
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
    /// (t, log (f, T_t f)) pairs actually measured.
    pub log_elements: Vec<(f64, f64)>,
}

/// E₀ = −slope of log (f, T_t f) against t, fit on the largest suffix
/// window (≥ 3 points) whose linear-fit RMS residual is below the
/// threshold.
#[allow(clippy::too_many_arguments)]
pub fn ground_energy(
    f: &TestFunction,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    t_list: &[f64],
    n_steps_per_unit_t: usize,
    n_samples: usize,
    seed: SeedSpec,
    residual_threshold: f64,
) -> Result<EnergyEstimate> {
    assert!(t_list.len() >= 3);
    let mut log_elements = Vec::with_capacity(t_list.len());
    for (i, &t) in t_list.iter().enumerate() {
        let n_steps = ((t * n_steps_per_unit_t as f64).ceil() as usize).max(8);
        let est = matrix_element(f, f, t, v, kernel, alpha, n_steps, n_samples, seed.child(i as u64 + 1))?;
        if est.mean <= 0.0 {
            return Err(Error::NonFinite { context: format!("(f, T_t f) ≤ 0 at t = {t}") });
        }
        log_elements.push((t, est.mean.ln()));
    }
    for start in 0..=log_elements.len() - 3 {
        let window = &log_elements[start..];
        let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
        let (_a, slope, rms) = linear_fit(&xs, &ys);
        if rms < residual_threshold {
            return Ok(EnergyEstimate {
                e0: -slope,
                fit_window: (xs[0], *xs.last().unwrap()),
                fit_residual: rms,
                log_elements,
            });
        }
    }
    let xs: Vec<f64> = log_elements.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = log_elements.iter().map(|p| p.1).collect();
    let (_a, _slope, rms) = linear_fit(&xs[xs.len() - 3..], &ys[ys.len() - 3..]);
    Err(Error::FitUnstable { residual: rms, threshold: residual_threshold })
}

/// Radially tabulated intermediate function with linear interpolation; used
/// to nest semigroup applications.
struct RadialTable {
    radii: Vec<f64>,
    values: Vec<f64>,
    stderrs: Vec<f64>,
}

impl RadialTable {
    fn eval(&self, x: &[f64]) -> (f64, f64) {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r >= *self.radii.last().unwrap() {
            return (*self.values.last().unwrap(), *self.stderrs.last().unwrap());
        }
        let i = self.radii.partition_point(|&t| t < r).max(1);
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        let f = (r - r0) / (r1 - r0);
        (
            self.values[i - 1] * (1.0 - f) + self.values[i] * f,
            self.stderrs[i - 1] * (1.0 - f) + self.stderrs[i] * f,
        )
    }

    /// Bound on the linear-interpolation error from second differences.
    fn interp_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.values.len() - 1 {
            worst = worst.max((self.values[i + 1] - 2.0 * self.values[i] + self.values[i - 1]).abs());
        }
        worst / 8.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemigroupCheck {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub interp_error: f64,
    pub z_score: f64,
}

/// Compare (f, T_s T_t g) against (f, T_{s+t} g).
///
/// The intermediate T_t g is tabulated on a radial grid (f, g, V must be
/// radially symmetric, which the Gaussian test functions centered at 0
/// are), interpolated linearly in |x|; the interpolation error enters the
/// z-score denominator.
#[allow(clippy::too_many_arguments)]
pub fn check_semigroup(
    f: &TestFunction,
    g: &TestFunction,
    s: f64,
    t: f64,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    n_steps_per_unit_t: usize,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<SemigroupCheck> {
    assert!(f.is_radial() && g.is_radial(), "nested apply needs radial f, g");
    let steps = |tt: f64| ((tt * n_steps_per_unit_t as f64).ceil() as usize).max(8);
    let rhs = matrix_element(f, g, s + t, v, kernel, alpha, steps(s + t), n_samples, seed.child(1))?;
    if s == 0.0 {
        return Ok(SemigroupCheck {
            lhs: rhs.mean,
            lhs_stderr: rhs.stderr,
            rhs: rhs.mean,
            rhs_stderr: rhs.stderr,
            interp_error: 0.0,
            z_score: 0.0,
        });
    }
    // tabulate u = T_t g on radii covering where f E^x mass lives
    let r_max = 4.0 * f.sigma + 3.0 * s.sqrt() + 2.0;
    let n_r = 48;
    let radii: Vec<f64> = (0..=n_r).map(|i| r_max * i as f64 / n_r as f64).collect();
    let x_grid: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| {
            let mut x = vec![0.0; v.dim];
            x[0] = r;
            x
        })
        .collect();
    let tab = apply_tt(g, t, v, kernel, alpha, &x_grid, steps(t), n_samples / 4, seed.child(2))?;
    let table = RadialTable {
        radii,
        values: tab.iter().map(|p| p.0).collect(),
        stderrs: tab.iter().map(|p| p.1).collect(),
    };
    // outer application: (f, T_s u)
    let grid = TimeGrid::new(s, steps(s));
    let mass = f.mass();
    let vals: Vec<Result<(f64, f64)>> = indexed_map(n_samples, |i| {
        let mut xrng = seed.child(3).child(0xA).with_sample(i as u64).rng();
        let x0 = f.sample(&mut xrng);
        let path = sample_path(&x0, grid, seed.child(3).child(0xB).with_sample(i as u64));
        let w = path_weight(&path, v, kernel, alpha, i as u64)?;
        let (u, u_se) = table.eval(path.end());
        Ok((mass * w * u, mass * w * u_se))
    });
    let vals: Vec<(f64, f64)> = vals.into_iter().collect::<Result<_>>()?;
    let prim: Vec<f64> = vals.iter().map(|p| p.0).collect();
    let (lhs, lhs_se_mc) = mean_stderr(&prim);
    // propagated tabulation noise: mean of w · stderr(u) is an upper bound
    // because the per-radius errors are fully correlated across samples
    let u_noise = vals.iter().map(|p| p.1).sum::<f64>() / vals.len() as f64;
    let interp_error = table.interp_error() * mass;
    let lhs_stderr = (lhs_se_mc * lhs_se_mc + u_noise * u_noise).sqrt();
    let denom =
        (lhs_stderr * lhs_stderr + rhs.stderr * rhs.stderr + interp_error * interp_error).sqrt();
    let z_score = if denom > 0.0 { (lhs - rhs.mean) / denom } else { 0.0 };
    Ok(SemigroupCheck {
        lhs,
        lhs_stderr,
        rhs: rhs.mean,
        rhs_stderr: rhs.stderr,
        interp_error,
        z_score,
    })
}

/// Compare (f, T_t g) with (g, T_t f); identical estimators (z = 0) when
/// f = g, independent streams otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_symmetry(
    f: &TestFunction,
    g: &TestFunction,
    t: f64,
    v: &PotentialSpec,
    kernel: Option<&FieldKernel>,
    alpha: f64,
    n_steps: usize,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<(MatrixElementEstimate, MatrixElementEstimate, f64)> {
    let a = matrix_element(f, g, t, v, kernel, alpha, n_steps, n_samples, seed)?;
    let seed_b = if f == g { seed } else { seed.child(0x5e) };
    let b = matrix_element(g, f, t, v, kernel, alpha, n_steps, n_samples, seed_b)?;
    let denom = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    let z = if denom > 0.0 { (a.mean - b.mean) / denom } else { 0.0 };
    Ok((a, b, z))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiamagneticCheck {
    pub with_field: f64,
    pub without_field: f64,
    pub holds: bool,
    /// Fraction of samples where the field weight dominates pointwise.
    pub dominated_fraction: f64,
}

/// Per-sample diamagnetic domination: with shared paths, the α > 0 weight
/// is the α = 0 weight times e^{-action} ≤ 1, so every sample must satisfy
/// the inequality, not only the averages.
#[allow(clippy::too_many_arguments)]
pub fn check_diamagnetic(
    f: &TestFunction,
    g: &TestFunction,
    t: f64,
    v: &PotentialSpec,
    kernel: &FieldKernel,
    alpha: f64,
    n_steps: usize,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<DiamagneticCheck> {
    assert!(alpha >= 0.0);
    let grid = TimeGrid::new(t, n_steps);
    let mass = f.mass();
    let rows: Vec<Result<(f64, f64, bool)>> = indexed_map(n_samples, |i| {
        let mut xrng = seed.child(0xA).with_sample(i as u64).rng();
        let x0 = f.sample(&mut xrng);
        let path = sample_path(&x0, grid, seed.child(0xB).with_sample(i as u64));
        let w0 = path_weight(&path, v, None, 0.0, i as u64)? * mass * g.value(path.end());
        let act = effective_action(&path, kernel, alpha)?.value;
        let w1 = w0 * (-act).exp();
        Ok((w1, w0, w1 <= w0))
    });
    let rows: Vec<(f64, f64, bool)> = rows.into_iter().collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let with_field = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let without_field = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let dominated = rows.iter().filter(|r| r.2).count();
    Ok(DiamagneticCheck {
        with_field,
        without_field,
        holds: dominated == rows.len(),
        dominated_fraction: dominated as f64 / n,
    })
}

/// All sampled weights strictly positive and finite.
pub fn check_positivity(weights: &[f64]) -> bool {
    !weights.is_empty() && weights.iter().all(|w| w.is_finite() && *w > 0.0)
}
