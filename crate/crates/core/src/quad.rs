//! Quadrature helpers: Gauss-Legendre rules and ball/sphere node sets.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pd(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|t| t * half).collect(),
    )
}

fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Unit-sphere quadrature in d = 3: tensor product of Gauss-Legendre in
/// cos θ and a uniform (trapezoid, periodic so exact) grid in φ.
/// Returns (directions, weights) with weights summing to 4π.
pub fn sphere_nodes(n_theta: usize, n_phi: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let (cts, ws) = gauss_legendre(n_theta);
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    for (ct, w) in cts.iter().zip(&ws) {
        let st = (1.0 - ct * ct).sqrt();
        for ip in 0..n_phi {
            // Offset keeps nodes off the coordinate planes.
            let phi = dphi * (ip as f64 + 0.5);
            dirs.push([st * phi.cos(), st * phi.sin(), *ct]);
            weights.push(w * dphi);
        }
    }
    (dirs, weights)
}

/// λ-kernel of the Kato-class criterion.
pub fn kato_lambda(d: usize, r: f64) -> f64 {
    match d {
        1 => 1.0,
        2 => -r.ln(),
        _ => r.powi(2 - d as i32),
    }
}
