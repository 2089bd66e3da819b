//! Deterministic parallel reductions.
//!
//! Samples are written into a slot indexed by their sample index and summed
//! sequentially afterward, so the result is bit-identical for any worker
//! count.

use rayon::prelude::*;

/// Evaluate `f(i)` for `i in 0..n` in parallel and return the values in
/// index order.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Mean and standard error of a sample set (sequential, index order).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares line fit `y = a + b x`; returns `(a, b, rms_residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - a - b * xi;
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (a, b, rms)
}
