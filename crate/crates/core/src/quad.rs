//! Quadrature helpers: cumulative fourth-order integration of sampled data and
//! composite Simpson for callables.

use std::ops::{Add, Mul};

/// Weights of the cubic through `nodes` integrated over `[a, b]`.
///
/// Two-point Gauss–Legendre is exact for cubics, so the Lagrange basis is
/// sampled at the two Gauss nodes.
fn cubic_weights(nodes: &[f64], a: f64, b: f64) -> Vec<f64> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let g = half / 3f64.sqrt();
    let pts = [mid - g, mid + g];
    let k = nodes.len();
    let mut w = vec![0.0; k];
    for &s in &pts {
        for j in 0..k {
            let mut l = 1.0;
            for m in 0..k {
                if m != j {
                    l *= (s - nodes[m]) / (nodes[j] - nodes[m]);
                }
            }
            w[j] += half * l;
        }
    }
    w
}

/// Running integral `F_i = ∫_{t_0}^{t_i} f dt` for samples on an increasing,
/// possibly non-uniform grid. Each interval is integrated against the local
/// cubic interpolant through four neighbouring samples, so the result is
/// fourth-order accurate. Fewer than four samples fall back to the highest
/// available degree.
pub fn cumulative<T>(ts: &[f64], fs: &[T]) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    assert_eq!(ts.len(), fs.len(), "sample count mismatch");
    let n = ts.len();
    let mut out = vec![T::default(); n];
    if n < 2 {
        return out;
    }
    let width = n.min(4);
    for i in 0..n - 1 {
        // Prefer the stencil centered on [t_i, t_{i+1}], clamped to the grid.
        let lo = i.saturating_sub(1).min(n - width);
        let nodes = &ts[lo..lo + width];
        let w = cubic_weights(nodes, ts[i], ts[i + 1]);
        let mut acc = T::default();
        for (j, wj) in w.iter().enumerate() {
            acc = acc + fs[lo + j] * *wj;
        }
        out[i + 1] = out[i] + acc;
    }
    out
}

/// Total integral of sampled data (last entry of [`cumulative`]).
pub fn integrate_samples<T>(ts: &[f64], fs: &[T]) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    cumulative(ts, fs).last().copied().unwrap_or_default()
}

/// Composite Simpson rule on `n` panels (rounded up to even).
pub fn simpson<T, F>(mut f: F, a: f64, b: f64, n: usize) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    F: FnMut(f64) -> T,
{
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let wgt = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc + f(a + h * i as f64) * wgt;
    }
    acc * (h / 3.0)
}

/// Trapezoid sum on a uniform grid.
pub fn trapezoid<T>(fs: &[T], dx: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    if fs.len() < 2 {
        return T::default();
    }
    let mut acc = (fs[0] + fs[fs.len() - 1]) * 0.5;
    for v in &fs[1..fs.len() - 1] {
        acc = acc + *v;
    }
    acc * dx
}

/// Uniform grid of `n` points covering `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
