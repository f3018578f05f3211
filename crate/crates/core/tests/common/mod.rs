//! Shared oracle machinery for the integration suites: quadrature rules,
//! density-normalization checks, a hand-rolled dense solver, and classical
//! test statistics. Everything here is independent of the library's own
//! numerical paths.

#![allow(dead_code)]

use statrs::distribution::ContinuousCDF;

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Simpson with interval doubling until successive values agree to `rel_tol`.
pub fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut n = 2048;
    let mut last = simpson(f, a, b, n);
    for _ in 0..8 {
        n *= 2;
        let next = simpson(f, a, b, n);
        if (next - last).abs() <= rel_tol * next.abs().max(1e-300) {
            return next;
        }
        last = next;
    }
    last
}

/// Tanh-sinh (double exponential) quadrature on (a, b); robust to endpoint
/// singularities.
pub fn tanh_sinh(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let h = 1e-3;
    let mut sum = 0.0;
    let n = 8000;
    for k in -n..=n {
        let t = k as f64 * h;
        let q = std::f64::consts::FRAC_PI_2 * t.sinh();
        let x = q.tanh();
        let w = std::f64::consts::FRAC_PI_2 * t.cosh() / q.cosh().powi(2);
        let xx = mid + half * x;
        if xx > a && xx < b {
            let v = f(xx);
            if v.is_finite() {
                sum += w * v;
            }
        }
    }
    sum * half * h
}

/// Normalizes `exp(log_unnorm)` over `(lo, hi)` by quadrature in log space
/// (the support must be positive) and returns the sup relative deviation of
/// the normalized product from `exp(candidate_logpdf)` over a uniform grid of
/// `n_grid` points on `[grid_lo, grid_hi]`.
pub fn sup_rel_error_vs_normalized_product(
    log_unnorm: &dyn Fn(f64) -> f64,
    candidate_logpdf: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    grid_lo: f64,
    grid_hi: f64,
    n_grid: usize,
) -> f64 {
    assert!(lo > 0.0 && hi > lo);
    // Peak of the integrand in v = ln z coordinates, for stable exponentials.
    let vlo = lo.ln();
    let vhi = hi.ln();
    let peak = (0..2000)
        .map(|i| {
            let v = vlo + (vhi - vlo) * i as f64 / 1999.0;
            log_unnorm(v.exp()) + v
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let integrand = move |v: f64| (log_unnorm(v.exp()) + v - peak).exp();
    let z = simpson_adaptive(&integrand, vlo, vhi, 1e-12);
    let log_z = z.ln() + peak;

    let mut sup = 0.0f64;
    for i in 0..n_grid {
        let x = grid_lo + (grid_hi - grid_lo) * i as f64 / (n_grid - 1) as f64;
        let normalized = log_unnorm(x) - log_z;
        let rel = ((normalized - candidate_logpdf(x)).exp() - 1.0).abs();
        sup = sup.max(rel);
    }
    sup
}

/// Quantile of a distribution given its log-unnormalized density on a
/// positive support, by bisecting the quadrature CDF.
pub fn quantile_from_log_density(
    log_unnorm: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    p: f64,
) -> f64 {
    let vlo = lo.ln();
    let vhi = hi.ln();
    let peak = (0..2000)
        .map(|i| {
            let v = vlo + (vhi - vlo) * i as f64 / 1999.0;
            log_unnorm(v.exp()) + v
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let integrand = move |v: f64| (log_unnorm(v.exp()) + v - peak).exp();
    let total = simpson_adaptive(&integrand, vlo, vhi, 1e-11);
    let mut a = vlo;
    let mut b = vhi;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let mass = simpson_adaptive(&integrand, vlo, m, 1e-10) / total;
        if mass < p {
            a = m;
        } else {
            b = m;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Two-sample KS critical value at level alpha.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Upper critical value of the chi-squared distribution.
pub fn chi2_critical(dof: usize, alpha: f64) -> f64 {
    statrs::distribution::ChiSquared::new(dof as f64)
        .unwrap()
        .inverse_cdf(1.0 - alpha)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(p)
}

/// Dense linear solve by Gaussian elimination with partial pivoting
/// (row-major `a`, overwritten). Independent of the library's solvers.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert_eq!(a.len(), n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for row in col + 1..n {
            let factor = a[row][col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Dense inverse through repeated solves.
pub fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = dense_solve(a.to_vec(), e);
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    inv
}

pub fn mean_and_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
