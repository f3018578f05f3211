//! Discrete linear inverse problem: Gaussian-kernel forward operators,
//! Gaussian likelihood, synthetic truth signals, and data generation.
//!
//! Kernel matrices discretize the Fredholm integral operator on [0,1] (or
//! [0,1]^2) by the midpoint rule with uniform nodes `s_j = (j - 1/2)/N` and
//! quadrature weight `1/N` per axis. Kernel widths are taken in the same
//! units as the nodes; experiment presets convert grid-index widths by
//! dividing by `N`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::LN_2PI;
use crate::error::{Error, Result};
use crate::operators::Geometry;

/// Forward operator `A`, either an explicit dense matrix or the separable
/// 2D form `K ⊗ K` kept as its 1D factor.
///
/// For the Kronecker form and row-major vectorized images, `A x = K X Kᵀ`
/// with `X` the image, so matrix-vector products cost `O(N^3)` instead of
/// `O(N^4)`.
#[derive(Clone, Debug)]
pub enum ForwardOp {
    Dense(DMatrix<f64>),
    /// `A = factor ⊗ factor`; square, `m = d = N^2`.
    Kron2D { factor: DMatrix<f64> },
}

impl ForwardOp {
    pub fn nrows(&self) -> usize {
        match self {
            ForwardOp::Dense(a) => a.nrows(),
            ForwardOp::Kron2D { factor } => factor.nrows() * factor.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            ForwardOp::Dense(a) => a.ncols(),
            ForwardOp::Kron2D { factor } => factor.ncols() * factor.ncols(),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ForwardOp::Dense(a) => {
                let y = a * DVector::from_column_slice(x);
                y.as_slice().to_vec()
            }
            ForwardOp::Kron2D { factor } => kron_apply(factor, factor, x),
        }
    }

    /// `v = Aᵀ y`.
    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        match self {
            ForwardOp::Dense(a) => {
                let v = a.transpose() * DVector::from_column_slice(y);
                v.as_slice().to_vec()
            }
            ForwardOp::Kron2D { factor } => {
                let ft = factor.transpose();
                kron_apply(&ft, &ft, y)
            }
        }
    }

    /// `v = AᵀA x`, using the precomputed Gram factor in the Kronecker case.
    pub fn gram_matvec(&self, gram: &Gram, x: &[f64]) -> Vec<f64> {
        match gram {
            Gram::Dense(g) => {
                let v = g * DVector::from_column_slice(x);
                v.as_slice().to_vec()
            }
            Gram::Kron2D { factor } => kron_apply(factor, factor, x),
        }
    }

    /// Column sums of `A` (the response mass of each unknown).
    pub fn column_sums(&self) -> Vec<f64> {
        match self {
            ForwardOp::Dense(a) => (0..a.ncols()).map(|j| a.column(j).sum()).collect(),
            ForwardOp::Kron2D { factor } => {
                let cs: Vec<f64> = (0..factor.ncols()).map(|j| factor.column(j).sum()).collect();
                let mut out = Vec::with_capacity(cs.len() * cs.len());
                for &a in &cs {
                    for &b in &cs {
                        out.push(a * b);
                    }
                }
                out
            }
        }
    }

    /// Precomputes `AᵀA` in the matching representation.
    pub fn gram(&self) -> Gram {
        match self {
            ForwardOp::Dense(a) => Gram::Dense(a.transpose() * a),
            ForwardOp::Kron2D { factor } => Gram::Kron2D {
                factor: factor.transpose() * factor,
            },
        }
    }

    /// Materializes the full matrix; memory-heavy for large grids.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ForwardOp::Dense(a) => a.clone(),
            ForwardOp::Kron2D { factor } => kron_dense(factor, factor),
        }
    }
}

/// Precomputed `AᵀA`.
#[derive(Clone, Debug)]
pub enum Gram {
    Dense(DMatrix<f64>),
    Kron2D { factor: DMatrix<f64> },
}

impl Gram {
    /// Diagonal of `AᵀA`.
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Gram::Dense(g) => g.diagonal().as_slice().to_vec(),
            Gram::Kron2D { factor } => {
                let diag: Vec<f64> = factor.diagonal().as_slice().to_vec();
                let n = diag.len();
                let mut out = Vec::with_capacity(n * n);
                for &a in &diag {
                    for &b in &diag {
                        out.push(a * b);
                    }
                }
                out
            }
        }
    }

    /// Adds `scale * AᵀA` into a dense matrix.
    pub fn add_into_dense(&self, dense: &mut DMatrix<f64>, scale: f64) {
        match self {
            Gram::Dense(g) => {
                dense.zip_apply(g, |t, s| *t += scale * s);
            }
            Gram::Kron2D { factor } => {
                let n = factor.nrows();
                for i1 in 0..n {
                    for j1 in 0..n {
                        let f1 = factor[(i1, j1)];
                        for i2 in 0..n {
                            for j2 in 0..n {
                                dense[(i1 * n + i2, j1 * n + j2)] += scale * f1 * factor[(i2, j2)];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `(P ⊗ Q) x` for a row-major vectorized matrix `x`: computes `P X Qᵀ`.
fn kron_apply(p: &DMatrix<f64>, q: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = q.ncols();
    assert_eq!(x.len(), p.ncols() * n);
    // Row-major x of shape (p.ncols, q.ncols) == nalgebra transpose of column-major.
    let xm = DMatrix::from_row_slice(p.ncols(), n, x);
    let out = p * xm * q.transpose();
    let mut v = Vec::with_capacity(out.nrows() * out.ncols());
    for r in 0..out.nrows() {
        for c in 0..out.ncols() {
            v.push(out[(r, c)]);
        }
    }
    v
}

fn kron_dense(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let (pr, pc) = (p.nrows(), p.ncols());
    let (qr, qc) = (q.nrows(), q.ncols());
    let mut out = DMatrix::zeros(pr * qr, pc * qc);
    for i1 in 0..pr {
        for j1 in 0..pc {
            let v1 = p[(i1, j1)];
            for i2 in 0..qr {
                for j2 in 0..qc {
                    out[(i1 * qr + i2, j1 * qc + j2)] = v1 * q[(i2, j2)];
                }
            }
        }
    }
    out
}

/// Discrete linear inverse problem `y = A x + e`.
#[derive(Clone, Debug)]
pub struct LinearInverseProblem {
    pub a: ForwardOp,
    pub y: Vec<f64>,
    pub m: usize,
    pub d: usize,
    pub geometry: Geometry,
}

impl LinearInverseProblem {
    pub fn new(a: ForwardOp, y: Vec<f64>, geometry: Geometry) -> Result<Self> {
        let (m, d) = (a.nrows(), a.ncols());
        if y.len() != m {
            return Err(Error::dims(format!(
                "data length {} does not match operator rows {m}",
                y.len()
            )));
        }
        if geometry.dim() != d {
            return Err(Error::dims(format!(
                "geometry dimension {} does not match operator columns {d}",
                geometry.dim()
            )));
        }
        Ok(Self { a, y, m, d, geometry })
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.a.matvec(x);
        self.y.iter().zip(&ax).map(|(y, ax)| y - ax).collect()
    }

    pub fn residual_sum_squares(&self, x: &[f64]) -> f64 {
        self.residual(x).iter().map(|r| r * r).sum()
    }
}

/// Noise variance and its inverse-gamma hyperprior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2_obs: f64,
    pub hyper_a: f64,
    pub hyper_b: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma2_obs: 1.0,
            hyper_a: 1.0,
            hyper_b: 1e-4,
        }
    }
}

/// Ground truth used to synthesize data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthBundle {
    pub x_true: Vec<f64>,
    pub sigma_obs_true: f64,
    pub seed: u64,
}

impl TruthBundle {
    pub fn new(x_true: Vec<f64>, sigma_obs_true: f64, seed: u64) -> Result<Self> {
        if !(sigma_obs_true > 0.0) {
            return Err(Error::invalid(format!(
                "sigma_obs_true must be > 0, got {sigma_obs_true}"
            )));
        }
        if x_true.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x_true".into()));
        }
        Ok(Self {
            x_true,
            sigma_obs_true,
            seed,
        })
    }
}

/// Midpoint-rule discretization of the 1D Gaussian convolution kernel
/// `exp(-(t-s)^2 / (2 sigma^2))` on [0,1].
///
/// With `exclude_boundary`, the first and last observation rows are dropped,
/// leaving `m = d - 2` equally spaced observation nodes.
pub fn gaussian_kernel_matrix_1d(n: usize, sigma: f64, exclude_boundary: bool) -> Result<DMatrix<f64>> {
    if n < 3 {
        return Err(Error::invalid(format!("grid size must be >= 3, got {n}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("kernel sigma must be > 0, got {sigma}")));
    }
    let node = |j: usize| (j as f64 + 0.5) / n as f64;
    let (row0, rows) = if exclude_boundary { (1, n - 2) } else { (0, n) };
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let weight = 1.0 / n as f64;
    let mut a = DMatrix::zeros(rows, n);
    for i in 0..rows {
        let t = node(row0 + i);
        for j in 0..n {
            let dts = t - node(j);
            a[(i, j)] = weight * (-dts * dts * inv_two_sigma2).exp();
        }
    }
    Ok(a)
}

/// Separable 2D Gaussian blur `A = K̃ ⊗ K̃` matching the midpoint quadrature
/// of the normalized kernel `exp(-|t-s|^2/(2 sigma^2)) / (2 pi sigma^2)` with
/// weight `1/N^2`; `m = d = N^2`.
pub fn gaussian_kernel_factor_2d(n: usize, sigma: f64) -> Result<DMatrix<f64>> {
    let k = gaussian_kernel_matrix_1d(n, sigma, false)?;
    let axis_norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    Ok(k * axis_norm)
}

/// Dense `N^2 x N^2` 2D blur matrix; intended for small-scale checks and
/// matrix dumps. Large grids should use [`ForwardOp::Kron2D`].
pub fn gaussian_kernel_matrix_2d(n: usize, sigma: f64) -> Result<DMatrix<f64>> {
    let factor = gaussian_kernel_factor_2d(n, sigma)?;
    Ok(kron_dense(&factor, &factor))
}

/// Gaussian log-likelihood `-(m/2) log(2 pi sigma2) - ||y - Ax||^2 / (2 sigma2)`.
pub fn log_likelihood(
    problem: &LinearInverseProblem,
    x: &[f64],
    sigma2_obs: f64,
) -> Result<f64> {
    if x.len() != problem.d {
        return Err(Error::dims(format!(
            "x has length {}, expected {}",
            x.len(),
            problem.d
        )));
    }
    if !(sigma2_obs > 0.0) {
        return Err(Error::invalid(format!(
            "sigma2_obs must be > 0, got {sigma2_obs}"
        )));
    }
    let rss = problem.residual_sum_squares(x);
    Ok(-0.5 * problem.m as f64 * (LN_2PI + sigma2_obs.ln()) - 0.5 * rss / sigma2_obs)
}

/// `y = A x_true + e` with iid `N(0, sigma_obs_true^2)` noise, reproducible
/// from the RNG stream.
pub fn synthesize_data<R: Rng + ?Sized>(
    x_true: &[f64],
    a: &ForwardOp,
    sigma_obs_true: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x_true.len() != a.ncols() {
        return Err(Error::dims(format!(
            "x_true has length {}, operator expects {}",
            x_true.len(),
            a.ncols()
        )));
    }
    if !(sigma_obs_true > 0.0) {
        return Err(Error::invalid(format!(
            "sigma_obs_true must be > 0, got {sigma_obs_true}"
        )));
    }
    let mut y = a.matvec(x_true);
    for v in &mut y {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma_obs_true * z;
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Parameterized truth signals. The experiment configs record the exact
// parameters used for each run.
// ---------------------------------------------------------------------------

/// Piecewise-constant signal on [0,1]: `levels[p]` on `[breakpoints[p-1], breakpoints[p])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantSignal {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl Default for PiecewiseConstantSignal {
    fn default() -> Self {
        PiecewiseConstantSignal {
            breakpoints: vec![0.10, 0.28, 0.43, 0.60, 0.68, 0.82],
            levels: vec![0.0, 1.0, 0.35, 0.9, 0.2, 0.55, 0.0],
        }
    }
}

impl PiecewiseConstantSignal {
    pub fn evaluate(&self, s: f64) -> f64 {
        let p = self.breakpoints.partition_point(|&b| b <= s);
        self.levels[p]
    }

    pub fn sample_on_grid(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| self.evaluate((j as f64 + 0.5) / n as f64))
            .collect()
    }
}

/// Smooth signal as a sum of Gaussian bumps `amplitude * exp(-(s-center)^2/(2 width^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBumpSignal {
    /// (amplitude, center, width) triples.
    pub bumps: Vec<(f64, f64, f64)>,
}

impl Default for GaussianBumpSignal {
    fn default() -> Self {
        // Broad low-frequency content plus a pronounced peak near 0.8.
        GaussianBumpSignal {
            bumps: vec![
                (0.45, 0.28, 0.10),
                (0.35, 0.55, 0.09),
                (1.0, 0.80, 0.045),
            ],
        }
    }
}

impl GaussianBumpSignal {
    pub fn evaluate(&self, s: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(a, c, w)| a * (-(s - c) * (s - c) / (2.0 * w * w)).exp())
            .sum()
    }

    pub fn sample_on_grid(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| self.evaluate((j as f64 + 0.5) / n as f64))
            .collect()
    }
}

/// Axis-aligned square plus a disk on a zero background, on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareDiskPhantom {
    /// Square extent `[lo, hi]` in both coordinates (fractions of the side).
    pub square: (f64, f64),
    pub square_value: f64,
    /// Disk center and radius (fractions of the side).
    pub disk_center: (f64, f64),
    pub disk_radius: f64,
    pub disk_value: f64,
}

impl Default for SquareDiskPhantom {
    fn default() -> Self {
        SquareDiskPhantom {
            square: (0.16, 0.45),
            square_value: 1.0,
            disk_center: (0.66, 0.64),
            disk_radius: 0.17,
            disk_value: 1.0,
        }
    }
}

impl SquareDiskPhantom {
    /// Row-major `n x n` image.
    pub fn sample_on_grid(&self, n: usize) -> Vec<f64> {
        let node = |j: usize| (j as f64 + 0.5) / n as f64;
        let mut img = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let (t1, t2) = (node(r), node(c));
                let mut v = 0.0;
                if t1 >= self.square.0 && t1 <= self.square.1 && t2 >= self.square.0 && t2 <= self.square.1 {
                    v = self.square_value;
                }
                let dr = t1 - self.disk_center.0;
                let dc = t2 - self.disk_center.1;
                if (dr * dr + dc * dc).sqrt() <= self.disk_radius {
                    v = self.disk_value;
                }
                img[r * n + c] = v;
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_1d_shape_and_positivity() {
        let a = gaussian_kernel_matrix_1d(130, 4.0 / 130.0, true).unwrap();
        assert_eq!(a.nrows(), 128);
        assert_eq!(a.ncols(), 130);
        assert!(a.iter().all(|&v| v > 0.0));
        // Interior row sums agree within 2%.
        let sums: Vec<f64> = (20..108).map(|i| a.row(i).sum()).collect();
        let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sums.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.02, "row sum spread {lo}..{hi}");
    }

    #[test]
    fn kernel_1d_constant_limit() {
        // sigma much wider than the domain: every entry approaches 1/N.
        let a = gaussian_kernel_matrix_1d(3, 1e6, false).unwrap();
        for &v in a.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_1d_matches_elementwise_oracle() {
        let (n, sigma) = (8, 0.1);
        let a = gaussian_kernel_matrix_1d(n, sigma, false).unwrap();
        let node = |j: usize| (j as f64 + 0.5) / n as f64;
        for i in 0..n {
            for j in 0..n {
                let expect =
                    (-(node(i) - node(j)).powi(2) / (2.0 * sigma * sigma)).exp() / n as f64;
                assert!((a[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kernel_1d_rejects_bad_input() {
        assert!(gaussian_kernel_matrix_1d(2, 1.0, false).is_err());
        assert!(gaussian_kernel_matrix_1d(10, 0.0, false).is_err());
        assert!(gaussian_kernel_matrix_1d(10, -1.0, true).is_err());
    }

    #[test]
    fn kernel_2d_matches_quadruple_loop_oracle() {
        let (n, sigma) = (5, 0.2);
        let a = gaussian_kernel_matrix_2d(n, sigma).unwrap();
        assert_eq!(a.nrows(), 25);
        let node = |j: usize| (j as f64 + 0.5) / n as f64;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
        let weight = 1.0 / (n * n) as f64;
        for i1 in 0..n {
            for i2 in 0..n {
                for j1 in 0..n {
                    for j2 in 0..n {
                        let d2 = (node(i1) - node(j1)).powi(2) + (node(i2) - node(j2)).powi(2);
                        let expect = norm * weight * (-d2 / (2.0 * sigma * sigma)).exp();
                        let got = a[(i1 * n + i2, j1 * n + j2)];
                        assert!(
                            (got - expect).abs() < 1e-12,
                            "entry ({i1},{i2}),({j1},{j2}): {got} vs {expect}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_2d_preserves_constants_in_interior() {
        let n = 24;
        let sigma = 1.5 / n as f64;
        let factor = gaussian_kernel_factor_2d(n, sigma).unwrap();
        let a = ForwardOp::Kron2D { factor };
        let out = a.matvec(&vec![1.0; n * n]);
        // More than 6 kernel widths from the boundary, the blur of a constant
        // image stays constant up to kernel truncation.
        let mid = out[(n / 2) * n + n / 2];
        for r in 10..n - 10 {
            for c in 10..n - 10 {
                assert!((out[r * n + c] - mid).abs() < 1e-6 * mid);
            }
        }
        assert!((mid - 1.0).abs() < 0.01, "interior level {mid}");
    }

    #[test]
    fn kron_matvec_matches_dense() {
        let n = 4;
        let factor = gaussian_kernel_factor_2d(n, 0.3).unwrap();
        let op = ForwardOp::Kron2D { factor: factor.clone() };
        let dense = op.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let got = op.matvec(&x);
        let expect = &dense * DVector::from_column_slice(&x);
        for i in 0..n * n {
            assert!((got[i] - expect[i]).abs() < 1e-13);
        }
        let got_t = op.matvec_transpose(&x);
        let expect_t = dense.transpose() * DVector::from_column_slice(&x);
        for i in 0..n * n {
            assert!((got_t[i] - expect_t[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn gram_matches_dense() {
        let n = 4;
        let factor = gaussian_kernel_factor_2d(n, 0.3).unwrap();
        let op = ForwardOp::Kron2D { factor };
        let dense = op.to_dense();
        let gram = op.gram();
        let expect = dense.transpose() * &dense;
        let mut assembled = DMatrix::zeros(n * n, n * n);
        gram.add_into_dense(&mut assembled, 1.0);
        assert!((&assembled - &expect).abs().max() < 1e-13);
        let diag = gram.diagonal();
        for i in 0..n * n {
            assert!((diag[i] - expect[(i, i)]).abs() < 1e-13);
        }
    }

    #[test]
    fn log_likelihood_zero_residual() {
        let a = ForwardOp::Dense(DMatrix::identity(3, 3));
        let x = vec![0.3, -1.0, 2.0];
        let y = x.clone();
        let problem = LinearInverseProblem::new(a, y, Geometry::Line(3)).unwrap();
        for &s2 in &[0.5, 1.0, 3.7] {
            let ll = log_likelihood(&problem, &x, s2).unwrap();
            assert!((ll + 1.5 * (LN_2PI + s2.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_standard_normal_point() {
        let a = ForwardOp::Dense(DMatrix::from_element(1, 1, 1.0));
        let problem = LinearInverseProblem::new(a, vec![0.0], Geometry::Line(1)).unwrap();
        let ll = log_likelihood(&problem, &[1.0], 1.0).unwrap();
        assert!((ll - (-0.5 * LN_2PI - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn log_likelihood_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5);
        let y: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let s2 = 0.37;
        let problem =
            LinearInverseProblem::new(ForwardOp::Dense(a.clone()), y.clone(), Geometry::Line(3))
                .unwrap();
        let got = log_likelihood(&problem, &x, s2).unwrap();
        // Independent re-evaluation of the density formula.
        let mut rss = 0.0;
        for i in 0..5 {
            let mut axi = 0.0;
            for j in 0..3 {
                axi += a[(i, j)] * x[j];
            }
            rss += (y[i] - axi) * (y[i] - axi);
        }
        let expect = -(5.0 / 2.0) * (2.0 * std::f64::consts::PI * s2).ln() - rss / (2.0 * s2);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_dimension_mismatch() {
        let a = ForwardOp::Dense(DMatrix::identity(3, 3));
        let problem = LinearInverseProblem::new(a, vec![0.0; 3], Geometry::Line(3)).unwrap();
        assert!(log_likelihood(&problem, &[0.0; 2], 1.0).is_err());
        assert!(log_likelihood(&problem, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn synthesize_data_is_seeded() {
        let a = ForwardOp::Dense(DMatrix::identity(4, 4));
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            synthesize_data(&x, &a, 8.654e-3, &mut rng).unwrap()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn synthesize_data_noiseless_limit() {
        let a = ForwardOp::Dense(DMatrix::identity(3, 3));
        let x = vec![0.5, -0.25, 1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = synthesize_data(&x, &a, 1e-300, &mut rng).unwrap();
        for (yi, xi) in y.iter().zip(&x) {
            assert!((yi - xi).abs() < 1e-290);
        }
    }

    #[test]
    fn synthesize_data_noise_std() {
        // Empirical std of y - Ax over many replicates within 3% of the truth.
        let a = ForwardOp::Dense(DMatrix::identity(10, 10));
        let x = vec![0.0; 10];
        let sigma = 8.654e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut sq = 0.0;
        let reps = 10_000;
        for _ in 0..reps {
            let y = synthesize_data(&x, &a, sigma, &mut rng).unwrap();
            sq += y.iter().map(|v| v * v).sum::<f64>();
        }
        let emp = (sq / (reps * 10) as f64).sqrt();
        assert!((emp / sigma - 1.0).abs() < 0.03, "empirical std {emp}");
    }

    #[test]
    fn signals_have_expected_structure() {
        let sharp = PiecewiseConstantSignal::default().sample_on_grid(130);
        assert_eq!(sharp.len(), 130);
        assert_eq!(sharp[0], 0.0);
        assert_eq!(sharp[129], 0.0);
        let distinct: std::collections::BTreeSet<u64> =
            sharp.iter().map(|v| v.to_bits()).collect();
        assert_eq!(distinct.len(), 6);

        let smooth = GaussianBumpSignal::default().sample_on_grid(130);
        let peak_idx = smooth
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let peak_pos = (peak_idx as f64 + 0.5) / 130.0;
        assert!((peak_pos - 0.8).abs() < 0.03, "peak at {peak_pos}");

        let phantom = SquareDiskPhantom::default().sample_on_grid(64);
        assert_eq!(phantom.len(), 64 * 64);
        let on: usize = phantom.iter().filter(|&&v| v > 0.0).count();
        assert!(on > 200 && on < 2500, "support size {on}");
        // Zero boundary ring.
        for i in 0..64 {
            assert_eq!(phantom[i], 0.0);
            assert_eq!(phantom[63 * 64 + i], 0.0);
            assert_eq!(phantom[i * 64], 0.0);
            assert_eq!(phantom[i * 64 + 63], 0.0);
        }
    }
}
