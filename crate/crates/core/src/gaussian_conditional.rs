//! Sampling the high-dimensional Gaussian conditional of `x`.
//!
//! The conditional is `N(mu_t, Lt^{-1})` with precision
//! `Lt = AᵀA/σ²_obs + LᵀWL` and mean `Lt mu_t = Aᵀy/σ²_obs`. Two exact
//! samplers target it:
//!
//! * [`GaussianConditional::sample_cholesky`] factors the assembled dense
//!   precision (the Gram matrix of a Gaussian kernel is dense, so a sparse
//!   factorization would fill in anyway);
//! * [`GaussianConditional::sample_perturb_cg`] solves a randomly perturbed
//!   normal system `Lt x = Aᵀ(y+e₁)/σ² + LᵀW^{1/2}e₂` with Jacobi-
//!   preconditioned conjugate gradients, never forming `Lt`.
//!
//! Both draws have the same law; the CG route is the one that scales to the
//! deblurring grid.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Gram, LinearInverseProblem};
use crate::operators::{precision_diagonal, precision_weights, DifferenceOperator, PrecisionMatrix};

/// Lower floor applied to `w²` components before inversion; clamped
/// components are counted and reported.
pub const W2_FLOOR: f64 = 1e-12;

/// Stopping parameters for the conjugate-gradient path.
#[derive(Clone, Copy, Debug)]
pub struct CgParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgParams {
    fn default() -> Self {
        CgParams {
            tol: 1e-8,
            max_iter: 2000,
        }
    }
}

/// The Gaussian conditional `N(mu_t, Lt^{-1})` for fixed hyperparameters.
///
/// Holds the ingredients of the precision rather than the assembled matrix;
/// [`Self::dense_precision`] materializes it for the Cholesky path and for
/// oracle checks.
pub struct GaussianConditional<'a> {
    problem: &'a LinearInverseProblem,
    gram: &'a Gram,
    /// Precomputed `Aᵀy`.
    aty: &'a [f64],
    l: &'a DifferenceOperator,
    sigma2_obs: f64,
    /// `1/(τ² w²_i)` after flooring.
    weights: Vec<f64>,
    /// Number of `w²` components clamped at [`W2_FLOOR`].
    pub clamped: usize,
}

impl<'a> GaussianConditional<'a> {
    pub fn new(
        problem: &'a LinearInverseProblem,
        gram: &'a Gram,
        aty: &'a [f64],
        l: &'a DifferenceOperator,
        sigma2_obs: f64,
        tau2: f64,
        w2: &[f64],
    ) -> Result<Self> {
        if !(sigma2_obs > 0.0) {
            return Err(Error::invalid(format!(
                "sigma2_obs must be > 0, got {sigma2_obs}"
            )));
        }
        let mut clamped = 0;
        let floored: Vec<f64> = w2
            .iter()
            .map(|&w| {
                if w < W2_FLOOR {
                    clamped += 1;
                    W2_FLOOR
                } else {
                    w
                }
            })
            .collect();
        let weights = precision_weights(tau2, &floored, l.k())?;
        Ok(Self {
            problem,
            gram,
            aty,
            l,
            sigma2_obs,
            weights,
            clamped,
        })
    }

    pub fn dim(&self) -> usize {
        self.problem.d
    }

    /// Right-hand side of the mean equation, `Aᵀy / σ²_obs`.
    pub fn mean_rhs(&self) -> Vec<f64> {
        self.aty.iter().map(|v| v / self.sigma2_obs).collect()
    }

    /// `Lt v` without forming the matrix.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.problem.a.gram_matvec(self.gram, v);
        for o in &mut out {
            *o /= self.sigma2_obs;
        }
        let mut lv = vec![0.0; self.l.k()];
        self.l.apply(v, &mut lv);
        for (u, w) in lv.iter_mut().zip(&self.weights) {
            *u *= w;
        }
        let ltwlv = self.l.apply_transpose_vec(&lv);
        for (o, p) in out.iter_mut().zip(&ltwlv) {
            *o += p;
        }
        out
    }

    /// Diagonal of `Lt`, used as the Jacobi preconditioner.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = precision_diagonal(self.l, &self.weights);
        for (d, g) in diag.iter_mut().zip(self.gram.diagonal()) {
            *d += g / self.sigma2_obs;
        }
        diag
    }

    /// Assembles the dense precision `AᵀA/σ² + LᵀWL`.
    pub fn dense_precision(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut lt = DMatrix::zeros(d, d);
        self.gram.add_into_dense(&mut lt, 1.0 / self.sigma2_obs);
        let prior = self.assemble_prior()?;
        prior.lambda.add_into_dense(&mut lt, 1.0);
        Ok(lt)
    }

    fn assemble_prior(&self) -> Result<PrecisionMatrix> {
        // weights already fold in tau2 and the floor; reuse them with tau2 = 1.
        let w2: Vec<f64> = self.weights.iter().map(|&w| 1.0 / w).collect();
        crate::operators::assemble_precision(self.l, 1.0, &w2)
    }

    /// Exact draw by Cholesky: `x = mu_t + R^{-ᵀ} u` with `Lt = R Rᵀ`.
    pub fn sample_cholesky<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let lt = self.dense_precision()?;
        let chol = cholesky_or_err(lt)?;
        let mu = chol.solve(&DVector::from_column_slice(&self.mean_rhs()));
        let u = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        // Lt = L Lᵀ (nalgebra lower factor), so x - mu = L^{-ᵀ} u has covariance Lt^{-1}.
        let mut delta = u;
        chol.l_dirty().tr_solve_lower_triangular_mut(&mut delta);
        Ok((mu + delta).as_slice().to_vec())
    }

    /// Conditional mean `mu_t` via the Cholesky factorization.
    pub fn mean_cholesky(&self) -> Result<Vec<f64>> {
        let chol = cholesky_or_err(self.dense_precision()?)?;
        Ok(chol
            .solve(&DVector::from_column_slice(&self.mean_rhs()))
            .as_slice()
            .to_vec())
    }

    /// Exact draw by perturbation-optimization: solves
    /// `Lt x = Aᵀ(y+e₁)/σ² + LᵀW^{1/2} e₂` by preconditioned CG.
    pub fn sample_perturb_cg<R: Rng + ?Sized>(&self, rng: &mut R, cg: CgParams) -> Result<Vec<f64>> {
        let m = self.problem.m;
        let sigma = self.sigma2_obs.sqrt();
        let e1: Vec<f64> = (0..m).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let e2: Vec<f64> = (0..self.l.k())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.solve_perturbed(&e1, &e2, cg)
    }

    /// The perturbed solve with caller-supplied noise; `e1 = 0, e2 = 0`
    /// recovers the conditional mean.
    pub fn solve_perturbed(&self, e1: &[f64], e2: &[f64], cg: CgParams) -> Result<Vec<f64>> {
        if e1.len() != self.problem.m || e2.len() != self.l.k() {
            return Err(Error::dims("perturbation vectors"));
        }
        let perturbed_y: Vec<f64> = self.problem.y.iter().zip(e1).map(|(y, e)| y + e).collect();
        let mut rhs = self.problem.a.matvec_transpose(&perturbed_y);
        for v in &mut rhs {
            *v /= self.sigma2_obs;
        }
        let scaled: Vec<f64> = e2
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w.sqrt())
            .collect();
        let prior_rhs = self.l.apply_transpose_vec(&scaled);
        for (r, p) in rhs.iter_mut().zip(&prior_rhs) {
            *r += p;
        }
        self.cg_solve(&rhs, cg)
    }

    /// Jacobi-preconditioned conjugate gradients on `Lt x = b`.
    fn cg_solve(&self, b: &[f64], cg: CgParams) -> Result<Vec<f64>> {
        let d = self.dim();
        let inv_diag: Vec<f64> = self.diagonal().iter().map(|&v| 1.0 / v).collect();
        let norm_b = norm(b);
        if norm_b == 0.0 {
            return Ok(vec![0.0; d]);
        }
        let mut x = vec![0.0; d];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut res = norm(&r) / norm_b;
        for _ in 0..cg.max_iter {
            if res <= cg.tol {
                return Ok(x);
            }
            let ap = self.matvec(&p);
            let alpha = rz / dot(&p, &ap);
            for i in 0..d {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res = norm(&r) / norm_b;
            for i in 0..d {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..d {
                p[i] = z[i] + beta * p[i];
            }
        }
        if res <= cg.tol {
            Ok(x)
        } else {
            Err(Error::CgDidNotConverge {
                max_iter: cg.max_iter,
                residual: res,
                tol: cg.tol,
            })
        }
    }
}

fn cholesky_or_err(lt: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let gershgorin = gershgorin_lower_bound(&lt);
    Cholesky::new(lt).ok_or(Error::NotPositiveDefinite {
        min_eigenvalue_estimate: gershgorin,
    })
}

fn gershgorin_lower_bound(m: &DMatrix<f64>) -> f64 {
    let mut bound = f64::INFINITY;
    for i in 0..m.nrows() {
        let off: f64 = (0..m.ncols())
            .filter(|&j| j != i)
            .map(|j| m[(i, j)].abs())
            .sum();
        bound = bound.min(m[(i, i)] - off);
    }
    bound
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
