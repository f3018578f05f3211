//! Random-scan Gibbs sampler for the hierarchical posterior over
//! `(x, σ²_obs, τ², w², ν)`.
//!
//! Each iteration picks one of the five blocks uniformly at random and
//! resamples it from its full conditional:
//!
//! 1. `x | σ², τ², w²` — Gaussian with precision `AᵀA/σ² + LᵀWL` (see
//!    [`crate::gaussian_conditional`]);
//! 2. `σ²_obs | x ~ IG(m/2 + a, ‖y-Ax‖²/2 + b)`;
//! 3. `τ² | x, w² ~ IG(k/2 + a, Σ ([Lx]_i-μ)²/(2w²_i) + b)`;
//! 4. `w²_i | x, τ², ν ~ IG((ν+1)/2, ([Lx]_i-μ)²/(2τ²) + ν/2)` independently;
//! 5. `ν | w²` — no closed form; sampled by random-walk Metropolis on
//!    `log(ν - floor)` with a short within-Gibbs warm-up, the proposal scale
//!    tuned by vanishing adaptation during the global burn-in and frozen
//!    afterwards.
//!
//! The run stores every block each `n_thin` iterations after burn-in, for a
//! total of `n_burnin + n_samples * n_thin` iterations, and is reproducible
//! from its seed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{InverseGamma, NuPrior};
use crate::error::{Error, Result};
use crate::gaussian_conditional::{CgParams, GaussianConditional};
use crate::model::{Gram, LinearInverseProblem};
use crate::operators::DifferenceOperator;

/// Which exact sampler draws the `x` block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XSampler {
    Cholesky,
    PerturbCg { tol: f64, max_iter: usize },
}

impl XSampler {
    pub fn perturb_cg_default() -> Self {
        let p = CgParams::default();
        XSampler::PerturbCg {
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

/// Random-walk Metropolis settings for the ν block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RwmConfig {
    /// Initial proposal standard deviation on the log scale.
    pub init_scale: f64,
    /// Adaptation decay exponent in `t^{-kappa}`.
    pub kappa: f64,
    /// Target acceptance rate (univariate optimum).
    pub target_accept: f64,
}

impl Default for RwmConfig {
    fn default() -> Self {
        RwmConfig {
            init_scale: 0.5,
            kappa: 0.6,
            target_accept: 0.44,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Samples to keep.
    pub n_samples: usize,
    /// Global burn-in iterations.
    pub n_burnin: usize,
    /// Thinning lag: one state stored every `n_thin` iterations.
    pub n_thin: usize,
    /// Within-Gibbs RWM warm-up for the ν block.
    pub nbar_b: usize,
    pub seed: u64,
    pub nu_prior: NuPrior,
    /// Hyperprior on τ².
    pub scale_hyper: InverseGamma,
    /// Hyperprior on σ²_obs.
    pub noise_hyper: InverseGamma,
    /// Prior location μ of the differences.
    pub mu_location: f64,
    pub x_sampler: XSampler,
    /// Store the full `n_samples x k` history of w² (running moments are
    /// always kept).
    pub store_w2: bool,
    pub rwm: RwmConfig,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_samples: 20_000,
            n_burnin: 2_000,
            n_thin: 20,
            nbar_b: 100,
            seed: 0,
            nu_prior: NuPrior::gamma_gt1(),
            scale_hyper: InverseGamma {
                shape: 1.0,
                scale: 1e-4,
            },
            noise_hyper: InverseGamma {
                shape: 1.0,
                scale: 1e-4,
            },
            mu_location: 0.0,
            x_sampler: XSampler::Cholesky,
            store_w2: true,
            rwm: RwmConfig::default(),
        }
    }
}

impl GibbsConfig {
    /// `n = n_burnin + n_samples * n_thin`.
    pub fn total_iterations(&self) -> usize {
        self.n_burnin + self.n_samples * self.n_thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_thin == 0 {
            return Err(Error::InvalidConfig(
                "n_samples and n_thin must be positive".into(),
            ));
        }
        if !(self.mu_location.is_finite()) {
            return Err(Error::InvalidConfig("mu_location must be finite".into()));
        }
        Ok(())
    }
}

/// Current state of one chain.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub x: Vec<f64>,
    pub sigma2_obs: f64,
    pub tau2: f64,
    pub w2: Vec<f64>,
    pub nu: f64,
    pub rwm_log_scale: f64,
    pub rwm_accept_count: u64,
    pub rwm_proposal_count: u64,
    pub iteration: usize,
}

impl GibbsState {
    /// Deterministic data-derived starting state; see [`initial_point_estimate`].
    pub fn init(gp: &GibbsProblem, config: &GibbsConfig) -> Result<Self> {
        let point = initial_point_estimate(
            gp.problem,
            gp.l,
            config.mu_location,
            config.x_sampler,
        )?;
        Ok(GibbsState {
            x: point.x,
            sigma2_obs: point.sigma2_obs,
            tau2: point.tau2,
            w2: point.w2,
            nu: point.nu,
            rwm_log_scale: config.rwm.init_scale.ln(),
            rwm_accept_count: 0,
            rwm_proposal_count: 0,
            iteration: 0,
        })
    }
}

/// Deterministic starting point shared by the samplers.
#[derive(Clone, Debug)]
pub struct InitialPoint {
    pub x: Vec<f64>,
    pub sigma2_obs: f64,
    pub tau2: f64,
    pub w2: Vec<f64>,
    pub nu: f64,
}

/// Builds a cheap data-consistent starting state by one fixed-point sweep:
///
/// 1. local-average estimate `x̃ = Aᵀy / mean((colsum A)²)`;
/// 2. scale hierarchy at `x̃`: `τ² = median((Lx̃)²)`, `w²_i` at its
///    conditional mean, `ν = 3`, `σ² = (0.01 ‖y‖/√m)²`;
/// 3. `x` at the conditional mean given those hyperparameters (a regularized
///    edge-preserving reconstruction);
/// 4. `σ², τ², w²` refreshed at the solved `x` (σ² at the conditional mode).
///
/// Without step 3 the residual of the blurred estimate inflates the first
/// σ²-draw by orders of magnitude, and with a weak likelihood the chain can
/// collapse onto the degenerate flat state (`x ≈ 0`, `τ² ≈ b/(k/2)`,
/// `σ² ≈ var(y)`) that short burn-ins do not escape.
pub fn initial_point_estimate(
    problem: &LinearInverseProblem,
    l: &DifferenceOperator,
    mu_location: f64,
    x_sampler: XSampler,
) -> Result<InitialPoint> {
    let gram = problem.a.gram();
    let aty = problem.a.matvec_transpose(&problem.y);
    let nu = 3.0;

    let cs = problem.a.column_sums();
    let norm = (cs.iter().map(|c| c * c).sum::<f64>() / cs.len() as f64).max(1e-300);
    let x_avg: Vec<f64> = aty.iter().map(|v| v / norm).collect();

    let ynorm = problem.y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sigma2 = (0.01 * ynorm / (problem.m as f64).sqrt()).powi(2).max(1e-12);
    let tau2 = median_sq_difference(l, &x_avg);
    let w2 = conditional_mean_w2(l, &x_avg, tau2, nu, mu_location);

    let gc = GaussianConditional::new(problem, &gram, &aty, l, sigma2, tau2, &w2)?;
    let x = match x_sampler {
        XSampler::Cholesky => gc.mean_cholesky()?,
        XSampler::PerturbCg { tol, max_iter } => gc.solve_perturbed(
            &vec![0.0; problem.m],
            &vec![0.0; l.k()],
            CgParams { tol, max_iter },
        )?,
    };

    let rss = problem.residual_sum_squares(&x);
    // Conditional mode of IG(m/2 + 1, rss/2 + b): scale / (shape + 1).
    let sigma2 = ((0.5 * rss + 1e-4) / (0.5 * problem.m as f64 + 2.0)).max(1e-12);
    let tau2 = median_sq_difference(l, &x);
    let w2 = conditional_mean_w2(l, &x, tau2, nu, mu_location);
    Ok(InitialPoint {
        x,
        sigma2_obs: sigma2,
        tau2,
        w2,
        nu,
    })
}

fn median_sq_difference(l: &DifferenceOperator, x: &[f64]) -> f64 {
    let u = l.apply_vec(x);
    let mut sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    sq.sort_unstable_by(f64::total_cmp);
    sq[sq.len() / 2].max(1e-12)
}

fn conditional_mean_w2(
    l: &DifferenceOperator,
    x: &[f64],
    tau2: f64,
    nu: f64,
    mu_location: f64,
) -> Vec<f64> {
    l.apply_vec(x)
        .iter()
        .map(|&ui| {
            w2_conditional(ui, tau2, nu, mu_location)
                .mean()
                .expect("shape (nu+1)/2 = 2 > 1")
        })
        .collect()
}

/// Problem pieces shared by every update: the operator, its Gram matrix, and
/// `Aᵀy`, precomputed once per chain.
pub struct GibbsProblem<'a> {
    pub problem: &'a LinearInverseProblem,
    pub l: &'a DifferenceOperator,
    pub gram: Gram,
    pub aty: Vec<f64>,
}

impl<'a> GibbsProblem<'a> {
    pub fn new(problem: &'a LinearInverseProblem, l: &'a DifferenceOperator) -> Result<Self> {
        if l.dim() != problem.d {
            return Err(Error::dims(format!(
                "difference operator dimension {} does not match problem dimension {}",
                l.dim(),
                problem.d
            )));
        }
        Ok(GibbsProblem {
            problem,
            l,
            gram: problem.a.gram(),
            aty: problem.a.matvec_transpose(&problem.y),
        })
    }
}

/// Event counters accumulated over a run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct DegeneracyCounters {
    /// w² components clamped at the numerical floor before inversion.
    pub clamped_w2: u64,
    /// Conditional scales that underflowed and were replaced by the
    /// hyperprior scale.
    pub degenerate_scales: u64,
}

/// Per-run sampler statistics, serialized into the run metadata.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub block_counts: Option<[u64; 5]>,
    pub rwm_accept_rate: Option<f64>,
    pub rwm_adapted_scale: Option<f64>,
    pub counters: DegeneracyCounters,
    pub nuts_step_size: Option<f64>,
    pub nuts_divergences: Option<u64>,
    pub nuts_divergence_flag: Option<bool>,
    pub nuts_mean_tree_depth: Option<f64>,
}

/// Thinned post-burn-in samples of every block, with provenance.
#[derive(Clone, Debug)]
pub struct ChainRecord {
    pub sampler: String,
    /// `n_samples x d`.
    pub x: Vec<Vec<f64>>,
    pub sigma2_obs: Vec<f64>,
    pub tau2: Vec<f64>,
    pub nu: Option<Vec<f64>>,
    /// `n_samples x k`, present when the config stored it.
    pub w2: Option<Vec<Vec<f64>>>,
    /// Running mean/std of w² over kept samples (Gibbs only).
    pub w2_mean: Option<Vec<f64>>,
    pub w2_std: Option<Vec<f64>>,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub config_echo: serde_json::Value,
    pub stats: RunStats,
}

impl ChainRecord {
    pub fn n_kept(&self) -> usize {
        self.sigma2_obs.len()
    }
}

// ---------------------------------------------------------------------------
// Conditional distributions (conjugate blocks), exposed for oracle checks.
// ---------------------------------------------------------------------------

/// Conditional 2: `σ²_obs | x ~ IG(m/2 + a, rss/2 + b)`.
pub fn sigma2_conditional(m: usize, rss: f64, hyper: InverseGamma) -> InverseGamma {
    InverseGamma {
        shape: 0.5 * m as f64 + hyper.shape,
        scale: 0.5 * rss + hyper.scale,
    }
}

/// Conditional 3: `τ² | x, w² ~ IG(k/2 + a, Σ (u_i-μ)²/(2w²_i) + b)`, with
/// the sum over all `k` difference components.
pub fn tau2_conditional(u: &[f64], w2: &[f64], mu: f64, hyper: InverseGamma) -> InverseGamma {
    debug_assert_eq!(u.len(), w2.len());
    let s: f64 = u
        .iter()
        .zip(w2)
        .map(|(&ui, &wi)| (ui - mu) * (ui - mu) / (2.0 * wi))
        .sum();
    InverseGamma {
        shape: 0.5 * u.len() as f64 + hyper.shape,
        scale: s + hyper.scale,
    }
}

/// Conditional 4 for one component: `w²_i ~ IG((ν+1)/2, (u_i-μ)²/(2τ²) + ν/2)`.
pub fn w2_conditional(u_i: f64, tau2: f64, nu: f64, mu: f64) -> InverseGamma {
    InverseGamma {
        shape: 0.5 * (nu + 1.0),
        scale: (u_i - mu) * (u_i - mu) / (2.0 * tau2) + 0.5 * nu,
    }
}

/// Log of Conditional 5 up to a constant:
/// `log p(ν) + k[(ν/2)log(ν/2) - logΓ(ν/2)] - (ν/2+1) Σ log w²_i - (ν/2) Σ 1/w²_i`.
pub fn nu_log_conditional(
    nu: f64,
    k: usize,
    sum_ln_w2: f64,
    sum_inv_w2: f64,
    prior: &NuPrior,
) -> f64 {
    let prior_term = prior.logpdf(nu);
    if prior_term == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let h = 0.5 * nu;
    prior_term + k as f64 * (h * h.ln() - ln_gamma(h)) - (h + 1.0) * sum_ln_w2 - h * sum_inv_w2
}

// ---------------------------------------------------------------------------
// Block updates.
// ---------------------------------------------------------------------------

/// Replaces `x` by one exact draw from its Gaussian conditional. Returns the
/// number of w² components clamped at the numerical floor.
pub fn update_x<R: Rng + ?Sized>(
    state: &mut GibbsState,
    gp: &GibbsProblem,
    sampler: XSampler,
    rng: &mut R,
) -> Result<usize> {
    let gc = GaussianConditional::new(
        gp.problem,
        &gp.gram,
        &gp.aty,
        gp.l,
        state.sigma2_obs,
        state.tau2,
        &state.w2,
    )?;
    state.x = match sampler {
        XSampler::Cholesky => gc.sample_cholesky(rng)?,
        XSampler::PerturbCg { tol, max_iter } => {
            gc.sample_perturb_cg(rng, CgParams { tol, max_iter })?
        }
    };
    Ok(gc.clamped)
}

/// Exact inverse-gamma draw for the noise variance. Returns whether the
/// degenerate-scale guard fired.
pub fn update_sigma2_obs<R: Rng + ?Sized>(
    state: &mut GibbsState,
    gp: &GibbsProblem,
    hyper: InverseGamma,
    rng: &mut R,
) -> bool {
    let rss = gp.problem.residual_sum_squares(&state.x);
    let mut cond = sigma2_conditional(gp.problem.m, rss, hyper);
    let degenerate = !(cond.scale > 0.0);
    if degenerate {
        cond.scale = hyper.scale;
    }
    state.sigma2_obs = cond.sample(rng);
    degenerate
}

/// Exact inverse-gamma draw for the global scale. Returns whether the
/// degenerate-scale guard fired.
pub fn update_tau2<R: Rng + ?Sized>(
    state: &mut GibbsState,
    gp: &GibbsProblem,
    hyper: InverseGamma,
    mu: f64,
    rng: &mut R,
) -> bool {
    let u = gp.l.apply_vec(&state.x);
    let mut cond = tau2_conditional(&u, &state.w2, mu, hyper);
    let degenerate = !(cond.scale > 0.0);
    if degenerate {
        cond.scale = hyper.scale;
    }
    state.tau2 = cond.sample(rng);
    degenerate
}

/// Independent exact inverse-gamma draws for all `k` local scales. Returns
/// the number of degenerate-scale substitutions.
pub fn update_w2<R: Rng + ?Sized>(
    state: &mut GibbsState,
    gp: &GibbsProblem,
    mu: f64,
    rng: &mut R,
) -> u64 {
    let u = gp.l.apply_vec(&state.x);
    let mut degenerate = 0;
    for (i, &ui) in u.iter().enumerate() {
        let mut cond = w2_conditional(ui, state.tau2, state.nu, mu);
        if !(cond.scale > 0.0) {
            cond.scale = (0.5 * state.nu).max(f64::MIN_POSITIVE);
            degenerate += 1;
        }
        state.w2[i] = cond.sample(rng);
    }
    degenerate
}

/// RWM-within-Gibbs update of ν: runs `nbar_b + 1` Metropolis steps on
/// `log(ν - floor)` targeting Conditional 5 (with the Jacobian of the log
/// transform) and keeps the final state.
///
/// When `adapt` is set (global burn-in), the proposal log-scale follows the
/// vanishing-adaptation recursion
/// `log σ_{t+1} = log σ_t + t^{-kappa} (α_t - α*)` against the global
/// proposal counter `t`; otherwise the scale is frozen.
pub fn update_nu_rwm<R: Rng + ?Sized>(
    state: &mut GibbsState,
    nu_prior: &NuPrior,
    nbar_b: usize,
    adapt: bool,
    rwm: RwmConfig,
    rng: &mut R,
) -> Result<()> {
    let floor = nu_prior.support_floor();
    let k = state.w2.len();
    let sum_ln_w2: f64 = state.w2.iter().map(|w| w.ln()).sum();
    let sum_inv_w2: f64 = state.w2.iter().map(|w| 1.0 / w).sum();
    // Log-target in θ = log(ν - floor), including the Jacobian term θ.
    let log_target = |theta: f64| -> f64 {
        let nu = floor + theta.exp();
        nu_log_conditional(nu, k, sum_ln_w2, sum_inv_w2, nu_prior) + theta
    };

    let mut theta = (state.nu - floor).ln();
    let mut lt_cur = log_target(theta);
    if !lt_cur.is_finite() {
        return Err(Error::NonFinite(format!(
            "log-target of Conditional 5 at current nu = {}",
            state.nu
        )));
    }
    for _ in 0..=nbar_b {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = theta + state.rwm_log_scale.exp() * z;
        let lt_prop = log_target(proposal);
        // Non-finite proposals are rejected; alpha is the acceptance probability.
        let alpha = if lt_prop.is_finite() {
            (lt_prop - lt_cur).exp().min(1.0)
        } else {
            0.0
        };
        if rng.random::<f64>() < alpha {
            theta = proposal;
            lt_cur = lt_prop;
            state.rwm_accept_count += 1;
        }
        state.rwm_proposal_count += 1;
        if adapt {
            let t = state.rwm_proposal_count as f64;
            state.rwm_log_scale += t.powf(-rwm.kappa) * (alpha - rwm.target_accept);
        }
    }
    state.nu = floor + theta.exp();
    Ok(())
}

/// Executes Algorithm-style random-scan Gibbs: `n_burnin + n_samples*n_thin`
/// iterations, one uniformly chosen block update per iteration, storing all
/// blocks every `n_thin` iterations after burn-in.
pub fn run_gibbs(
    problem: &LinearInverseProblem,
    l: &DifferenceOperator,
    config: &GibbsConfig,
) -> Result<ChainRecord> {
    config.validate()?;
    let start = Instant::now();
    let gp = GibbsProblem::new(problem, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(&gp, config)?;

    let n = config.total_iterations();
    let mut block_counts = [0u64; 5];
    let mut counters = DegeneracyCounters::default();

    let mut x_kept = Vec::with_capacity(config.n_samples);
    let mut sigma2_kept = Vec::with_capacity(config.n_samples);
    let mut tau2_kept = Vec::with_capacity(config.n_samples);
    let mut nu_kept = Vec::with_capacity(config.n_samples);
    let mut w2_kept = config.store_w2.then(Vec::new);
    let k = l.k();
    let mut w2_sum = vec![0.0; k];
    let mut w2_sumsq = vec![0.0; k];

    for i in 1..=n {
        state.iteration = i;
        let in_burnin = i <= config.n_burnin;
        let block = rng.random_range(1..=5u8);
        block_counts[(block - 1) as usize] += 1;
        let step = |e: Error| Error::SamplerAborted {
            iteration: i,
            source: Box::new(e),
        };
        match block {
            1 => counters.clamped_w2 += update_x(&mut state, &gp, config.x_sampler, &mut rng)
                .map_err(step)? as u64,
            2 => {
                if update_sigma2_obs(&mut state, &gp, config.noise_hyper, &mut rng) {
                    counters.degenerate_scales += 1;
                }
            }
            3 => {
                if update_tau2(&mut state, &gp, config.scale_hyper, config.mu_location, &mut rng) {
                    counters.degenerate_scales += 1;
                }
            }
            4 => {
                counters.degenerate_scales +=
                    update_w2(&mut state, &gp, config.mu_location, &mut rng)
            }
            5 => update_nu_rwm(
                &mut state,
                &config.nu_prior,
                config.nbar_b,
                in_burnin,
                config.rwm,
                &mut rng,
            )
            .map_err(step)?,
            _ => unreachable!(),
        }
        debug_assert!(state.sigma2_obs > 0.0 && state.tau2 > 0.0);

        if i > config.n_burnin && (i - config.n_burnin) % config.n_thin == 0 {
            x_kept.push(state.x.clone());
            sigma2_kept.push(state.sigma2_obs);
            tau2_kept.push(state.tau2);
            nu_kept.push(state.nu);
            for j in 0..k {
                w2_sum[j] += state.w2[j];
                w2_sumsq[j] += state.w2[j] * state.w2[j];
            }
            if let Some(ws) = w2_kept.as_mut() {
                ws.push(state.w2.clone());
            }
        }
    }

    let kept = sigma2_kept.len() as f64;
    let w2_mean: Vec<f64> = w2_sum.iter().map(|s| s / kept).collect();
    let w2_std: Vec<f64> = w2_sumsq
        .iter()
        .zip(&w2_mean)
        .map(|(&sq, &m)| ((sq / kept - m * m).max(0.0)).sqrt())
        .collect();

    let stats = RunStats {
        block_counts: Some(block_counts),
        rwm_accept_rate: (state.rwm_proposal_count > 0)
            .then(|| state.rwm_accept_count as f64 / state.rwm_proposal_count as f64),
        rwm_adapted_scale: Some(state.rwm_log_scale.exp()),
        counters,
        ..RunStats::default()
    };

    Ok(ChainRecord {
        sampler: "gibbs".into(),
        x: x_kept,
        sigma2_obs: sigma2_kept,
        tau2: tau2_kept,
        nu: Some(nu_kept),
        w2: w2_kept,
        w2_mean: Some(w2_mean),
        w2_std: Some(w2_std),
        seed: config.seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config_echo: serde_json::to_value(config).expect("config serializes"),
        stats,
    })
}
