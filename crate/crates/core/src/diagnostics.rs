//! Posterior summaries and MCMC quality metrics: effective sample size,
//! rank-normalized split R-hat, highest density intervals, relative
//! reconstruction error, autocorrelation and cumulative-mean series.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gibbs::ChainRecord;

/// Effective sample size estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub n_eff: f64,
    /// Integrated autocorrelation time `1 + 2 Σ ρ_t` at the truncation point.
    pub tau_int: f64,
    /// Set when the chain was (numerically) constant.
    pub degenerate: bool,
}

/// `n_eff = n / (1 + 2 Σ ρ_t)` with the autocorrelation sum truncated by
/// Geyer's initial positive sequence: lags accumulate in adjacent pairs until
/// a pair sum turns negative. The estimate is clipped to `[1, n]`.
pub fn effective_sample_size(chain: &[f64]) -> Result<EssEstimate> {
    let n = chain.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "effective_sample_size requires at least 10 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = chain.iter().sum::<f64>() / nf;
    let c0 = chain.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    if c0 <= 0.0 || !c0.is_finite() {
        return Ok(EssEstimate {
            n_eff: 1.0,
            tau_int: nf,
            degenerate: true,
        });
    }
    let rho = |t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - t {
            s += (chain[i] - mean) * (chain[i + t] - mean);
        }
        s / nf / c0
    };
    let mut tau = 1.0;
    let mut t = 1;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        t += 2;
    }
    let n_eff = (nf / tau).clamp(1.0, nf);
    Ok(EssEstimate {
        n_eff,
        tau_int: tau,
        degenerate: false,
    })
}

/// Rank-normalized split R-hat over two or more equal-length chains.
///
/// Chains are split in half, all draws are jointly rank-normalized through
/// the standard normal quantile function, and the classic potential scale
/// reduction factor is computed on the transformed splits.
pub fn split_r_hat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::invalid(format!(
            "split_r_hat requires at least 2 chains, got {}",
            chains.len()
        )));
    }
    let len = chains.iter().map(|c| c.len()).min().unwrap();
    let half = len / 2;
    if half < 2 {
        return Err(Error::invalid("chains too short to split"));
    }
    let mut splits: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        splits.push(&c[..half]);
        splits.push(&c[len - half..len]);
    }
    let z = rank_normalize(&splits);
    Ok(psrf(&z))
}

/// Joint rank normalization with average ranks for ties:
/// `z = Φ^{-1}((rank - 3/8) / (S + 1/4))`.
fn rank_normalize(splits: &[&[f64]]) -> Vec<Vec<f64>> {
    let total: usize = splits.iter().map(|s| s.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (j, s) in splits.iter().enumerate() {
        for (i, &v) in s.iter().enumerate() {
            indexed.push((v, j * total + i));
        }
    }
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank = vec![0.0; total];
    let mut pos = 0;
    let flat_index = |packed: usize| (packed / total, packed % total);
    let mut offsets = vec![0usize; splits.len()];
    let mut acc = 0;
    for (j, s) in splits.iter().enumerate() {
        offsets[j] = acc;
        acc += s.len();
    }
    while pos < total {
        let mut end = pos + 1;
        while end < total && indexed[end].0 == indexed[pos].0 {
            end += 1;
        }
        let avg = (pos + 1 + end) as f64 / 2.0; // average of ranks pos+1..=end
        for item in &indexed[pos..end] {
            let (j, i) = flat_index(item.1);
            rank[offsets[j] + i] = avg;
        }
        pos = end;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    splits
        .iter()
        .enumerate()
        .map(|(j, sp)| {
            (0..sp.len())
                .map(|i| normal.inverse_cdf((rank[offsets[j] + i] - 0.375) / (s + 0.25)))
                .collect()
        })
        .collect()
}

/// Classic potential scale reduction factor over equal-length chains.
fn psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Shortest contiguous interval containing `ceil(level * n)` sorted samples;
/// ties break toward the lowest start.
pub fn hdi(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 20 {
        return Err(Error::invalid(format!(
            "hdi requires at least 20 samples, got {n}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(format!("hdi level must be in (0,1), got {level}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[h - 1]);
    let mut width = best.1 - best.0;
    for i in 1..=n - h {
        let w = sorted[i + h - 1] - sorted[i];
        if w < width {
            width = w;
            best = (sorted[i], sorted[i + h - 1]);
        }
    }
    Ok(best)
}

/// `ε_rel = ‖x̄ - x_true‖₂ / ‖x_true‖₂`.
pub fn relative_error(x_bar: &[f64], x_true: &[f64]) -> Result<f64> {
    if x_bar.len() != x_true.len() {
        return Err(Error::dims(format!(
            "relative_error: lengths {} vs {}",
            x_bar.len(),
            x_true.len()
        )));
    }
    let denom: f64 = x_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::invalid("relative_error: zero-norm truth"));
    }
    let num: f64 = x_bar
        .iter()
        .zip(x_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Autocorrelations `ρ_0..ρ_max_lag` (plot data).
pub fn autocorrelation_series(chain: &[f64], max_lag: usize) -> Vec<f64> {
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let c0: f64 = chain.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    if c0 <= 0.0 {
        return vec![1.0; max_lag.min(n - 1) + 1];
    }
    (0..=max_lag.min(n - 1))
        .map(|t| {
            (0..n - t)
                .map(|i| (chain[i] - mean) * (chain[i + t] - mean))
                .sum::<f64>()
                / c0
        })
        .collect()
}

/// Running means `x̄_1..x̄_n` (plot data).
pub fn cumulative_means(chain: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(chain.len());
    let mut s = 0.0;
    for (i, &v) in chain.iter().enumerate() {
        s += v;
        out.push(s / (i + 1) as f64);
    }
    out
}

/// Summary of one scalar block.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub std: f64,
    pub n_eff: f64,
}

/// Per-coordinate and per-block posterior summary of a run.
///
/// Scalar blocks are reported on the scale of the observable quantities:
/// `tau = sqrt(tau2)`, `sigma_obs = sqrt(sigma2_obs)`, and `nu` as is.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub std: Vec<f64>,
    pub hdi_lo: Vec<f64>,
    pub hdi_hi: Vec<f64>,
    pub scalar_blocks: BTreeMap<String, ScalarSummary>,
    pub eps_rel: Option<f64>,
    pub r_hat: BTreeMap<String, f64>,
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn scalar_summary(chain: &[f64]) -> Result<ScalarSummary> {
    let (mean, std) = moments(chain);
    let ess = effective_sample_size(chain)?;
    Ok(ScalarSummary {
        mean,
        std,
        n_eff: ess.n_eff,
    })
}

/// Scalar chains of a record, transformed to reporting scale.
pub fn scalar_chains(record: &ChainRecord) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![
        (
            "sigma_obs".to_string(),
            record.sigma2_obs.iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
        ),
        (
            "tau".to_string(),
            record.tau2.iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
        ),
    ];
    if let Some(nu) = &record.nu {
        out.push(("nu".to_string(), nu.clone()));
    }
    out
}

/// Summarizes one or more chains of the same run configuration. `r_hat`
/// entries are filled when two or more chains are given (the `x` entry is the
/// maximum over coordinates).
pub fn summarize_chains(
    records: &[ChainRecord],
    x_true: Option<&[f64]>,
    hdi_level: f64,
) -> Result<PosteriorSummary> {
    if records.is_empty() {
        return Err(Error::invalid("summarize_chains: no records"));
    }
    let d = records[0].x.first().map(|r| r.len()).unwrap_or(0);
    let total: usize = records.iter().map(|r| r.x.len()).sum();

    let mut mean = Vec::with_capacity(d);
    let mut median = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    let mut hdi_lo = Vec::with_capacity(d);
    let mut hdi_hi = Vec::with_capacity(d);
    let mut column = Vec::with_capacity(total);
    for j in 0..d {
        column.clear();
        for r in records {
            column.extend(r.x.iter().map(|row| row[j]));
        }
        let (m, s) = moments(&column);
        let (lo, hi) = hdi(&column, hdi_level)?;
        let mut sorted = column.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let med = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        mean.push(m);
        median.push(med);
        std.push(s);
        hdi_lo.push(lo);
        hdi_hi.push(hi);
    }

    let mut scalar_blocks = BTreeMap::new();
    for (name, _) in scalar_chains(&records[0]) {
        let pooled: Vec<f64> = records
            .iter()
            .flat_map(|r| {
                scalar_chains(r)
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, c)| c)
                    .unwrap_or_default()
            })
            .collect();
        scalar_blocks.insert(name, scalar_summary(&pooled)?);
    }

    let mut r_hat = BTreeMap::new();
    if records.len() >= 2 {
        for (name, _) in scalar_chains(&records[0]) {
            let per_chain: Vec<Vec<f64>> = records
                .iter()
                .map(|r| {
                    scalar_chains(r)
                        .into_iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, c)| c)
                        .unwrap_or_default()
                })
                .collect();
            r_hat.insert(name, split_r_hat(&per_chain)?);
        }
        let mut worst: f64 = 0.0;
        for j in 0..d {
            let per_chain: Vec<Vec<f64>> = records
                .iter()
                .map(|r| r.x.iter().map(|row| row[j]).collect())
                .collect();
            worst = worst.max(split_r_hat(&per_chain)?);
        }
        r_hat.insert("x_max".into(), worst);
    }

    let eps_rel = match x_true {
        Some(truth) => Some(relative_error(&mean, truth)?),
        None => None,
    };

    Ok(PosteriorSummary {
        mean,
        median,
        std,
        hdi_lo,
        hdi_hi,
        scalar_blocks,
        eps_rel,
        r_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let innov = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = rho * x + innov * z;
                x
            })
            .collect()
    }

    #[test]
    fn ess_iid_near_n() {
        let chain = ar1(0.0, 100_000, 1);
        let ess = effective_sample_size(&chain).unwrap();
        assert!(
            (ess.n_eff / 100_000.0 - 1.0).abs() < 0.10,
            "n_eff {}",
            ess.n_eff
        );
    }

    #[test]
    fn ess_ar1_matches_analytic() {
        // IACT of AR(1) is (1+rho)/(1-rho) = 19 at rho = 0.9.
        let n = 100_000;
        let chain = ar1(0.9, n, 2);
        let ess = effective_sample_size(&chain).unwrap();
        let expect = n as f64 * 0.1 / 1.9;
        assert!(
            (ess.n_eff / expect - 1.0).abs() < 0.15,
            "n_eff {} vs {expect}",
            ess.n_eff
        );
    }

    #[test]
    fn ess_monotone_in_correlation() {
        let mut last = f64::INFINITY;
        for (i, &rho) in [0.0, 0.5, 0.9, 0.99].iter().enumerate() {
            let ess = effective_sample_size(&ar1(rho, 100_000, 3 + i as u64))
                .unwrap()
                .n_eff;
            assert!(ess < last, "rho={rho}: {ess} not below {last}");
            last = ess;
        }
    }

    #[test]
    fn ess_constant_chain_degenerates() {
        let ess = effective_sample_size(&vec![2.5; 100]).unwrap();
        assert_eq!(ess.n_eff, 1.0);
        assert!(ess.degenerate);
    }

    #[test]
    fn ess_bounds_and_short_input() {
        assert!(effective_sample_size(&[1.0; 5]).is_err());
        let chain = ar1(0.999, 1000, 4);
        let ess = effective_sample_size(&chain).unwrap();
        assert!(ess.n_eff >= 1.0 && ess.n_eff <= 1000.0);
    }

    #[test]
    fn rhat_identical_distributions() {
        let chains: Vec<Vec<f64>> = (0..5).map(|i| ar1(0.0, 10_000, 10 + i)).collect();
        let r = split_r_hat(&chains).unwrap();
        assert!(r < 1.01, "r_hat {r}");
    }

    #[test]
    fn rhat_detects_gross_disagreement() {
        // Rank normalization saturates for fully separated chains: two chains
        // at means 0 and 5 give R-hat ~ 1.83 (the classic variant exceeds 2).
        let a = ar1(0.0, 5_000, 20);
        let b: Vec<f64> = ar1(0.0, 5_000, 21).iter().map(|v| v + 5.0).collect();
        let r = split_r_hat(&[a, b]).unwrap();
        assert!(r > 1.7, "r_hat {r}");
    }

    #[test]
    fn rhat_requires_two_chains() {
        assert!(split_r_hat(&[ar1(0.0, 100, 22)]).is_err());
    }

    #[test]
    fn rhat_invariant_under_monotone_transform() {
        let chains: Vec<Vec<f64>> = (0..4).map(|i| ar1(0.3, 4_000, 30 + i)).collect();
        let r1 = split_r_hat(&chains).unwrap();
        let transformed: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|v| v.exp()).collect())
            .collect();
        let r2 = split_r_hat(&transformed).unwrap();
        assert!((r1 - r2).abs() < 1e-12, "{r1} vs {r2}");
    }

    #[test]
    fn hdi_uniform_grid() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (lo, hi) = hdi(&samples, 0.95).unwrap();
        // All 95-sample runs tie; lowest start wins.
        assert_eq!(lo, 1.0);
        assert_eq!(hi, 95.0);
    }

    #[test]
    fn hdi_standard_normal_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let (lo, hi) = hdi(&samples, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.05, "lo {lo}");
        assert!((hi - 1.96).abs() < 0.05, "hi {hi}");
    }

    #[test]
    fn hdi_exponential_hugs_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let exp = Exp::new(1.0).unwrap();
        let samples: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut rng)).collect();
        let (lo, _) = hdi(&samples, 0.95).unwrap();
        assert!(lo < 0.02, "lo {lo}");
    }

    #[test]
    fn hdi_no_wider_than_central_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let exp = Exp::new(0.7).unwrap();
        for _ in 0..5 {
            let mut samples: Vec<f64> = (0..5_000).map(|_| exp.sample(&mut rng)).collect();
            let (lo, hi) = hdi(&samples, 0.9).unwrap();
            samples.sort_unstable_by(f64::total_cmp);
            let n = samples.len();
            let central = samples[(0.95 * n as f64) as usize] - samples[(0.05 * n as f64) as usize];
            assert!(hi - lo <= central + 1e-12);
        }
    }

    #[test]
    fn hdi_requires_enough_samples() {
        assert!(hdi(&[1.0; 10], 0.95).is_err());
    }

    #[test]
    fn relative_error_basics() {
        let truth = [3.0, 4.0];
        assert_eq!(relative_error(&truth, &truth).unwrap(), 0.0);
        let double = [6.0, 8.0];
        assert!((relative_error(&double, &truth).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&[1.0], &[0.0]).is_err());
        assert!(relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cumulative_means_track_mean() {
        let cm = cumulative_means(&[1.0, 3.0, 5.0]);
        assert_eq!(cm, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn autocorr_series_starts_at_one() {
        let chain = ar1(0.8, 10_000, 50);
        let ac = autocorrelation_series(&chain, 20);
        assert_eq!(ac.len(), 21);
        assert!((ac[0] - 1.0).abs() < 1e-12);
        assert!(ac[1] > 0.7 && ac[1] < 0.9, "lag-1 {}", ac[1]);
    }
}
