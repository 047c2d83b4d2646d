//! Closed-form laws and exact samplers of the limiting inhomogeneous Poisson
//! propagation process `Lambda([0, y)) = a y^(2/beta)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{ensure, param, Error, Result};
use crate::math::normal_cdf;
use crate::parallel::{rng_from_seed, stream_rng, Exec};
use crate::propagation::{ExtraFactor, MarkKernel};

/// Parameters of the limit process. `sigma` and `k` are only needed for the
/// conditional-distance laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitModel {
    pub a: f64,
    pub beta: f64,
    pub sigma: Option<f64>,
    pub k: f64,
    pub lambda: Option<f64>,
}

impl LimitModel {
    pub fn new(a: f64, beta: f64) -> Result<Self> {
        ensure(a > 0.0 && a.is_finite(), || {
            format!("propagation constant must be positive, got {a}")
        })?;
        ensure(beta > 0.0 && beta.is_finite(), || {
            format!("path-loss exponent must be positive, got {beta}")
        })?;
        Ok(LimitModel {
            a,
            beta,
            sigma: None,
            k: 1.0,
            lambda: None,
        })
    }

    /// `a = lambda pi E[S^(2/beta)] / K^2`.
    pub fn from_network(lambda: f64, k: f64, beta: f64, moment: f64) -> Result<Self> {
        ensure(lambda > 0.0 && k > 0.0 && moment > 0.0, || {
            format!("need positive density, K and moment; got {lambda}, {k}, {moment}")
        })?;
        let mut m = Self::new(lambda * PI * moment / (k * k), beta)?;
        m.k = k;
        m.lambda = Some(lambda);
        Ok(m)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    fn sigma_or_err(&self) -> Result<f64> {
        self.sigma
            .ok_or_else(|| param("conditional-distance laws need sigma in the limit model"))
    }

    /// Mean number of log-losses at most `s`: `a exp(2 s / beta)`.
    pub fn log_mean_measure(&self, s: f64) -> f64 {
        self.a * (2.0 * s / self.beta).exp()
    }
}

/// `a y^(2/beta)`.
pub fn intensity(y: f64, model: &LimitModel) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    model.a * y.powf(2.0 / model.beta)
}

/// Sorted points of the limit process on `(0, l_max]`, via unit-rate
/// arrivals mapped through the inverse intensity.
pub fn sample_limit_process(model: &LimitModel, l_max: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    sample_limit_process_with(model, l_max, &mut rng)
}

pub fn sample_limit_process_with<R: Rng + ?Sized>(
    model: &LimitModel,
    l_max: f64,
    rng: &mut R,
) -> Vec<f64> {
    let cap = intensity(l_max, model);
    let mut out = Vec::with_capacity((cap * 1.2) as usize + 4);
    let mut gamma_sum = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        gamma_sum += e;
        if gamma_sum > cap {
            break;
        }
        out.push((gamma_sum / model.a).powf(model.beta / 2.0));
    }
    out
}

/// Smallest point of the limit process, drawn directly.
pub fn sample_min_loss<R: Rng + ?Sized>(model: &LimitModel, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    (e / model.a).powf(model.beta / 2.0)
}

/// `P(L* >= t) = exp(-a t^(2/beta))`.
pub fn lstar_ccdf(t: f64, model: &LimitModel) -> f64 {
    (-intensity(t, model)).exp()
}

/// `P(S e^(2 sigma^2 / beta) <= (K rho)^beta / u)` for log-normal `S` with
/// `mu = -sigma^2/2`: the law of the distance to a station received with
/// loss `u`.
pub fn conditional_distance_cdf(rho: f64, u: f64, model: &LimitModel) -> Result<f64> {
    let sigma = model.sigma_or_err()?;
    ensure(rho > 0.0 && u > 0.0, || "rho and u must be positive".into())?;
    let beta = model.beta;
    let rhs = beta * (model.k * rho).ln() - u.ln();
    if sigma == 0.0 {
        return Ok(if rhs >= 0.0 { 1.0 } else { 0.0 });
    }
    let s2 = sigma * sigma;
    Ok(normal_cdf((rhs + 0.5 * s2 - 2.0 * s2 / beta) / sigma))
}

/// Draw `R_u = (u^(1/beta) / K) exp(2 sigma^2 / beta^2) S^(1/beta)`.
pub fn sample_conditional_distance<R: Rng + ?Sized>(
    u: f64,
    model: &LimitModel,
    rng: &mut R,
) -> Result<f64> {
    let sigma = model.sigma_or_err()?;
    ensure(u > 0.0, || format!("loss must be positive, got {u}"))?;
    let beta = model.beta;
    let z: f64 = StandardNormal.sample(rng);
    let log_s = -0.5 * sigma * sigma + sigma * z;
    let log_r = u.ln() / beta - model.k.ln() + 2.0 * sigma * sigma / (beta * beta) + log_s / beta;
    Ok(log_r.exp())
}

fn check_total(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Accuracy(format!(
            "type law sums to {sum}, deviation above 1e-9"
        )));
    }
    Ok(())
}

/// Type law of a station given its loss in the Poisson model with log-normal
/// shadowing: `E[G^{T|Z}(. | Z + 2 sigma / beta)]`.
pub fn tilted_type_law(kernel: &MarkKernel, sigma: f64, beta: f64) -> Result<Vec<f64>> {
    ensure(sigma >= 0.0 && beta > 0.0, || "need sigma >= 0 and beta > 0".into())?;
    // E[k(Z + c)] = integral of k(w) against the N(c, 1) density.
    let probs = kernel.gaussian_expectation(2.0 * sigma / beta, f64::INFINITY);
    check_total(&probs)?;
    Ok(probs)
}

/// `G(rho, tau) = integral over (-inf, rho] of G^{T|Z}(tau | z) dG_Z(z)`.
pub fn limit_mark_law(kernel: &MarkKernel, rho: f64, tau: usize) -> Result<f64> {
    ensure(tau < kernel.num_types(), || format!("type index {tau} out of range"))?;
    let all = kernel.gaussian_expectation(0.0, f64::INFINITY);
    check_total(&all)?;
    Ok(kernel.gaussian_expectation(0.0, rho)[tau])
}

/// `E[F^(2/beta)]`.
pub fn suzuki_scale(extra: &ExtraFactor, beta: f64) -> Result<f64> {
    ensure(beta > 0.0, || "beta must be positive".into())?;
    let p = 2.0 / beta;
    let value = match extra {
        ExtraFactor::None => 1.0,
        ExtraFactor::RayleighPower { mean } => mean.powf(p) * gamma(1.0 + p),
        ExtraFactor::GenericSamples { samples } => {
            if samples.iter().any(|&x| x <= 0.0 || x.is_nan()) {
                return Err(param("extra-factor samples must be positive"));
            }
            samples.iter().map(|x| x.powf(p)).sum::<f64>() / samples.len() as f64
        }
    };
    if !value.is_finite() || value <= 0.0 {
        return Err(param(format!("moment E[F^(2/beta)] = {value} is not finite and positive")));
    }
    Ok(value)
}

/// Mean interference from limit-process points beyond `l_max`:
/// `(2a / (beta - 2)) l_max^(2/beta - 1)`.
pub fn interference_tail_mean(model: &LimitModel, l_max: f64) -> f64 {
    2.0 * model.a / (model.beta - 2.0) * l_max.powf(2.0 / model.beta - 1.0)
}

/// SIR of the strongest point: `(1/L*) / (sum 1/L_i - 1/L* + extra)`.
/// Infinite when there is no interference at all.
pub fn sir_from_losses(losses: &[f64], extra_interference: f64) -> f64 {
    let strongest = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let signal = 1.0 / strongest;
    let total: f64 = losses.iter().map(|l| 1.0 / l).sum();
    let interference = (total - signal).max(0.0) + extra_interference;
    if interference == 0.0 {
        f64::INFINITY
    } else {
        signal / interference
    }
}

/// Relative size of the compensated tail against the mean interference from
/// points beyond the median strongest loss.
pub fn tail_share(model: &LimitModel, l_max: f64) -> f64 {
    let l_med = (2f64.ln() / model.a).powf(model.beta / 2.0);
    (l_max / l_med).powf(2.0 / model.beta - 1.0)
}

/// Truncation level meeting a given [`tail_share`].
pub fn l_max_for(model: &LimitModel, rel_tol: f64) -> f64 {
    let l_med = (2f64.ln() / model.a).powf(model.beta / 2.0);
    l_med * rel_tol.powf(1.0 / (2.0 / model.beta - 1.0))
}

/// Independent SIR draws from the limit model.
pub fn sample_limit_sir(
    model: &LimitModel,
    l_max: f64,
    replications: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    ensure(model.beta > 2.0, || {
        format!("interference diverges for beta = {} <= 2", model.beta)
    })?;
    let share = tail_share(model, l_max);
    if share > 1e-3 {
        return Err(Error::Accuracy(format!(
            "l_max = {l_max} leaves a tail share of {share:.2e} (> 1e-3)"
        )));
    }
    let tail = interference_tail_mean(model, l_max);
    Ok(exec.map(replications, |i| {
        let mut rng = stream_rng(seed, 0x5152, i as u64);
        let pts = sample_limit_process_with(model, l_max, &mut rng);
        if pts.is_empty() {
            // No point below l_max: SIR recorded as 0.
            0.0
        } else {
            sir_from_losses(&pts, tail)
        }
    }))
}

/// Monte Carlo `P(SIR > t)` for each threshold.
pub fn sir_ccdf_mc(
    model: &LimitModel,
    thresholds: &[f64],
    replications: usize,
    l_max: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    ensure(thresholds.iter().all(|&t| t > 0.0), || "thresholds must be positive".into())?;
    ensure(replications > 0, || "need at least one replication".into())?;
    let sirs = sample_limit_sir(model, l_max, replications, seed, exec)?;
    Ok(ccdf_at(&sirs, thresholds))
}

/// Fraction of `values` strictly above each threshold.
pub fn ccdf_at(values: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    thresholds
        .iter()
        .map(|&t| (sorted.len() - sorted.partition_point(|&v| v <= t)) as f64 / n)
        .collect()
}
