//! Empirical distributions and Kolmogorov-Smirnov machinery.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};

pub mod protocols;

pub use protocols::{
    convergence_point, critical_sigma_search, default_sir_thresholds, draw_user,
    min_loss_ks_statistics, sample_network_min_losses, sir_experiment, ConvergencePoint,
    ConvergenceSetup, CriticalSigmaProtocol, CriticalSigmaResult, GridEval, MarkFrequency,
    PatternSpec, SirComparison, SirSetup,
};

/// Right-continuous step CDF of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted_values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        Self::from_vec(samples.to_vec())
    }

    pub fn from_vec(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empirical CDF of an empty sample".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::Data("sample contains NaN".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf {
            sorted_values: samples,
        })
    }

    pub fn n(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// `#{x_i <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted_values.partition_point(|&v| v <= x) as f64 / self.n() as f64
    }

    /// `#{x_i < x} / n`, the left limit at `x`.
    pub fn eval_left(&self, x: f64) -> f64 {
        self.sorted_values.partition_point(|&v| v < x) as f64 / self.n() as f64
    }

    /// Distinct values with the CDF just before and at each jump.
    fn jumps(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.n() as f64;
        let v = &self.sorted_values;
        let mut i = 0;
        std::iter::from_fn(move || {
            if i >= v.len() {
                return None;
            }
            let x = v[i];
            let start = i;
            while i < v.len() && v[i] == x {
                i += 1;
            }
            Some((x, start as f64 / n, i as f64 / n))
        })
    }
}

/// `sup |F_n - F|`, checked on both sides of every jump of `F_n`.
pub fn ks_distance(ecdf: &EmpiricalCdf, cdf: impl Fn(f64) -> f64) -> f64 {
    ecdf.jumps()
        .map(|(x, before, after)| {
            let f = cdf(x);
            (after - f).abs().max((f - before).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov quantiles `c(alpha)`.
pub fn kolmogorov_critical(alpha: f64) -> Result<f64> {
    const LEVELS: [(f64, f64); 4] = [(0.01, 1.628), (0.05, 1.358), (0.10, 1.224), (0.20, 1.073)];
    LEVELS
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, c)| c)
        .ok_or_else(|| {
            param(format!(
                "unsupported significance level {alpha}; supported: 0.01, 0.05, 0.10, 0.20"
            ))
        })
}

/// Smallest sample size for which the asymptotic critical values are used.
pub const MIN_ASYMPTOTIC_N: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    /// Effective sample size (`n m / (n + m)` for two-sample tests).
    pub n: f64,
    pub alpha: f64,
    pub critical: f64,
    pub reject: bool,
}

/// One-sample test decision at level `alpha`.
pub fn ks_test(d: f64, n: usize, alpha: f64) -> Result<KsReport> {
    ensure(n >= MIN_ASYMPTOTIC_N, || {
        format!("K-S test needs n >= {MIN_ASYMPTOTIC_N} for asymptotic critical values, got {n}")
    })?;
    report(d, n as f64, alpha)
}

/// Two-sample test decision at level `alpha`.
pub fn ks_test_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsReport> {
    ensure(a.len().min(b.len()) >= MIN_ASYMPTOTIC_N, || {
        format!(
            "two-sample K-S test needs both samples >= {MIN_ASYMPTOTIC_N}, got {} and {}",
            a.len(),
            b.len()
        )
    })?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    report(ks_two_sample(a, b), n * m / (n + m), alpha)
}

fn report(d: f64, n_eff: f64, alpha: f64) -> Result<KsReport> {
    let critical = kolmogorov_critical(alpha)? / n_eff.sqrt();
    Ok(KsReport {
        statistic: d,
        n: n_eff,
        alpha,
        critical,
        reject: d > critical,
    })
}

/// Dvoretzky-Kiefer-Wolfowitz band half-width at confidence `1 - alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
