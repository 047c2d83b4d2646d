//! Regression estimate of the path-loss exponent and the propagation
//! constant from strongest-signal loss data.
//!
//! Under the limit model `ln(-ln P(L* >= t)) = ln a + (2/beta) ln t`, so an
//! ordinary least-squares line through the linearized empirical CCDF gives
//! `beta = 2 / slope` and `a = exp(intercept)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::math::quantile_sorted;
use crate::stats::{ks_distance, EmpiricalCdf};

/// Smallest sample accepted by [`fit_beta`].
pub const MIN_FIT_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearized {
    /// `(ln t, ln(-ln P(L* >= t)))`.
    pub points: Vec<(f64, f64)>,
    /// Empirical `P(L* >= t)` at each kept point.
    pub ccdf: Vec<f64>,
    /// Grid points with `P(L* >= t)` equal to 0 or 1, or `t <= 0`.
    pub dropped: usize,
}

/// Transform the empirical CCDF `P(L* >= t) = 1 - #{L < t}/n` on `t_grid`.
pub fn linearize(ecdf: &EmpiricalCdf, t_grid: &[f64]) -> Result<Linearized> {
    let mut out = Linearized {
        points: Vec::with_capacity(t_grid.len()),
        ccdf: Vec::with_capacity(t_grid.len()),
        dropped: 0,
    };
    for &t in t_grid {
        let q = 1.0 - ecdf.eval_left(t);
        if t > 0.0 && q > 0.0 && q < 1.0 {
            out.points.push((t.ln(), (-q.ln()).ln()));
            out.ccdf.push(q);
        } else {
            out.dropped += 1;
        }
    }
    if out.points.len() < 3 {
        return Err(Error::Data(format!(
            "only {} usable grid points (need 3); {} dropped",
            out.points.len(),
            out.dropped
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TGridPolicy {
    /// Empirical quantiles of the sample at the given levels.
    Quantiles { levels: Vec<f64> },
    Explicit { t: Vec<f64> },
}

impl Default for TGridPolicy {
    fn default() -> Self {
        TGridPolicy::Quantiles {
            levels: (1..=19).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta_hat: f64,
    pub a_hat: f64,
    pub slope: f64,
    pub intercept: f64,
    /// 95% interval for beta.
    pub ci_beta: [f64; 2],
    /// Kolmogorov distance between the data and `exp(-a_hat t^(2/beta_hat))`.
    pub ks_d: f64,
    pub n: usize,
    pub points_used: usize,
    pub dropped: usize,
    pub residual_rms: f64,
}

/// Fit `(beta, a)` by least squares on the linearized CCDF.
///
/// The 95% interval is the delta-method interval `2/c^2 * se(c)` for the
/// slope `c`, where `se(c)` comes from the asymptotic covariance of the
/// empirical CCDF evaluated under the fitted model. For the quantile policy
/// the noise sits in the abscissae (sample quantiles), for explicit grids in
/// the ordinates.
pub fn fit_beta(samples: &[f64], policy: &TGridPolicy) -> Result<BetaFit> {
    ensure(samples.len() >= MIN_FIT_SAMPLES, || {
        format!("need at least {MIN_FIT_SAMPLES} samples, got {}", samples.len())
    })?;
    let ecdf = EmpiricalCdf::new(samples)?;
    let sorted = ecdf.sorted_values();
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::FitFailure("all samples are equal".into()));
    }
    let t_grid: Vec<f64> = match policy {
        TGridPolicy::Quantiles { levels } => {
            ensure(levels.iter().all(|p| (0.0..=1.0).contains(p)), || {
                "quantile levels must lie in [0, 1]".into()
            })?;
            levels.iter().map(|&p| quantile_sorted(sorted, p)).collect()
        }
        TGridPolicy::Explicit { t } => t.clone(),
    };
    let lin = linearize(&ecdf, &t_grid)?;
    let m = lin.points.len() as f64;
    let x_bar = lin.points.iter().map(|p| p.0).sum::<f64>() / m;
    let y_bar = lin.points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = lin.points.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure("grid points share one abscissa".into()));
    }
    let sxy: f64 = lin.points.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
    let slope = sxy / sxx;
    if slope <= 0.0 || !slope.is_finite() {
        return Err(Error::FitFailure(format!(
            "non-positive slope {slope}: data inconsistent with the model"
        )));
    }
    let intercept = y_bar - slope * x_bar;
    let residual_rms = (lin
        .points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();

    let n = samples.len() as f64;
    let q = &lin.ccdf;
    // Gradient of the slope with respect to the noisy coordinate, and the
    // scale turning CCDF covariances into that coordinate's covariances.
    let (grad, scale): (Vec<f64>, Vec<f64>) = match policy {
        TGridPolicy::Quantiles { .. } => lin
            .points
            .iter()
            .zip(q)
            .map(|(p, &qk)| {
                let g = ((p.1 - y_bar) - 2.0 * slope * (p.0 - x_bar)) / sxx;
                // Density of ln L* under the fitted model at the grid point.
                (g, 1.0 / (slope * (-qk.ln()) * qk))
            })
            .unzip(),
        TGridPolicy::Explicit { .. } => lin
            .points
            .iter()
            .zip(q)
            .map(|(p, &qk)| ((p.0 - x_bar) / sxx, 1.0 / (qk * qk.ln())))
            .unzip(),
    };
    let mut var = 0.0;
    for i in 0..q.len() {
        for j in 0..q.len() {
            let cov = (q[i].min(q[j]) - q[i] * q[j]) / n * scale[i] * scale[j];
            var += grad[i] * grad[j] * cov;
        }
    }
    let beta_hat = 2.0 / slope;
    let half = 1.96 * 2.0 / (slope * slope) * var.max(0.0).sqrt();
    let a_hat = intercept.exp();
    let ks_d = ks_distance(&ecdf, |t| {
        if t <= 0.0 {
            0.0
        } else {
            1.0 - (-a_hat * t.powf(slope)).exp()
        }
    });
    Ok(BetaFit {
        beta_hat,
        a_hat,
        slope,
        intercept,
        ci_beta: [beta_hat - half, beta_hat + half],
        ks_d,
        n: samples.len(),
        points_used: lin.points.len(),
        dropped: lin.dropped,
        residual_rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossColumn {
    /// `loss` if present, otherwise `loss_db`.
    #[default]
    Auto,
    Loss,
    LossDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub samples: Vec<f64>,
    pub invalid: usize,
    pub rows: usize,
}

/// Read `L*` measurements (natural scale) from a CSV file with a `loss` or
/// `loss_db` column. Rows that do not parse, or give a non-positive or
/// non-finite loss, are counted as invalid.
pub fn ingest_measurements(path: &Path, column: LossColumn) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (idx, db) = match column {
        LossColumn::Loss => (find("loss"), false),
        LossColumn::LossDb => (find("loss_db"), true),
        LossColumn::Auto => match find("loss") {
            Some(i) => (Some(i), false),
            None => (find("loss_db"), true),
        },
    };
    let idx = idx.ok_or_else(|| {
        Error::Data(format!("{}: no `loss` or `loss_db` column", path.display()))
    })?;
    let mut out = Ingested {
        samples: Vec::new(),
        invalid: 0,
        rows: 0,
    };
    for rec in rdr.records() {
        out.rows += 1;
        let value = rec
            .ok()
            .and_then(|r| r.get(idx).and_then(|v| v.parse::<f64>().ok()))
            .map(|v| if db { 10f64.powf(v / 10.0) } else { v })
            .filter(|v| v.is_finite() && *v > 0.0);
        match value {
            Some(v) => out.samples.push(v),
            None => out.invalid += 1,
        }
    }
    if out.rows == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if 2 * out.invalid > out.rows {
        return Err(Error::Data(format!(
            "{}: {} of {} rows invalid",
            path.display(),
            out.invalid,
            out.rows
        )));
    }
    Ok(out)
}
