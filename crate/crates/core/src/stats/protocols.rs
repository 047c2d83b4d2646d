//! Experiment protocols comparing finite networks with the Poisson limit:
//! the critical-shadowing search on the strongest-signal law, the SIR
//! comparison, and per-sigma convergence diagnostics.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ks_distance, ks_test, ks_test_two_sample, EmpiricalCdf, KsReport};
use crate::error::{ensure, Result};
use crate::geometry::{
    gen_hexagonal, gen_perturbed_lattice, gen_poisson_with, load_pattern, MetricKind, Point,
    PointPattern, Rect,
};
use crate::math::{normal_cdf, pearson};
use crate::parallel::{derive_seed, rng_from_seed, stream_rng, Exec};
use crate::poisson_limit::{
    ccdf_at, l_max_for, limit_mark_law, lstar_ccdf, sample_limit_sir, LimitModel,
};
use crate::propagation::{
    min_log_loss, propagation_process_with, strongest_and_total, MarkKernel,
    PropagationParams, ShadowingSpec,
};

/// Serializable description of a station layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternSpec {
    Hexagonal { n: usize, spacing: f64 },
    PerturbedLattice { n: usize, spacing: f64, jitter_std: f64, seed: u64 },
    /// Poisson stations on a torus of the given extent.
    Poisson { density: f64, width: f64, height: f64, seed: u64 },
    File { csv: PathBuf, sidecar: PathBuf },
}

impl PatternSpec {
    pub fn build(&self) -> Result<PointPattern> {
        match self {
            PatternSpec::Hexagonal { n, spacing } => gen_hexagonal(*n, *spacing),
            PatternSpec::PerturbedLattice {
                n,
                spacing,
                jitter_std,
                seed,
            } => gen_perturbed_lattice(*n, *spacing, *jitter_std, *seed),
            PatternSpec::Poisson {
                density,
                width,
                height,
                seed,
            } => gen_poisson_with(
                *density,
                Rect::new(*width, *height),
                MetricKind::Torus,
                &mut rng_from_seed(*seed),
            ),
            PatternSpec::File { csv, sidecar } => load_pattern(csv, sidecar),
        }
    }
}

/// Uniform user on a torus pattern, or the origin for plane patterns.
/// Redraws on the (measure-zero) event of landing on a station.
pub fn draw_user<R: Rng + ?Sized>(pattern: &PointPattern, rng: &mut R) -> Point {
    match pattern.metric.extent() {
        Some(ext) => loop {
            let u = ext.sample_uniform(rng);
            if pattern.check_user(u).is_ok() {
                return u;
            }
        },
        None => Point::ORIGIN,
    }
}

/// Strongest-signal losses `L*` from fresh Poisson networks of the given
/// density on the plane window `[-h, h]^2`, user at the origin. An empty
/// window yields `+inf`.
pub fn sample_network_min_losses(
    density: f64,
    half_width: f64,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    let window = Rect::new(2.0 * half_width, 2.0 * half_width);
    exec.try_map(count, |i| {
        let mut rng = stream_rng(seed, 0x4d49, i as u64);
        let pattern = gen_poisson_with(density, window, MetricKind::Plane, &mut rng)?;
        Ok(min_log_loss(&pattern, Point::ORIGIN, spec, params, &mut rng)
            .map_or(f64::INFINITY, f64::exp))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticalSigmaProtocol {
    pub obs_per_realization: usize,
    pub realizations: usize,
    pub pass_quota: usize,
    pub alpha: f64,
    /// Ascending shadowing grid in dB.
    pub grid_db: Vec<f64>,
}

impl Default for CriticalSigmaProtocol {
    fn default() -> Self {
        CriticalSigmaProtocol {
            obs_per_realization: 300,
            realizations: 10,
            pass_quota: 9,
            alpha: 0.01,
            grid_db: (0..=60).map(|i| 0.5 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEval {
    pub sigma_db: f64,
    /// Realizations whose K-S test did not reject.
    pub passes: usize,
    pub mean_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSigmaResult {
    /// `None` when no grid point met the quota ("above grid max").
    pub sigma_db_star: Option<f64>,
    pub evaluations: Vec<GridEval>,
}

/// K-S statistics of `L*` against the Poisson law, one per realization.
#[allow(clippy::too_many_arguments)]
pub fn min_loss_ks_statistics(
    pattern: &PointPattern,
    beta: f64,
    k: f64,
    sigma_db: f64,
    obs: usize,
    realizations: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    let spec = ShadowingSpec::from_db(sigma_db)?;
    let params = PropagationParams::new(k, beta)?.raw();
    let a = params.limit_constant(pattern.density(), &spec);
    let model = LimitModel::new(a, beta)?;
    Ok(exec.map(realizations, |r| {
        let mut rng = stream_rng(seed, 0xC5, r as u64);
        let losses: Vec<f64> = (0..obs)
            .map(|_| {
                let user = draw_user(pattern, &mut rng);
                min_log_loss(pattern, user, &spec, &params, &mut rng)
                    .map_or(f64::INFINITY, f64::exp)
            })
            .collect();
        let e = EmpiricalCdf::from_vec(losses).expect("non-empty, NaN-free");
        ks_distance(&e, |t| 1.0 - lstar_ccdf(t, &model))
    }))
}

/// Smallest grid value of `sigma_dB` at which at least `pass_quota` of the
/// realizations pass the K-S test of `L*` (uniform user, fresh shadowing per
/// observation) against `exp(-a t^(2/beta))`.
///
/// The grid is scanned upwards and the scan stops at the first passing
/// point. Each grid point draws from its own seed stream.
pub fn critical_sigma_search(
    pattern: &PointPattern,
    beta: f64,
    k: f64,
    protocol: &CriticalSigmaProtocol,
    seed: u64,
    exec: Exec,
) -> Result<CriticalSigmaResult> {
    ensure(!protocol.grid_db.is_empty(), || "empty sigma grid".into())?;
    ensure(protocol.grid_db.windows(2).all(|w| w[0] < w[1]), || {
        "sigma grid must be strictly increasing".into()
    })?;
    ensure(protocol.pass_quota <= protocol.realizations, || {
        "pass quota exceeds the number of realizations".into()
    })?;
    let critical = ks_test(0.0, protocol.obs_per_realization, protocol.alpha)?.critical;
    let mut evaluations = Vec::new();
    for (g, &sigma_db) in protocol.grid_db.iter().enumerate() {
        let stats = min_loss_ks_statistics(
            pattern,
            beta,
            k,
            sigma_db,
            protocol.obs_per_realization,
            protocol.realizations,
            derive_seed(seed, 0xC51, g as u64),
            exec,
        )?;
        let passes = stats.iter().filter(|&&d| d <= critical).count();
        evaluations.push(GridEval {
            sigma_db,
            passes,
            mean_statistic: crate::math::mean(&stats),
        });
        if passes >= protocol.pass_quota {
            return Ok(CriticalSigmaResult {
                sigma_db_star: Some(sigma_db),
                evaluations,
            });
        }
    }
    Ok(CriticalSigmaResult {
        sigma_db_star: None,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirComparison {
    pub thresholds: Vec<f64>,
    pub network_ccdf: Vec<f64>,
    pub limit_ccdf: Vec<f64>,
    pub ks: KsReport,
    #[serde(skip)]
    pub network_sir: Vec<f64>,
    #[serde(skip)]
    pub limit_sir: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirSetup {
    pub sigma_db: f64,
    pub beta: f64,
    pub k: f64,
    pub replications: usize,
    pub limit_replications: usize,
    pub thresholds: Vec<f64>,
    pub alpha: f64,
}

/// Default SIR threshold grid: 41 points log-spaced over [0.01, 100].
pub fn default_sir_thresholds() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-2.0 + 0.1 * i as f64)).collect()
}

/// Strongest-server SIR on the network (uniform user, fresh shadowing per
/// replication) against limit-model Monte Carlo, with a two-sample K-S test.
pub fn sir_experiment(
    pattern: &PointPattern,
    setup: &SirSetup,
    seed: u64,
    exec: Exec,
) -> Result<SirComparison> {
    ensure(setup.replications >= 100, || {
        format!("need at least 100 replications, got {}", setup.replications)
    })?;
    let spec = ShadowingSpec::from_db(setup.sigma_db)?;
    let params = PropagationParams::new(setup.k, setup.beta)?.raw();
    let network_sir = exec.map(setup.replications, |i| {
        let mut rng = stream_rng(seed, 0x51A, i as u64);
        let user = draw_user(pattern, &mut rng);
        match strongest_and_total(pattern, user, &spec, &params, &mut rng) {
            Some((_, rel_total)) if rel_total > 1.0 => 1.0 / (rel_total - 1.0),
            _ => f64::INFINITY,
        }
    });
    let a = params.limit_constant(pattern.density(), &spec);
    let model = LimitModel::new(a, setup.beta)?;
    let limit_sir = sample_limit_sir(
        &model,
        l_max_for(&model, 1e-3),
        setup.limit_replications,
        derive_seed(seed, 0x51B, 0),
        exec,
    )?;
    let ks = ks_test_two_sample(&network_sir, &limit_sir, setup.alpha)?;
    Ok(SirComparison {
        thresholds: setup.thresholds.clone(),
        network_ccdf: ccdf_at(&network_sir, &setup.thresholds),
        limit_ccdf: ccdf_at(&limit_sir, &setup.thresholds),
        ks,
        network_sir,
        limit_sir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSetup {
    pub sigma_db: f64,
    pub beta: f64,
    pub k: f64,
    pub replications: usize,
    /// Expected limit-process count in the observation window.
    pub window_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkFrequency {
    pub label: String,
    pub observed: f64,
    pub expected: f64,
    pub standard_error: f64,
}

/// Diagnostics of the rescaled marked propagation process at one sigma.
/// The window holds stations with log-loss at most `window_log_loss`, where
/// the limit process has mean count `window_mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub sigma_db: f64,
    pub limit_constant: f64,
    pub window_log_loss: f64,
    /// (i) `L*` against `exp(-a t^(2/beta))`.
    pub min_loss_ks: KsReport,
    /// (ii) Mean window count relative to the limit mean.
    pub window_count_ratio: f64,
    /// (ii) Exact mean window count (per-station probabilities, averaged
    /// over the users drawn) relative to the limit mean.
    pub exact_count_ratio: f64,
    /// (ii) Pooled window log-losses against the normalized limit law.
    pub window_shape_ks: Option<KsReport>,
    pub pooled: usize,
    /// (iii) Pooled rescaled distances against the standard Gaussian.
    pub rescaled_distance_ks: Option<KsReport>,
    /// (iv) Pearson correlation of log-loss and rescaled distance.
    pub correlation: f64,
    pub correlation_bound: f64,
    /// (v) Window type frequencies against the limit mark law.
    pub marks: Option<Vec<MarkFrequency>>,
}

pub fn convergence_point(
    pattern: &PointPattern,
    setup: &ConvergenceSetup,
    kernel: Option<&MarkKernel>,
    seed: u64,
    exec: Exec,
) -> Result<ConvergencePoint> {
    ensure(setup.replications >= super::MIN_ASYMPTOTIC_N, || {
        format!("need at least {} replications", super::MIN_ASYMPTOTIC_N)
    })?;
    ensure(setup.sigma_db > 0.0, || "convergence diagnostics need sigma > 0".into())?;
    ensure(setup.window_mean > 0.0, || "window mean must be positive".into())?;
    let spec = ShadowingSpec::from_db(setup.sigma_db)?;
    let sigma = spec.sigma();
    let n = sigma * sigma;
    let params = PropagationParams::new(setup.k, setup.beta)?;
    let density = pattern.density();
    let a = params.limit_constant(density, &spec);
    let model = LimitModel::new(a, setup.beta)?;
    let s_max = setup.beta / 2.0 * (setup.window_mean / a).ln();

    struct Rep {
        min_loss: f64,
        window: Vec<(f64, f64, usize)>,
        exact: f64,
    }
    let reps: Vec<Rep> = exec.try_map(setup.replications, |i| {
        let mut rng = stream_rng(seed, 0xC0, i as u64);
        let user = draw_user(pattern, &mut rng);
        let smp = propagation_process_with(pattern, user, &spec, &params, kernel, &mut rng)?;
        let rescaled = smp.rescaled_distances.as_ref().expect("sigma > 0");
        let window = smp
            .log_losses
            .iter()
            .enumerate()
            .take_while(|(_, &l)| l <= s_max)
            .map(|(j, &l)| (l, rescaled[j], smp.types.as_ref().map_or(0, |t| t[j])))
            .collect();
        let exact = crate::propagation::exact_mean_measure(
            pattern, user, s_max, setup.k, setup.beta, n, None,
        );
        Ok::<_, crate::Error>(Rep {
            min_loss: smp.losses[0],
            window,
            exact,
        })
    })?;

    let mins: Vec<f64> = reps.iter().map(|r| r.min_loss).collect();
    let d_min = ks_distance(&EmpiricalCdf::from_vec(mins)?, |t| 1.0 - lstar_ccdf(t, &model));
    let min_loss_ks = ks_test(d_min, setup.replications, 0.01)?;

    let pooled: Vec<(f64, f64, usize)> = reps.iter().flat_map(|r| r.window.iter().copied()).collect();
    let reps_f = setup.replications as f64;
    let window_count_ratio = pooled.len() as f64 / reps_f / setup.window_mean;
    let exact_count_ratio = reps.iter().map(|r| r.exact).sum::<f64>() / reps_f / setup.window_mean;

    let big_enough = pooled.len() >= super::MIN_ASYMPTOTIC_N;
    let logs: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let rescaled: Vec<f64> = pooled.iter().map(|p| p.1).collect();
    let window_shape_ks = if big_enough {
        let d = ks_distance(&EmpiricalCdf::new(&logs)?, |s| {
            (2.0 * (s.min(s_max) - s_max) / setup.beta).exp()
        });
        Some(ks_test(d, pooled.len(), 0.01)?)
    } else {
        None
    };
    let rescaled_distance_ks = if big_enough {
        let d = ks_distance(&EmpiricalCdf::new(&rescaled)?, normal_cdf);
        Some(ks_test(d, pooled.len(), 0.01)?)
    } else {
        None
    };
    let correlation = if pooled.len() >= 3 {
        pearson(&logs, &rescaled)
    } else {
        f64::NAN
    };
    let correlation_bound = 3.0 / (pooled.len() as f64).sqrt();

    let marks = match kernel {
        Some(k) if !pooled.is_empty() => {
            let total = pooled.len() as f64;
            let mut out = Vec::with_capacity(k.num_types());
            for (t, label) in k.labels().iter().enumerate() {
                let observed = pooled.iter().filter(|p| p.2 == t).count() as f64 / total;
                let expected = limit_mark_law(k, f64::INFINITY, t)?;
                out.push(MarkFrequency {
                    label: label.clone(),
                    observed,
                    expected,
                    standard_error: (expected * (1.0 - expected) / total).sqrt(),
                });
            }
            Some(out)
        }
        _ => None,
    };

    Ok(ConvergencePoint {
        sigma_db: setup.sigma_db,
        limit_constant: a,
        window_log_loss: s_max,
        min_loss_ks,
        window_count_ratio,
        exact_count_ratio,
        window_shape_ks,
        pooled: pooled.len(),
        rescaled_distance_ks,
        correlation,
        correlation_bound,
        marks,
    })
}
