//! Path loss, shadowing and the (marked) propagation-loss process seen by a
//! user.
//!
//! Losses are computed on the log scale, `log L = beta * log(K d) - log S`,
//! and exponentiated only for export. With very strong shadowing the natural
//! scale spans hundreds of orders of magnitude.

use std::f64::consts::{LN_10, PI};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};
use crate::geometry::{Point, PointPattern};
use crate::math::{normal_cdf, normal_pdf, normal_sf};
use crate::parallel::rng_from_seed;

/// Natural-log shadowing standard deviation from its decibel value.
pub fn sigma_from_db(sigma_db: f64) -> f64 {
    sigma_db * LN_10 / 10.0
}

pub fn sigma_to_db(sigma: f64) -> f64 {
    sigma * 10.0 / LN_10
}

fn check_k_beta(k: f64, beta: f64) -> Result<()> {
    ensure(k > 0.0 && k.is_finite(), || {
        format!("path-loss constant must be positive, got {k}")
    })?;
    ensure(beta > 2.0 && beta.is_finite(), || {
        format!("path-loss exponent must exceed 2, got {beta}")
    })
}

/// `(K r)^beta`.
pub fn path_loss(r: f64, k: f64, beta: f64) -> Result<f64> {
    check_k_beta(k, beta)?;
    if r == 0.0 {
        return Err(param("path loss is singular at distance 0"));
    }
    ensure(r > 0.0 && r.is_finite(), || format!("distance must be positive, got {r}"))?;
    Ok((k * r).powf(beta))
}

/// `E[S^(2/beta)]` for log-normal `S` with `mu = -sigma^2/2`.
pub fn moment_s_2beta(sigma: f64, beta: f64) -> f64 {
    let s2 = sigma * sigma;
    (-s2 / beta + 2.0 * s2 / (beta * beta)).exp()
}

/// Path-loss constant rescaled by `sqrt(E[S^(2/beta)])`.
pub fn k_sigma(k: f64, beta: f64, sigma: f64) -> f64 {
    k * (sigma * sigma * (2.0 - beta) / (2.0 * beta * beta)).exp()
}

/// `(beta/sigma) log r - sigma/beta`.
pub fn rescaled_distance(r: f64, sigma: f64, beta: f64) -> Result<f64> {
    ensure(sigma > 0.0, || "rescaled distance needs sigma > 0".into())?;
    ensure(r > 0.0, || format!("distance must be positive, got {r}"))?;
    Ok(beta / sigma * r.ln() - sigma / beta)
}

/// Additional multiplicative propagation factor `F`, independent of `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtraFactor {
    #[default]
    None,
    /// Exponentially distributed power (Rayleigh fading) with the given mean.
    RayleighPower { mean: f64 },
    /// Resampled uniformly from the provided values.
    GenericSamples { samples: Vec<f64> },
}

impl ExtraFactor {
    fn validate(&self) -> Result<()> {
        match self {
            ExtraFactor::None => Ok(()),
            ExtraFactor::RayleighPower { mean } => ensure(*mean > 0.0 && mean.is_finite(), || {
                format!("rayleigh power mean must be positive, got {mean}")
            }),
            ExtraFactor::GenericSamples { samples } => ensure(
                !samples.is_empty() && samples.iter().all(|&x| x > 0.0 && x.is_finite()),
                || "generic extra-factor samples must be non-empty, positive and finite".into(),
            ),
        }
    }

    /// One draw of `log F`.
    fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ExtraFactor::None => 0.0,
            ExtraFactor::RayleighPower { mean } => {
                let e: f64 = Exp1.sample(rng);
                (mean * e).ln()
            }
            ExtraFactor::GenericSamples { samples } => {
                samples[rng.random_range(0..samples.len())].ln()
            }
        }
    }
}

/// Log-normal shadowing `S = exp(mu + sigma Z)` with `mu = -sigma^2/2`, so
/// that `E[S] = 1`, optionally multiplied by an extra factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingSpec {
    sigma: f64,
    #[serde(default)]
    extra: ExtraFactor,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ShadowDraw {
    pub z: f64,
    pub log_s: f64,
}

impl ShadowingSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        ensure(sigma >= 0.0 && sigma.is_finite(), || {
            format!("sigma must be non-negative, got {sigma}")
        })?;
        Ok(ShadowingSpec {
            sigma,
            extra: ExtraFactor::None,
        })
    }

    pub fn from_db(sigma_db: f64) -> Result<Self> {
        Self::new(sigma_from_db(sigma_db))
    }

    pub fn with_extra(mut self, extra: ExtraFactor) -> Result<Self> {
        extra.validate()?;
        self.extra = extra;
        Ok(self)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        -0.5 * self.sigma * self.sigma
    }

    pub fn extra(&self) -> &ExtraFactor {
        &self.extra
    }

    #[inline]
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ShadowDraw {
        let z: f64 = StandardNormal.sample(rng);
        let log_s = self.mu() + self.sigma * z + self.extra.sample_log(rng);
        ShadowDraw { z, log_s }
    }
}

/// `n` i.i.d. draws of `S` (times `F` when an extra factor is set).
pub fn sample_shadowing(spec: &ShadowingSpec, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| spec.draw(&mut rng).log_s.exp()).collect()
}

/// Conditional law of a station's type given the Gaussian driver `z` of its
/// shadowing, tabulated on a z-grid and linearly interpolated in between.
/// Outside the grid the end rows apply. Two nodes may share a `z` to encode
/// a jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkKernel {
    labels: Vec<String>,
    nodes: Vec<KernelNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelNode {
    pub z: f64,
    pub probs: Vec<f64>,
}

impl MarkKernel {
    pub fn new(labels: Vec<String>, nodes: Vec<KernelNode>) -> Result<Self> {
        ensure(!labels.is_empty(), || "mark kernel needs at least one type".into())?;
        ensure(!nodes.is_empty(), || "mark kernel needs at least one node".into())?;
        ensure(nodes.windows(2).all(|w| w[0].z <= w[1].z), || {
            "mark kernel nodes must be sorted by z".into()
        })?;
        for node in &nodes {
            ensure(node.z.is_finite(), || "mark kernel z must be finite".into())?;
            ensure(node.probs.len() == labels.len(), || {
                format!(
                    "node at z={} has {} probabilities for {} types",
                    node.z,
                    node.probs.len(),
                    labels.len()
                )
            })?;
            ensure(node.probs.iter().all(|&p| (0.0..=1.0).contains(&p)), || {
                format!("node at z={} has a probability outside [0,1]", node.z)
            })?;
            let sum: f64 = node.probs.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || {
                format!("node at z={} sums to {sum}", node.z)
            })?;
        }
        Ok(MarkKernel { labels, nodes })
    }

    /// Kernel that ignores `z`.
    pub fn constant(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        Self::new(labels, vec![KernelNode { z: 0.0, probs }])
    }

    /// `below` for `z < threshold`, `above` for `z >= threshold`.
    pub fn step(labels: Vec<String>, threshold: f64, below: Vec<f64>, above: Vec<f64>) -> Result<Self> {
        Self::new(
            labels,
            vec![
                KernelNode {
                    z: threshold,
                    probs: below,
                },
                KernelNode {
                    z: threshold,
                    probs: above,
                },
            ],
        )
    }

    /// Tabulate `f` on `grid` (sorted) with linear interpolation in between.
    pub fn from_fn(labels: Vec<String>, grid: &[f64], f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let nodes = grid
            .iter()
            .map(|&z| KernelNode { z, probs: f(z) })
            .collect();
        Self::new(labels, nodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: MarkKernel = serde_json::from_reader(std::fs::File::open(path)?)?;
        Self::new(raw.labels, raw.nodes)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_types(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> &[KernelNode] {
        &self.nodes
    }

    /// Probability of type `t` at `z`.
    pub fn prob(&self, t: usize, z: f64) -> f64 {
        let idx = self.nodes.partition_point(|n| n.z <= z);
        if idx == 0 {
            return self.nodes[0].probs[t];
        }
        if idx == self.nodes.len() {
            return self.nodes[idx - 1].probs[t];
        }
        let (lo, hi) = (&self.nodes[idx - 1], &self.nodes[idx]);
        let w = (z - lo.z) / (hi.z - lo.z);
        lo.probs[t] + w * (hi.probs[t] - lo.probs[t])
    }

    pub fn probs(&self, z: f64) -> Vec<f64> {
        (0..self.num_types()).map(|t| self.prob(t, z)).collect()
    }

    pub(crate) fn sample_type<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for t in 0..self.num_types() {
            acc += self.prob(t, z);
            if u < acc {
                return t;
            }
        }
        self.num_types() - 1
    }

    /// `E[k_t(W) 1(W <= upper)]` for `W ~ N(mean, 1)`, per type, computed
    /// exactly on each linear piece.
    pub fn gaussian_expectation(&self, mean: f64, upper: f64) -> Vec<f64> {
        let m = self.num_types();
        let mut out = vec![0.0; m];
        let first = &self.nodes[0];
        let last = &self.nodes[self.nodes.len() - 1];
        // Left constant tail.
        let head = gauss_mass(f64::NEG_INFINITY, first.z.min(upper), mean);
        for (o, p) in out.iter_mut().zip(&first.probs) {
            *o += p * head;
        }
        for pair in self.nodes.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            if hi.z <= lo.z || lo.z >= upper {
                continue;
            }
            let b = hi.z.min(upper);
            let mass = gauss_mass(lo.z, b, mean);
            // Integral of (w - z_lo) against the N(mean,1) density on [lo, b].
            let first_moment =
                (mean - lo.z) * mass + normal_pdf(lo.z - mean) - normal_pdf(b - mean);
            for (t, o) in out.iter_mut().enumerate() {
                let slope = (hi.probs[t] - lo.probs[t]) / (hi.z - lo.z);
                *o += lo.probs[t] * mass + slope * first_moment;
            }
        }
        if upper > last.z {
            let tail = gauss_mass(last.z, upper, mean);
            for (o, p) in out.iter_mut().zip(&last.probs) {
                *o += p * tail;
            }
        }
        out
    }
}

/// `P(a < W <= b)` for `W ~ N(mean, 1)`, using whichever tail is accurate.
fn gauss_mass(a: f64, b: f64, mean: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (a, b) = (a - mean, b - mean);
    if a > 0.0 {
        normal_sf(a) - normal_sf(b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Stations closer than `inner` or farther than `outer` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub inner: f64,
    pub outer: f64,
}

impl Truncation {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        ensure(inner >= 0.0 && outer > inner, || {
            format!("truncation needs 0 <= inner < outer, got ({inner}, {outer})")
        })?;
        Ok(Truncation { inner, outer })
    }

    /// `inner = max(e^sigma - 1, 0)`, `outer = e^(sigma^3)`: the log of each,
    /// divided by `sigma^2`, tends to 0 and to infinity respectively.
    pub fn default_for(sigma: f64) -> Self {
        Truncation {
            inner: (sigma.exp() - 1.0).max(0.0),
            outer: (sigma * sigma * sigma).exp(),
        }
    }

    /// Constant inner radius with the default outer radius.
    pub fn constant_inner(inner: f64, sigma: f64) -> Result<Self> {
        Self::new(inner, Self::default_for(sigma).outer)
    }

    #[inline]
    pub fn keeps(&self, r: f64) -> bool {
        self.inner < r && r < self.outer
    }
}

/// Which path-loss constant multiplies the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScaling {
    /// `K^(sigma) = K sqrt(E[S^(2/beta)])`; limit constant `lambda pi / K^2`.
    #[default]
    Rescaled,
    /// Plain `K`; limit constant `lambda pi E[S^(2/beta)] / K^2`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub k: f64,
    pub beta: f64,
    #[serde(default)]
    pub scaling: LossScaling,
    #[serde(default)]
    pub truncation: Option<Truncation>,
}

impl PropagationParams {
    pub fn new(k: f64, beta: f64) -> Result<Self> {
        check_k_beta(k, beta)?;
        Ok(PropagationParams {
            k,
            beta,
            scaling: LossScaling::Rescaled,
            truncation: None,
        })
    }

    pub fn raw(mut self) -> Self {
        self.scaling = LossScaling::Raw;
        self
    }

    pub fn truncated(mut self, t: Truncation) -> Self {
        self.truncation = Some(t);
        self
    }

    /// Constant actually multiplying distances for shadowing `sigma`.
    pub fn effective_k(&self, sigma: f64) -> f64 {
        match self.scaling {
            LossScaling::Rescaled => k_sigma(self.k, self.beta, sigma),
            LossScaling::Raw => self.k,
        }
    }

    /// Propagation constant of the matching Poisson limit for a pattern of
    /// the given density.
    pub fn limit_constant(&self, density: f64, spec: &ShadowingSpec) -> f64 {
        let k_eff = self.effective_k(spec.sigma());
        let moment = moment_s_2beta(spec.sigma(), self.beta);
        density * PI * moment / (k_eff * k_eff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub k: f64,
    pub k_effective: f64,
    pub beta: f64,
    pub sigma: f64,
    pub sigma_db: f64,
    pub scaling: LossScaling,
    pub truncation: Option<Truncation>,
    pub extra: ExtraFactor,
    pub user: Point,
    pub seed: u64,
    pub type_labels: Option<Vec<String>>,
}

/// One realization of the marked propagation process, sorted by loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedPropagationSample {
    pub losses: Vec<f64>,
    pub log_losses: Vec<f64>,
    pub distances: Vec<f64>,
    /// Absent when `sigma = 0`, where the rescaling is undefined.
    pub rescaled_distances: Option<Vec<f64>>,
    /// Indices into `meta.type_labels`; absent without a mark kernel.
    pub types: Option<Vec<usize>>,
    pub meta: SampleMeta,
}

impl MarkedPropagationSample {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn min_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["loss", "log_loss", "distance", "rescaled_distance", "type"])?;
        for i in 0..self.len() {
            let rescaled = self
                .rescaled_distances
                .as_ref()
                .map(|r| r[i].to_string())
                .unwrap_or_default();
            let ty = match (&self.types, &self.meta.type_labels) {
                (Some(t), Some(labels)) => labels[t[i]].clone(),
                _ => String::new(),
            };
            w.write_record([
                self.losses[i].to_string(),
                self.log_losses[i].to_string(),
                self.distances[i].to_string(),
                rescaled,
                ty,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

/// Per-station draw: `(station index, distance, gaussian driver, log loss)`.
#[inline]
pub(crate) fn for_each_station<R, F>(
    pattern: &PointPattern,
    user: Point,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    rng: &mut R,
    mut f: F,
) where
    R: Rng + ?Sized,
    F: FnMut(usize, f64, f64, f64, &mut R),
{
    let log_k = params.effective_k(spec.sigma()).ln();
    let beta = params.beta;
    for (i, &p) in pattern.points.iter().enumerate() {
        let d_sq = pattern.metric.distance_sq(user, p);
        let d = d_sq.sqrt();
        if let Some(t) = params.truncation {
            if !t.keeps(d) {
                continue;
            }
        }
        let draw = spec.draw(rng);
        let log_loss = beta * (log_k + 0.5 * d_sq.ln()) - draw.log_s;
        f(i, d, draw.z, log_loss, rng);
    }
}

/// Marked propagation process of `user` for one shadowing realization.
pub fn propagation_process(
    pattern: &PointPattern,
    user: Point,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    marks: Option<&MarkKernel>,
    seed: u64,
) -> Result<MarkedPropagationSample> {
    let mut rng = rng_from_seed(seed);
    let mut sample = propagation_process_with(pattern, user, spec, params, marks, &mut rng)?;
    sample.meta.seed = seed;
    Ok(sample)
}

/// [`propagation_process`] drawing from a caller-provided generator; the
/// recorded seed is 0.
pub fn propagation_process_with<R: Rng + ?Sized>(
    pattern: &PointPattern,
    user: Point,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    marks: Option<&MarkKernel>,
    rng: &mut R,
) -> Result<MarkedPropagationSample> {
    check_k_beta(params.k, params.beta)?;
    pattern.check_user(user)?;
    let sigma = spec.sigma();
    let beta = params.beta;
    // Shift of the mark kernel argument: T ~ G^{T|Z}( . | z - 2 sigma / beta).
    let kernel_shift = 2.0 * sigma / beta;

    let mut rows: Vec<(f64, f64, Option<usize>)> = Vec::with_capacity(pattern.len());
    for_each_station(pattern, user, spec, params, rng, |_, d, z, log_loss, rng| {
        let ty = marks.map(|k| k.sample_type(z - kernel_shift, rng));
        rows.push((log_loss, d, ty));
    });
    if rows.is_empty() {
        return Err(Error::EmptyProcess);
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let log_losses: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let distances: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let rescaled_distances = (sigma > 0.0).then(|| {
        distances
            .iter()
            .map(|&d| beta / sigma * d.ln() - sigma / beta)
            .collect()
    });
    let types = marks.map(|_| rows.iter().map(|r| r.2.unwrap_or(0)).collect());
    Ok(MarkedPropagationSample {
        losses: log_losses.iter().map(|l| l.exp()).collect(),
        log_losses,
        distances,
        rescaled_distances,
        types,
        meta: SampleMeta {
            k: params.k,
            k_effective: params.effective_k(sigma),
            beta,
            sigma,
            sigma_db: sigma_to_db(sigma),
            scaling: params.scaling,
            truncation: params.truncation,
            extra: spec.extra().clone(),
            user,
            seed: 0,
            type_labels: marks.map(|k| k.labels().to_vec()),
        },
    })
}

/// Smallest log-loss of one shadowing realization, without building the
/// full sample. `None` when every station is truncated.
pub fn min_log_loss<R: Rng + ?Sized>(
    pattern: &PointPattern,
    user: Point,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    rng: &mut R,
) -> Option<f64> {
    let mut best = f64::INFINITY;
    for_each_station(pattern, user, spec, params, rng, |_, _, _, l, _| {
        best = best.min(l);
    });
    best.is_finite().then_some(best)
}

/// Received-power summary of one realization: `(min log loss, sum of 1/L)`.
/// The returned sum is relative to the strongest power.
pub fn strongest_and_total<R: Rng + ?Sized>(
    pattern: &PointPattern,
    user: Point,
    spec: &ShadowingSpec,
    params: &PropagationParams,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let mut logs = Vec::with_capacity(pattern.len());
    for_each_station(pattern, user, spec, params, rng, |_, _, _, l, _| logs.push(l));
    let min = logs.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let rel_total = logs.iter().map(|&l| (min - l).exp()).sum();
    Some((min, rel_total))
}

/// Probability that the rescaled log-loss from a station at distance `r` is
/// at most `s`, under shadowing variance `n = sigma^2`.
pub fn nu_n(s: f64, r: f64, k: f64, beta: f64, n: f64) -> f64 {
    normal_cdf((s - beta * (k * r).ln() - n / beta) / n.sqrt())
}

/// Exact mean number of rescaled log-losses `<= s` seen from `user`.
pub fn exact_mean_measure(
    pattern: &PointPattern,
    user: Point,
    s: f64,
    k: f64,
    beta: f64,
    n: f64,
    truncation: Option<Truncation>,
) -> f64 {
    pattern
        .points
        .iter()
        .map(|&p| pattern.metric.distance(user, p))
        .filter(|&r| truncation.is_none_or(|t| t.keeps(r)))
        .map(|r| nu_n(s, r, k, beta, n))
        .sum()
}

/// Expected number of stations of a homogeneous pattern (density `density`)
/// farther than `radius` whose raw-scaled loss is at most `t`.
pub fn outer_tail_mass(density: f64, radius: f64, t: f64, k: f64, beta: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        // Deterministic losses: stations beyond the radius never reach t
        // when (K R)^beta > t.
        return if (k * radius).powf(beta) > t {
            0.0
        } else {
            f64::INFINITY
        };
    }
    // Integrate lambda 2 pi r P(log L <= log t) dr in x = log r.
    let mu = -0.5 * sigma * sigma;
    let arg = |x: f64| (beta * (k.ln() + x) - t.ln() - mu) / sigma;
    let f = |x: f64| density * 2.0 * PI * (2.0 * x).exp() * normal_sf(arg(x));
    let dx = 1e-3 * (sigma / beta).max(0.05);
    let mut x = radius.ln();
    let mut total = 0.0;
    let mut prev = f(x);
    while arg(x) < 40.0 {
        let next = f(x + dx);
        total += 0.5 * dx * (prev + next);
        prev = next;
        x += dx;
    }
    total
}

/// Smallest radius (doubling search, then bisection) whose outer tail mass
/// at loss `t_max` is below `tol`.
pub fn compensated_radius(density: f64, t_max: f64, k: f64, beta: f64, sigma: f64, tol: f64) -> f64 {
    let mass = |r: f64| outer_tail_mass(density, r, t_max, k, beta, sigma);
    let mut hi = 1.0;
    while mass(hi) > tol {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > tol {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_hexagonal, Metric};
    use approx::assert_relative_eq;

    fn line_pattern(ds: &[f64]) -> PointPattern {
        PointPattern::new(
            ds.iter().map(|&d| Point::new(d, 0.0)).collect(),
            Metric::Plane,
            None,
        )
    }

    fn two_types() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn path_loss_examples() {
        assert_eq!(path_loss(1.0, 1.0, 4.0).unwrap(), 1.0);
        assert_eq!(path_loss(2.0, 1.0, 4.0).unwrap(), 16.0);
        assert_relative_eq!(path_loss(0.5, 2.0, 3.0).unwrap(), 1.0);
        assert!(matches!(path_loss(0.0, 1.0, 4.0), Err(Error::Parameter(_))));
        assert!(path_loss(1.0, 1.0, 1.5).is_err());
        assert!(path_loss(1.0, 0.0, 3.0).is_err());
    }

    #[test]
    fn moment_examples() {
        assert_eq!(moment_s_2beta(0.0, 4.0), 1.0);
        assert_relative_eq!(moment_s_2beta(3.7, 2.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(moment_s_2beta(1.0, 4.0), (-0.125f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn moment_matches_monte_carlo() {
        // E[S^(1/2)] for sigma = 1 over 1e6 log-normal draws.
        let spec = ShadowingSpec::new(1.0).unwrap();
        let xs: Vec<f64> = sample_shadowing(&spec, 1_000_000, 17)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        let m = crate::math::mean(&xs);
        let se = (crate::math::variance(&xs) / xs.len() as f64).sqrt();
        assert!((m - 0.882_496_902_584_595).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn k_sigma_examples() {
        assert_eq!(k_sigma(2.0, 4.0, 0.0), 2.0);
        assert_relative_eq!(k_sigma(1.5, 2.0, 5.0), 1.5);
        let s = 2f64.sqrt();
        assert_relative_eq!(k_sigma(1.0, 4.0, s), (-0.125f64).exp(), epsilon = 1e-15);
        for &(sig, beta) in &[(0.3, 2.5), (1.7, 4.0), (4.0, 3.1)] {
            assert_relative_eq!(
                k_sigma(1.3, beta, sig),
                1.3 * moment_s_2beta(sig, beta).sqrt(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn shadowing_examples() {
        let flat = ShadowingSpec::new(0.0).unwrap();
        assert!(sample_shadowing(&flat, 100, 1).iter().all(|&s| s == 1.0));

        let spec = ShadowingSpec::new(1.0).unwrap();
        let xs = sample_shadowing(&spec, 1_000_000, 2);
        let m = crate::math::mean(&xs);
        let se = ((1f64.exp() - 1.0) / xs.len() as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "{m}");

        assert!(ShadowingSpec::new(-1.0).is_err());
    }

    #[test]
    fn rayleigh_extra_is_exponential() {
        let spec = ShadowingSpec::new(0.0)
            .unwrap()
            .with_extra(ExtraFactor::RayleighPower { mean: 1.0 })
            .unwrap();
        let xs = sample_shadowing(&spec, 50_000, 9);
        let e = crate::stats::EmpiricalCdf::new(&xs).unwrap();
        let d = crate::stats::ks_distance(&e, |x| 1.0 - (-x).exp());
        assert!(d < 1.628 / (xs.len() as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn rescaled_distance_examples() {
        let (s, b) = (1.3, 3.0);
        assert_relative_eq!(rescaled_distance(1.0, s, b).unwrap(), -s / b);
        let r0 = (s * s / (b * b)).exp();
        assert_relative_eq!(rescaled_distance(r0, s, b).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(rescaled_distance(1f64.exp(), 2.0, 4.0).unwrap(), 1.5);
        assert!(rescaled_distance(1.0, 0.0, 4.0).is_err());
    }

    #[test]
    fn process_deterministic_examples() {
        let flat = ShadowingSpec::new(0.0).unwrap();
        let p = PropagationParams::new(1.0, 4.0).unwrap();
        let one = propagation_process(&line_pattern(&[1.0]), Point::ORIGIN, &flat, &p, None, 0).unwrap();
        assert_relative_eq!(one.losses[0], 1.0, epsilon = 1e-12);
        assert!(one.rescaled_distances.is_none());

        let p3 = PropagationParams::new(1.0, 3.0).unwrap();
        let two = propagation_process(&line_pattern(&[2.0, 1.0]), Point::ORIGIN, &flat, &p3, None, 0).unwrap();
        assert_relative_eq!(two.losses[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(two.losses[1], 8.0, epsilon = 1e-12);
        assert_eq!(two.distances, vec![1.0, 2.0]);
    }

    #[test]
    fn process_rejects_coincident_user_and_empty_window() {
        let flat = ShadowingSpec::new(0.0).unwrap();
        let p = PropagationParams::new(1.0, 4.0).unwrap();
        let pat = line_pattern(&[0.0, 1.0]);
        assert!(matches!(
            propagation_process(&pat, Point::ORIGIN, &flat, &p, None, 0),
            Err(Error::Parameter(_))
        ));
        let t = p.truncated(Truncation::new(5.0, 10.0).unwrap());
        assert!(matches!(
            propagation_process(&line_pattern(&[1.0, 2.0]), Point::ORIGIN, &flat, &t, None, 0),
            Err(Error::EmptyProcess)
        ));
    }

    #[test]
    fn truncation_keeps_only_annulus() {
        let spec = ShadowingSpec::new(1.0).unwrap();
        let p = PropagationParams::new(1.0, 4.0)
            .unwrap()
            .truncated(Truncation::new(1.5, 3.5).unwrap());
        let s = propagation_process(&line_pattern(&[1.0, 2.0, 3.0, 4.0]), Point::ORIGIN, &spec, &p, None, 4).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.distances.iter().all(|&d| d > 1.5 && d < 3.5));
    }

    #[test]
    fn default_truncation_sequences() {
        let t = Truncation::default_for(0.0);
        assert_eq!(t.inner, 0.0);
        for &s in &[2.0, 4.0, 8.0] {
            let t = Truncation::default_for(s);
            assert!(t.inner.max(1.0).ln() / (s * s) < 1.0 / s);
            assert!(t.outer.ln() / (s * s) >= s * 0.999);
        }
    }

    #[test]
    fn sample_is_sorted_and_consistent() {
        let pat = gen_hexagonal(6, 1.0).unwrap();
        let spec = ShadowingSpec::from_db(10.0).unwrap();
        let params = PropagationParams::new(1.0, 3.0).unwrap();
        let kernel = MarkKernel::step(two_types(), 0.0, vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let s = propagation_process(&pat, Point::new(0.1, 0.2), &spec, &params, Some(&kernel), 8).unwrap();
        assert_eq!(s.len(), 36);
        assert!(s.losses.windows(2).all(|w| w[0] <= w[1]));
        let rescaled = s.rescaled_distances.as_ref().unwrap();
        let sigma = spec.sigma();
        let k_eff = k_sigma(1.0, 3.0, sigma);
        for i in 0..s.len() {
            assert!(s.losses[i] > 0.0);
            assert_relative_eq!(s.log_losses[i].exp(), s.losses[i], max_relative = 1e-12);
            assert_relative_eq!(
                rescaled[i],
                rescaled_distance(s.distances[i], sigma, 3.0).unwrap(),
                epsilon = 1e-12
            );
            // Implied shadowing is positive and finite.
            let implied_s = (k_eff * s.distances[i]).powf(3.0) / s.losses[i];
            assert!(implied_s.is_finite() && implied_s > 0.0);
        }
        assert_eq!(s.types.as_ref().unwrap().len(), 36);
    }

    #[test]
    fn suzuki_factorization_matches_draws() {
        let ds = [0.7, 1.1, 2.3, 3.9];
        let spec = ShadowingSpec::new(0.0)
            .unwrap()
            .with_extra(ExtraFactor::RayleighPower { mean: 1.0 })
            .unwrap();
        let params = PropagationParams::new(1.0, 4.0).unwrap();
        let sample = propagation_process(&line_pattern(&ds), Point::ORIGIN, &spec, &params, None, 21).unwrap();
        let fs = sample_shadowing(&spec, ds.len(), 21);
        let mut expected: Vec<f64> = ds.iter().zip(&fs).map(|(&d, f)| d.powi(4) / f).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in sample.losses.iter().zip(&expected) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let pat = gen_hexagonal(6, 1.0).unwrap();
        let spec = ShadowingSpec::from_db(8.0).unwrap();
        let params = PropagationParams::new(1.0, 3.5).unwrap();
        let a = propagation_process(&pat, Point::new(0.3, 0.1), &spec, &params, None, 99).unwrap();
        let b = propagation_process(&pat, Point::new(0.3, 0.1), &spec, &params, None, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nu_n_examples() {
        assert_relative_eq!(nu_n(1e6, 1.0, 1.0, 4.0, 4.0), 1.0);
        let (k, b, r, n): (f64, f64, f64, f64) = (1.3, 3.5, 2.0, 9.0);
        let median = b * (k * r).ln() + n / b;
        assert_relative_eq!(nu_n(median, r, k, b, n), 0.5, epsilon = 1e-15);
        assert_relative_eq!(nu_n(2.0, 1.0, 1.0, 4.0, 4.0), 0.691_462_461_274_013, epsilon = 1e-12);
    }

    #[test]
    fn mean_measure_trivial_cases() {
        let empty = PointPattern::new(vec![], Metric::Plane, None);
        assert_eq!(exact_mean_measure(&empty, Point::ORIGIN, 0.0, 1.0, 4.0, 4.0, None), 0.0);
        let one = line_pattern(&[2.5]);
        assert_relative_eq!(
            exact_mean_measure(&one, Point::ORIGIN, 0.3, 1.0, 4.0, 4.0, None),
            nu_n(0.3, 2.5, 1.0, 4.0, 4.0)
        );
    }

    #[test]
    fn mean_measure_counts_match_simulation() {
        // Mean count of rescaled log-losses below s, simulated vs exact.
        let pat = gen_hexagonal(10, 1.0).unwrap();
        let user = Point::new(0.21, 0.13);
        let sigma = 2.0;
        let spec = ShadowingSpec::new(sigma).unwrap();
        let params = PropagationParams::new(1.0, 4.0).unwrap();
        let s = 1.0;
        let exact = exact_mean_measure(&pat, user, s, 1.0, 4.0, sigma * sigma, None);
        let reps = 4000;
        let counts: Vec<f64> = (0..reps)
            .map(|i| {
                let smp = propagation_process(&pat, user, &spec, &params, None, i).unwrap();
                smp.log_losses.iter().filter(|&&l| l <= s).count() as f64
            })
            .collect();
        let m = crate::math::mean(&counts);
        let se = (crate::math::variance(&counts) / reps as f64).sqrt();
        assert!((m - exact).abs() < 3.5 * se, "{m} vs {exact} (se {se})");
    }

    #[test]
    fn kernel_validation_and_interpolation() {
        assert!(MarkKernel::constant(two_types(), vec![0.5, 0.4]).is_err());
        assert!(MarkKernel::constant(two_types(), vec![0.5]).is_err());
        let k = MarkKernel::new(
            two_types(),
            vec![
                KernelNode { z: -1.0, probs: vec![1.0, 0.0] },
                KernelNode { z: 1.0, probs: vec![0.0, 1.0] },
            ],
        )
        .unwrap();
        assert_relative_eq!(k.prob(1, 0.0), 0.5);
        assert_eq!(k.prob(1, -5.0), 0.0);
        assert_eq!(k.prob(1, 5.0), 1.0);
        let step = MarkKernel::step(two_types(), 0.0, vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(step.prob(1, -1e-9), 0.0);
        assert_eq!(step.prob(1, 1e-9), 1.0);
    }

    #[test]
    fn gaussian_expectation_closed_forms() {
        let step = MarkKernel::step(two_types(), 0.0, vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let e = step.gaussian_expectation(0.5, f64::INFINITY);
        assert_relative_eq!(e[1], normal_cdf(0.5), epsilon = 1e-14);
        assert_relative_eq!(e[0] + e[1], 1.0, epsilon = 1e-14);
        // Ramp kernel p_b(z) = clamp((z+1)/2): compare to midpoint quadrature.
        let ramp = MarkKernel::new(
            two_types(),
            vec![
                KernelNode { z: -1.0, probs: vec![1.0, 0.0] },
                KernelNode { z: 1.0, probs: vec![0.0, 1.0] },
            ],
        )
        .unwrap();
        let exact = ramp.gaussian_expectation(0.3, 0.7)[1];
        let (lo, n) = (-12.0, 400_000);
        let h = (0.7 - lo) / n as f64;
        let num: f64 = (0..n)
            .map(|i| {
                let w = lo + (i as f64 + 0.5) * h;
                ramp.prob(1, w) * normal_pdf(w - 0.3) * h
            })
            .sum();
        assert_relative_eq!(exact, num, epsilon = 1e-9);
    }

    #[test]
    fn compensated_radius_bounds_tail() {
        let sigma = sigma_from_db(10.0);
        let r = compensated_radius(1.0, 50.0, 1.0, 4.0, sigma, 1e-4);
        assert!(outer_tail_mass(1.0, r, 50.0, 1.0, 4.0, sigma) <= 1e-4);
        assert!(outer_tail_mass(1.0, r * 0.9, 50.0, 1.0, 4.0, sigma) > 1e-4);
        // Deterministic case: (K R)^beta must exceed t.
        assert_eq!(outer_tail_mass(1.0, 3.0, 16.0, 1.0, 4.0, 0.0), 0.0);
    }

    #[test]
    fn sigma_db_conversion() {
        assert_relative_eq!(sigma_from_db(10.0), LN_10);
        assert_relative_eq!(sigma_to_db(sigma_from_db(7.5)), 7.5);
    }
}
