//! Base-station point patterns and distances under plane or toroidal metrics.
//!
//! Windows are axis-aligned rectangles centred on the origin. On a torus the
//! rectangle's opposite edges are identified, so every station sees the same
//! (boundary-free) neighbourhood.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};
use crate::parallel::rng_from_seed;

/// Minimum allowed separation between the user and any station.
pub const ORIGIN_EXCLUSION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Rectangle `[-w/2, w/2) x [-h/2, h/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(width: f64, height: f64) -> Self {
        Rect { width, height }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Largest radius of a disc centred at the origin that fits inside.
    pub fn inner_radius(&self) -> f64 {
        0.5 * self.width.min(self.height)
    }

    fn validate(&self) -> Result<()> {
        ensure(
            self.width > 0.0 && self.height > 0.0 && self.area().is_finite(),
            || format!("window extent must be positive and finite, got {self:?}"),
        )
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point {
            x: (rng.random::<f64>() - 0.5) * self.width,
            y: (rng.random::<f64>() - 0.5) * self.height,
        }
    }

    /// Wrap a point into the rectangle (torus identification).
    pub fn wrap(&self, p: Point) -> Point {
        let wrap1 = |v: f64, ext: f64| v - ext * ((v + 0.5 * ext) / ext).floor();
        Point {
            x: wrap1(p.x, self.width),
            y: wrap1(p.y, self.height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Plane,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum Metric {
    Plane,
    Torus { width: f64, height: f64 },
}

impl Metric {
    pub fn torus(extent: Rect) -> Result<Self> {
        extent.validate()?;
        Ok(Metric::Torus {
            width: extent.width,
            height: extent.height,
        })
    }

    pub fn extent(&self) -> Option<Rect> {
        match *self {
            Metric::Plane => None,
            Metric::Torus { width, height } => Some(Rect { width, height }),
        }
    }

    /// Euclidean distance, or on a torus the shortest distance between any
    /// of the translated copies.
    #[inline]
    pub fn distance(&self, p: Point, q: Point) -> f64 {
        self.distance_sq(p, q).sqrt()
    }

    #[inline]
    pub fn distance_sq(&self, p: Point, q: Point) -> f64 {
        let mut dx = (p.x - q.x).abs();
        let mut dy = (p.y - q.y).abs();
        if let Metric::Torus { width, height } = *self {
            // For in-domain points |dx| < width, so the nearest copy is
            // either the point itself or the one shifted by one period.
            dx = dx.min(width - dx);
            dy = dy.min(height - dy);
        }
        dx * dx + dy * dy
    }
}

/// Free-function form of [`Metric::distance`].
pub fn distance(p: Point, q: Point, metric: &Metric) -> f64 {
    metric.distance(p, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub metric: Metric,
    /// Nominal station density per unit area; `None` for loaded data.
    pub nominal_density: Option<f64>,
}

impl PointPattern {
    pub fn new(points: Vec<Point>, metric: Metric, nominal_density: Option<f64>) -> Self {
        PointPattern {
            points,
            metric,
            nominal_density,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nominal density, or the empirical one at the largest in-window radius.
    pub fn density(&self) -> f64 {
        self.nominal_density
            .unwrap_or_else(|| self.estimate_density())
    }

    /// Empirical density from the homogeneity profile at the largest radius
    /// available: the inscribed radius for tori, the farthest station for
    /// plane patterns.
    pub fn estimate_density(&self) -> f64 {
        let r = match self.metric.extent() {
            Some(ext) => ext.inner_radius(),
            None => self
                .points
                .iter()
                .map(Point::norm)
                .fold(0.0, f64::max),
        };
        if r <= 0.0 {
            return 0.0;
        }
        homogeneity_profile(self, &[r])
            .map(|p| p.points[0].1)
            .unwrap_or(0.0)
    }

    /// Error when a station lies within [`ORIGIN_EXCLUSION`] of `user`.
    pub fn check_user(&self, user: Point) -> Result<()> {
        let min_sq = ORIGIN_EXCLUSION * ORIGIN_EXCLUSION;
        match self
            .points
            .iter()
            .position(|&p| self.metric.distance_sq(p, user) < min_sq)
        {
            Some(i) => Err(param(format!(
                "station {i} at ({}, {}) coincides with the user location",
                self.points[i].x, self.points[i].y
            ))),
            None => Ok(()),
        }
    }

    /// Distances from `user` to each station, in pattern order.
    pub fn distances_from(&self, user: Point) -> Vec<f64> {
        self.points
            .iter()
            .map(|&p| self.metric.distance(user, p))
            .collect()
    }
}

/// Homogeneous Poisson pattern of the given density in `window`.
pub fn gen_poisson(
    density: f64,
    window: Rect,
    metric: MetricKind,
    seed: u64,
) -> Result<PointPattern> {
    let mut rng = rng_from_seed(seed);
    gen_poisson_with(density, window, metric, &mut rng)
}

/// [`gen_poisson`] drawing from a caller-provided generator.
pub fn gen_poisson_with<R: Rng + ?Sized>(
    density: f64,
    window: Rect,
    metric: MetricKind,
    rng: &mut R,
) -> Result<PointPattern> {
    ensure(density > 0.0 && density.is_finite(), || {
        format!("density must be positive, got {density}")
    })?;
    window.validate()?;
    let mean = density * window.area();
    let count = Poisson::new(mean)
        .map_err(|e| param(format!("poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let points = (0..count).map(|_| window.sample_uniform(rng)).collect();
    let metric = match metric {
        MetricKind::Plane => Metric::Plane,
        MetricKind::Torus => Metric::torus(window)?,
    };
    Ok(PointPattern::new(points, metric, Some(density)))
}

/// Torus extent of the `n x n` hexagonal network with spacing `spacing`.
pub fn hexagonal_extent(n: usize, spacing: f64) -> Rect {
    let n = n as f64;
    Rect::new(n * spacing, n * 3f64.sqrt() * spacing / 2.0)
}

/// `n x n` stations on the triangular lattice filling
/// `[-nD/2, nD/2) x [-n sqrt(3) D/4, n sqrt(3) D/4)`, wrapped as a torus.
///
/// Odd rows are shifted by half a spacing; `n` should be even for the
/// lattice to close up across the torus seam.
pub fn gen_hexagonal(n: usize, spacing: f64) -> Result<PointPattern> {
    ensure(n >= 1, || "lattice size must be at least 1".into())?;
    ensure(spacing > 0.0 && spacing.is_finite(), || {
        format!("spacing must be positive, got {spacing}")
    })?;
    let extent = hexagonal_extent(n, spacing);
    let row_step = 3f64.sqrt() * spacing / 2.0;
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        let shift = if j % 2 == 1 { 0.5 * spacing } else { 0.0 };
        let y = -0.5 * extent.height + j as f64 * row_step;
        for i in 0..n {
            let x = -0.5 * extent.width + i as f64 * spacing + shift;
            points.push(Point { x, y });
        }
    }
    let density = 2.0 / (spacing * spacing * 3f64.sqrt());
    Ok(PointPattern::new(points, Metric::torus(extent)?, Some(density)))
}

/// Hexagonal lattice with every station displaced by an independent
/// isotropic Gaussian of standard deviation `jitter_std`, wrapped on the torus.
pub fn gen_perturbed_lattice(
    n: usize,
    spacing: f64,
    jitter_std: f64,
    seed: u64,
) -> Result<PointPattern> {
    ensure(jitter_std >= 0.0 && jitter_std.is_finite(), || {
        format!("jitter std must be non-negative, got {jitter_std}")
    })?;
    let mut pattern = gen_hexagonal(n, spacing)?;
    if jitter_std == 0.0 {
        return Ok(pattern);
    }
    let extent = hexagonal_extent(n, spacing);
    let normal = Normal::new(0.0, jitter_std).map_err(|e| param(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    for p in &mut pattern.points {
        let moved = Point {
            x: p.x + normal.sample(&mut rng),
            y: p.y + normal.sample(&mut rng),
        };
        *p = extent.wrap(moved);
    }
    Ok(pattern)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityProfile {
    /// `(r, count in B_0(r) / (pi r^2))`.
    pub points: Vec<(f64, f64)>,
    /// Set when the pattern had no stations.
    pub empty: bool,
}

/// Empirical density `#{|X| < r} / (pi r^2)` for each radius, counting on
/// the unwrapped coordinates around the origin.
pub fn homogeneity_profile(pattern: &PointPattern, radii: &[f64]) -> Result<HomogeneityProfile> {
    ensure(
        radii.iter().all(|&r| r > 0.0) && radii.windows(2).all(|w| w[0] < w[1]),
        || "radii must be positive and strictly increasing".into(),
    )?;
    let mut norms: Vec<f64> = pattern.points.iter().map(Point::norm).collect();
    norms.sort_by(f64::total_cmp);
    let points = radii
        .iter()
        .map(|&r| {
            let count = norms.partition_point(|&d| d < r);
            (r, count as f64 / (PI * r * r))
        })
        .collect();
    Ok(HomogeneityProfile {
        points,
        empty: pattern.is_empty(),
    })
}

/// Sidecar JSON describing the metric of a pattern CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSidecar {
    #[serde(flatten)]
    pub metric: Metric,
}

/// Read a `x,y` CSV and its metric sidecar. The density is left unset.
pub fn load_pattern(csv_path: &Path, sidecar_path: &Path) -> Result<PointPattern> {
    let sidecar: PatternSidecar = serde_json::from_reader(std::fs::File::open(sidecar_path)?)?;
    if let Metric::Torus { width, height } = sidecar.metric {
        Rect::new(width, height).validate()?;
    }
    let mut reader = csv::Reader::from_path(csv_path)?;
    let mut points = Vec::new();
    for (line, row) in reader.deserialize::<Point>().enumerate() {
        let p = row?;
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Data(format!("non-finite coordinate on row {}", line + 1)));
        }
        points.push(p);
    }
    Ok(PointPattern::new(points, sidecar.metric, None))
}

pub fn save_pattern(pattern: &PointPattern, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path)?;
    for p in &pattern.points {
        writer.serialize(p)?;
    }
    writer.flush()?;
    let sidecar = PatternSidecar {
        metric: pattern.metric,
    };
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn torus10() -> Metric {
        Metric::torus(Rect::new(10.0, 10.0)).unwrap()
    }

    /// Brute-force minimum over the nine translated copies.
    fn nine_copy(p: Point, q: Point, w: f64, h: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                let dx = p.x - (q.x + i as f64 * w);
                let dy = p.y - (q.y + j as f64 * h);
                best = best.min(dx.hypot(dy));
            }
        }
        best
    }

    #[test]
    fn distance_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(distance(o, Point::new(3.0, 4.0), &Metric::Plane), 5.0);
        // (0,0)-(9,0) on a 10x10 torus; coordinates shifted into [-5,5).
        let a = Point::new(-5.0, -5.0);
        let b = Point::new(4.0, -5.0);
        assert_relative_eq!(distance(a, b, &torus10()), 1.0, epsilon = 1e-12);
        let c = Point::new(-4.0, -4.0);
        let d = Point::new(4.0, 4.0);
        assert_relative_eq!(distance(c, d, &torus10()), 8f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(nine_copy(c, d, 10.0, 10.0), 8f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn hexagonal_examples() {
        let p = gen_hexagonal(2, 1.0).unwrap();
        assert_eq!(p.len(), 4);
        assert_relative_eq!(p.nominal_density.unwrap(), 2.0 / 3f64.sqrt(), epsilon = 1e-12);
        let ext = p.metric.extent().unwrap();
        assert_relative_eq!(4.0 / ext.area(), 2.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(gen_hexagonal(1, 1.0).unwrap().len(), 1);
        assert_eq!(gen_hexagonal(6, 1.0).unwrap().len(), 36);
        assert!(gen_hexagonal(0, 1.0).is_err());
        assert!(gen_hexagonal(3, 0.0).is_err());
    }

    #[test]
    fn hexagonal_points_inside_window() {
        let p = gen_hexagonal(6, 2.0).unwrap();
        let ext = p.metric.extent().unwrap();
        for q in &p.points {
            assert!(q.x >= -ext.width / 2.0 && q.x < ext.width / 2.0);
            assert!(q.y >= -ext.height / 2.0 && q.y < ext.height / 2.0);
        }
    }

    #[test]
    fn hexagonal_nearest_neighbours_at_spacing() {
        // Every station has six neighbours at exactly one spacing on the torus.
        let p = gen_hexagonal(6, 1.5).unwrap();
        for &a in &p.points {
            let close = p
                .points
                .iter()
                .filter(|&&b| (p.metric.distance(a, b) - 1.5).abs() < 1e-9)
                .count();
            assert_eq!(close, 6);
        }
    }

    #[test]
    fn hexagonal_homogeneity_within_five_percent() {
        let p = gen_hexagonal(30, 1.0).unwrap();
        let r = p.metric.extent().unwrap().inner_radius();
        let prof = homogeneity_profile(&p, &[r]).unwrap();
        let target = 2.0 / 3f64.sqrt();
        assert!((prof.points[0].1 / target - 1.0).abs() < 0.05, "{prof:?}");
    }

    #[test]
    fn homogeneity_single_point() {
        let p = PointPattern::new(vec![Point::new(1.0, 0.0)], Metric::Plane, None);
        let prof = homogeneity_profile(&p, &[2.0]).unwrap();
        assert_relative_eq!(prof.points[0].1, 1.0 / (4.0 * PI));
        assert!(!prof.empty);
    }

    #[test]
    fn homogeneity_empty_pattern_is_flagged() {
        let p = PointPattern::new(vec![], Metric::Plane, None);
        let prof = homogeneity_profile(&p, &[1.0, 2.0]).unwrap();
        assert!(prof.empty);
        assert!(prof.points.iter().all(|&(_, d)| d == 0.0));
        assert!(homogeneity_profile(&p, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn poisson_mean_count_at_hexagonal_density() {
        // 5.09 per km^2 on 10 km x 10 km: mean 509.
        let counts: Vec<f64> = (0..200)
            .map(|s| {
                gen_poisson(5.09, Rect::new(10.0, 10.0), MetricKind::Plane, s)
                    .unwrap()
                    .len() as f64
            })
            .collect();
        let m = crate::math::mean(&counts);
        let se = (509.0f64 / 200.0).sqrt();
        assert!((m - 509.0).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn poisson_unit_mean_and_variance() {
        let counts: Vec<f64> = (0..10_000)
            .map(|s| {
                gen_poisson(1.0, Rect::new(1.0, 1.0), MetricKind::Torus, s)
                    .unwrap()
                    .len() as f64
            })
            .collect();
        let n = counts.len() as f64;
        let m = crate::math::mean(&counts);
        let v = crate::math::variance(&counts);
        // SE of mean is 1/sqrt(n); SE of the variance of Poisson(1) counts
        // is sqrt((mu4 - sigma^4)/n) with mu4 = 1 + 3.
        assert!((m - 1.0).abs() < 3.0 / n.sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 3.0 * (3.0 / n).sqrt(), "var {v}");
    }

    #[test]
    fn poisson_vanishing_density_and_errors() {
        let p = gen_poisson(1e-12, Rect::new(1.0, 1.0), MetricKind::Plane, 3).unwrap();
        assert!(p.is_empty());
        assert!(gen_poisson(0.0, Rect::new(1.0, 1.0), MetricKind::Plane, 3).is_err());
        assert!(gen_poisson(1.0, Rect::new(0.0, 1.0), MetricKind::Plane, 3).is_err());
    }

    #[test]
    fn poisson_homogeneity_at_large_radius() {
        let p = gen_poisson(1.0, Rect::new(100.0, 100.0), MetricKind::Plane, 11).unwrap();
        let prof = homogeneity_profile(&p, &[50.0]).unwrap();
        let area = PI * 2500.0;
        let se = (1.0 / area).sqrt();
        assert!((prof.points[0].1 - 1.0).abs() < 3.0 * se, "{prof:?}");
    }

    #[test]
    fn perturbed_lattice_determinism_and_zero_jitter() {
        let hex = gen_hexagonal(6, 1.0).unwrap();
        assert_eq!(gen_perturbed_lattice(6, 1.0, 0.0, 5).unwrap(), hex);
        let a = gen_perturbed_lattice(6, 1.0, 0.3, 5).unwrap();
        let b = gen_perturbed_lattice(6, 1.0, 0.3, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, hex);
        let ext = a.metric.extent().unwrap();
        for q in &a.points {
            assert!(q.x.abs() <= ext.width / 2.0 && q.y.abs() <= ext.height / 2.0);
        }
    }

    /// Ripley K estimate at radius `r` on a torus (no edge effects).
    fn ripley_k(p: &PointPattern, r: f64) -> f64 {
        let n = p.len() as f64;
        let area = p.metric.extent().unwrap().area();
        let mut pairs = 0usize;
        for (i, &a) in p.points.iter().enumerate() {
            for &b in &p.points[i + 1..] {
                if p.metric.distance(a, b) < r {
                    pairs += 2;
                }
            }
        }
        area * pairs as f64 / (n * n)
    }

    #[test]
    fn perturbed_lattice_ripley_k_approaches_poisson() {
        // Short range: a perfect lattice has no pairs closer than a spacing,
        // strong jitter restores roughly pi r^2 worth of close pairs.
        let r = 0.5;
        let poisson_k = PI * r * r;
        let lattice = gen_hexagonal(30, 1.0).unwrap();
        assert_eq!(ripley_k(&lattice, r), 0.0);
        let ks: Vec<f64> = (0..5)
            .map(|s| ripley_k(&gen_perturbed_lattice(30, 1.0, 1.0, s).unwrap(), r))
            .collect();
        let k = crate::math::mean(&ks);
        assert!((k / poisson_k - 1.0).abs() < 0.15, "K {k} vs {poisson_k}");
    }

    #[test]
    fn user_exclusion() {
        let p = gen_hexagonal(4, 1.0).unwrap();
        // N = 4 puts a station on the origin.
        assert!(p.check_user(Point::ORIGIN).is_err());
        assert!(p.check_user(Point::new(0.25, 0.1)).is_ok());
    }

    #[test]
    fn csv_round_trip_estimates_density() {
        let dir = tempfile::tempdir().unwrap();
        let hex = gen_hexagonal(30, 1.0).unwrap();
        let (c, s) = (dir.path().join("p.csv"), dir.path().join("p.json"));
        save_pattern(&hex, &c, &s).unwrap();
        let sidecar = std::fs::read_to_string(&s).unwrap();
        assert!(sidecar.contains("\"metric\": \"torus\""), "{sidecar}");
        let loaded = load_pattern(&c, &s).unwrap();
        assert_eq!(loaded.points.len(), 900);
        assert_eq!(loaded.metric, hex.metric);
        assert!(loaded.nominal_density.is_none());
        assert!((loaded.density() / hex.density() - 1.0).abs() < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn torus_distance_is_a_metric(
            ax in -5.0..5.0f64, ay in -3.0..3.0f64,
            bx in -5.0..5.0f64, by in -3.0..3.0f64,
            cx in -5.0..5.0f64, cy in -3.0..3.0f64,
        ) {
            let m = Metric::torus(Rect::new(10.0, 6.0)).unwrap();
            let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
            let dab = m.distance(a, b);
            prop_assert!((dab - m.distance(b, a)).abs() < 1e-12);
            prop_assert!(dab <= m.distance(a, c) + m.distance(c, b) + 1e-12);
            prop_assert!((dab - nine_copy(a, b, 10.0, 6.0)).abs() < 1e-12);
        }
    }
}
