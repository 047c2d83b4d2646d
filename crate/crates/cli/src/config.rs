use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use propagation_limit::estimator::{LossColumn, TGridPolicy};
use propagation_limit::geometry::Point;
use propagation_limit::propagation::{ExtraFactor, LossScaling};
use propagation_limit::stats::{CriticalSigmaProtocol, PatternSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Configs are plain JSON files. A `seed` field is the default master seed;
/// `--seed` overrides it.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// SHA-256 of the canonical JSON form of the effective config.
pub fn hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(Sha256::digest(json))
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TruncationConfig {
    /// `(max(e^sigma - 1, 0), e^(sigma^3))`.
    Default,
    Explicit { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub pattern: PatternSpec,
    #[serde(default = "one")]
    pub k: f64,
    pub beta: f64,
    pub sigma_db: f64,
    #[serde(default)]
    pub scaling: LossScaling,
    #[serde(default)]
    pub truncation: Option<TruncationConfig>,
    #[serde(default)]
    pub extra: ExtraFactor,
    #[serde(default)]
    pub mark_kernel: Option<PathBuf>,
    #[serde(default = "default_simulate_reps")]
    pub replications: usize,
    /// Fixed user; uniform on the torus (origin on the plane) when absent.
    #[serde(default)]
    pub user: Option<Point>,
    #[serde(default)]
    pub seed: u64,
}

fn default_simulate_reps() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub pattern: PatternSpec,
    #[serde(default = "one")]
    pub k: f64,
    pub beta: f64,
    pub sigma_db_grid: Vec<f64>,
    #[serde(default = "default_convergence_reps")]
    pub replications: usize,
    #[serde(default = "default_window_mean")]
    pub window_mean: f64,
    #[serde(default)]
    pub mark_kernel: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_convergence_reps() -> usize {
    100
}

fn default_window_mean() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSigmaConfig {
    pub betas: Vec<f64>,
    /// Hexagonal network sizes `N` (N x N stations).
    pub sizes: Vec<usize>,
    #[serde(default = "one")]
    pub spacing: f64,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default)]
    pub protocol: CriticalSigmaProtocol,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirCompareConfig {
    pub pattern: PatternSpec,
    #[serde(default = "one")]
    pub k: f64,
    pub beta: f64,
    pub sigma_db: f64,
    #[serde(default = "default_sir_reps")]
    pub replications: usize,
    #[serde(default = "default_limit_reps")]
    pub limit_replications: usize,
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_sir_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sir_reps() -> usize {
    300
}

fn default_limit_reps() -> usize {
    3000
}

fn default_sir_alpha() -> f64 {
    0.10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub column: LossColumn,
    #[serde(default)]
    pub grid: TGridPolicy,
    #[serde(default)]
    pub seed: u64,
}
