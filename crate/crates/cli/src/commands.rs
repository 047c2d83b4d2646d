use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use propagation_limit::estimator::{fit_beta, ingest_measurements};
use propagation_limit::geometry::gen_hexagonal;
use propagation_limit::parallel::{derive_seed, stream_rng};
use propagation_limit::propagation::{
    propagation_process, LossScaling, MarkKernel, PropagationParams, ShadowingSpec, Truncation,
};
use propagation_limit::stats::{
    convergence_point, critical_sigma_search, default_sir_thresholds, draw_user, sir_experiment,
    ConvergenceSetup, SirSetup,
};
use propagation_limit::{Error, Exec};
use serde::Serialize;
use serde_json::json;

use crate::config::{
    self, ConvergenceConfig, CriticalSigmaConfig, FitConfig, SimulateConfig, SirCompareConfig,
    TruncationConfig,
};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_kernel(path: Option<&Path>) -> Result<Option<MarkKernel>> {
    path.map(|p| MarkKernel::load(p).with_context(|| format!("mark kernel {}", p.display())))
        .transpose()
}

pub fn simulate(cfg: &SimulateConfig, out: &Path, exec: Exec) -> Result<()> {
    let pattern = cfg.pattern.build()?;
    let spec = ShadowingSpec::from_db(cfg.sigma_db)?.with_extra(cfg.extra.clone())?;
    let mut params = PropagationParams::new(cfg.k, cfg.beta)?;
    if cfg.scaling == LossScaling::Raw {
        params = params.raw();
    }
    if let Some(t) = &cfg.truncation {
        params = params.truncated(match t {
            TruncationConfig::Default => Truncation::default_for(spec.sigma()),
            TruncationConfig::Explicit { inner, outer } => Truncation::new(*inner, *outer)?,
        });
    }
    let kernel = load_kernel(cfg.mark_kernel.as_deref())?;
    let hash = config::hash(cfg);
    let samples = exec.try_map(cfg.replications, |i| {
        let user = match cfg.user {
            Some(u) => u,
            None => draw_user(&pattern, &mut stream_rng(cfg.seed, 0x5553, i as u64)),
        };
        let seed = derive_seed(cfg.seed, 0x5350, i as u64);
        propagation_process(&pattern, user, &spec, &params, kernel.as_ref(), seed)
    })?;
    for (i, s) in samples.iter().enumerate() {
        s.write_csv(&out.join(format!("sample_{i:03}.csv")))?;
        write_json(
            &out.join(format!("sample_{i:03}.json")),
            &json!({
                "config_hash": hash,
                "master_seed": cfg.seed,
                "replication": i,
                "stations": s.len(),
                "meta": s.meta,
            }),
        )?;
    }
    Ok(())
}

pub fn convergence(cfg: &ConvergenceConfig, out: &Path, exec: Exec) -> Result<()> {
    if !cfg.sigma_db_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Parameter("sigma_db_grid must be strictly increasing".into()).into());
    }
    let pattern = cfg.pattern.build()?;
    let kernel = load_kernel(cfg.mark_kernel.as_deref())?;
    let points = cfg
        .sigma_db_grid
        .iter()
        .enumerate()
        .map(|(i, &sigma_db)| {
            let setup = ConvergenceSetup {
                sigma_db,
                beta: cfg.beta,
                k: cfg.k,
                replications: cfg.replications,
                window_mean: cfg.window_mean,
            };
            convergence_point(
                &pattern,
                &setup,
                kernel.as_ref(),
                derive_seed(cfg.seed, 0xC0, i as u64),
                exec,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_json(
        &out.join("convergence.json"),
        &json!({
            "config_hash": config::hash(cfg),
            "master_seed": cfg.seed,
            "density": pattern.density(),
            "points": points,
        }),
    )
}

pub fn critical_sigma(cfg: &CriticalSigmaConfig, out: &Path, exec: Exec) -> Result<()> {
    let hash = config::hash(cfg);
    let mut csv = csv::Writer::from_path(out.join("critical_sigma.csv"))?;
    csv.write_record(["beta", "N", "sigma_db_star"])?;
    let mut runs = Vec::new();
    for (ni, &n) in cfg.sizes.iter().enumerate() {
        let pattern = gen_hexagonal(n, cfg.spacing)?;
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            let seed = derive_seed(cfg.seed, ni as u64, bi as u64);
            let result = critical_sigma_search(&pattern, beta, cfg.k, &cfg.protocol, seed, exec)?;
            let star = result
                .sigma_db_star
                .map_or_else(|| "above_grid_max".to_string(), |s| s.to_string());
            csv.write_record([beta.to_string(), n.to_string(), star])?;
            runs.push(json!({ "beta": beta, "n": n, "result": result }));
        }
    }
    csv.flush()?;
    write_json(
        &out.join("critical_sigma.json"),
        &json!({ "config_hash": hash, "master_seed": cfg.seed, "runs": runs }),
    )
}

fn write_ccdf(path: &Path, t: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "value"])?;
    for (t, v) in t.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sir_compare(cfg: &SirCompareConfig, out: &Path, exec: Exec) -> Result<()> {
    let pattern = cfg.pattern.build()?;
    let setup = SirSetup {
        sigma_db: cfg.sigma_db,
        beta: cfg.beta,
        k: cfg.k,
        replications: cfg.replications,
        limit_replications: cfg.limit_replications,
        thresholds: cfg.thresholds.clone().unwrap_or_else(default_sir_thresholds),
        alpha: cfg.alpha,
    };
    let cmp = sir_experiment(&pattern, &setup, cfg.seed, exec)?;
    write_ccdf(&out.join("sir_network_ccdf.csv"), &cmp.thresholds, &cmp.network_ccdf)?;
    write_ccdf(&out.join("sir_limit_ccdf.csv"), &cmp.thresholds, &cmp.limit_ccdf)?;
    write_json(
        &out.join("sir_compare.json"),
        &json!({
            "config_hash": config::hash(cfg),
            "master_seed": cfg.seed,
            "comparison": cmp,
        }),
    )
}

pub fn fit(cfg: &FitConfig, out: &Path) -> Result<()> {
    let data = ingest_measurements(&cfg.input, cfg.column)?;
    let fit = fit_beta(&data.samples, &cfg.grid)?;
    write_json(
        &out.join("fit.json"),
        &json!({
            "config_hash": config::hash(cfg),
            "rows": data.rows,
            "invalid_rows": data.invalid,
            "fit": fit,
        }),
    )
}
