//! Command execution: validate, compute, write artifacts, one summary
//! line on stdout.

use crate::config::{
    GridWindow, ModelSpec, OutputFormat, OutputSpec, RunConfig, TeMode, TimeWindow,
};
use crate::output::{config_hash, csv_metadata, fmt_f64, json_artifact, json_metadata};
use cttx_core::comb::CombGrid;
use cttx_core::dte::{te_comb_sum_plugin, TEEstimate};
use cttx_core::limits::{
    converge_te, te_rate_fd, ConvergenceReport, GirsanovEpt, LaggedPoissonSource, PluginSource,
    RateReport, Schedule, TauSSurrogate,
};
use cttx_core::markov::{build_model, ept_monte_carlo, EptResult};
use cttx_core::paths::{
    simulate_ctmc, simulate_thppp, CtmcSpec, PoissonSpec, ProcessPair, SamplePath,
};
use cttx_core::poisson::{
    analytic_limit, path_kl, s_value, simulate_lagged_ensemble, ExactLaggedTe,
    LaggedPoissonParams,
};
use cttx_core::rng::stream_seed;
use cttx_core::Error as CoreError;
use serde::Deserialize;

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::AbsoluteContinuity(_) => 3,
            CoreError::Numerical(_) => 4,
            CoreError::Estimation(_) => 5,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub format: Option<OutputFormat>,
}

/// Parse, validate, run, and write. Returns the summary line.
pub fn run(command: &str, raw_config: &str, overrides: &Overrides) -> CliResult<String> {
    let mut config: RunConfig = serde_json::from_str(raw_config)
        .map_err(|e| CliError::config(format!("config schema: {e}")))?;
    let configured_command = match &config {
        RunConfig::Simulate { .. } => "simulate",
        RunConfig::Dte { .. } => "dte",
        RunConfig::Ppp { .. } => "ppp",
        RunConfig::Girsanov { .. } => "girsanov",
        RunConfig::Rate { .. } => "rate",
        RunConfig::Converge { .. } => "converge",
    };
    if command != configured_command {
        return Err(CliError::config(format!(
            "command {command:?} does not match config command {configured_command:?}"
        )));
    }
    if let Some(seed) = overrides.seed {
        *config.seed_mut() = seed;
    }
    let output = resolve_output(config.output(), overrides)?;
    let hash = config_hash(raw_config);
    let seed = *config.seed_mut();

    let artifact = match &config {
        RunConfig::Simulate { model, window, n_paths, seed, .. } => {
            cmd_simulate(model, *window, *n_paths, *seed, output.format)?
        }
        RunConfig::Dte { model, window, dt, mode, n_paths, seed, .. } => {
            cmd_dte(model, *window, *dt, *mode, *n_paths, *seed, output.format)?
        }
        RunConfig::Ppp { model, window, schedule, n_paths, seed, .. } => {
            cmd_ppp(model, *window, schedule, *n_paths, *seed, output.format)?
        }
        RunConfig::Girsanov { model, window, n_paths, seed, .. } => {
            cmd_girsanov(model, *window, *n_paths, *seed, output.format)?
        }
        RunConfig::Rate { model, t, windows, dt, s, r, n_paths, seed, .. } => {
            cmd_rate(model, *t, windows, *dt, *s, *r, *n_paths, *seed, output.format)?
        }
        RunConfig::Converge { model, window, schedule, mode, n_paths, seed, .. } => {
            cmd_converge(model, *window, schedule, *mode, *n_paths, *seed, output.format)?
        }
    };

    let rendered = match output.format {
        OutputFormat::Csv => format!("{}{}", csv_metadata(&hash, seed), artifact.body),
        OutputFormat::Json => json_artifact(json_metadata(&hash, seed), artifact.json),
    };
    std::fs::write(&output.path, rendered)
        .map_err(|e| CliError::config(format!("writing {}: {e}", output.path)))?;
    Ok(format!("{command}: {} -> {}", artifact.summary, output.path))
}

struct Artifact {
    /// CSV body (header + rows)
    body: String,
    /// JSON data payload
    json: serde_json::Value,
    summary: String,
}

fn resolve_output(spec: &Option<OutputSpec>, overrides: &Overrides) -> CliResult<OutputSpec> {
    let mut out = spec.clone().or_else(|| {
        overrides.out.as_ref().map(|p| OutputSpec {
            path: p.clone(),
            format: overrides.format.unwrap_or(OutputFormat::Csv),
        })
    });
    if let Some(o) = &mut out {
        if let Some(p) = &overrides.out {
            o.path = p.clone();
        }
        if let Some(f) = overrides.format {
            o.format = f;
        }
    }
    // environment override for the output directory
    if let (Some(o), Ok(dir)) = (&mut out, std::env::var("CTTX_OUT_DIR")) {
        if !dir.is_empty() {
            let file = std::path::Path::new(&o.path)
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_else(|| o.path.clone());
            o.path = format!("{dir}/{file}");
        }
    }
    out.ok_or_else(|| CliError::config("no output destination: set config.output or --out"))
}

fn lagged_params(model: &ModelSpec, window: GridWindow) -> CliResult<LaggedPoissonParams> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        lambda: f64,
        epsilon: f64,
    }
    let p: P = serde_json::from_value(model.params.clone())
        .map_err(|e| CliError::config(format!("lagged-poisson params: {e}")))?;
    Ok(LaggedPoissonParams::new(p.lambda, p.epsilon, window.r, window.s, window.t0, window.t_end)?)
}

fn registry_ensemble(
    model: &ModelSpec,
    grid: &CombGrid,
    window: GridWindow,
    n_paths: usize,
    seed: u64,
) -> CliResult<Vec<ProcessPair>> {
    let m = build_model(&model.name, &model.params)?;
    let lo = window.t0 - window.s.max(window.r) - 2.0 * grid.dt;
    let hi = window.t_end + 2.0 * grid.dt;
    (0..n_paths)
        .map(|i| Ok(m.simulate_pair(lo, hi, stream_seed(seed, i as u64))?))
        .collect()
}

fn require_paths(n_paths: usize) -> CliResult<()> {
    if n_paths == 0 {
        return Err(CliError::config("n_paths must be at least 1"));
    }
    Ok(())
}

fn cmd_simulate(
    model: &ModelSpec,
    window: TimeWindow,
    n_paths: usize,
    seed: u64,
    format: OutputFormat,
) -> CliResult<Artifact> {
    require_paths(n_paths)?;
    enum Sim {
        Single(Vec<SamplePath>),
        Pairs(Vec<ProcessPair>),
    }
    let sim = match model.name.as_str() {
        "thppp" => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct P {
                lambda: f64,
                #[serde(default)]
                epsilon: Option<f64>,
            }
            let p: P = serde_json::from_value(model.params.clone())
                .map_err(|e| CliError::config(format!("thppp params: {e}")))?;
            let spec = PoissonSpec::new(p.lambda, p.epsilon.unwrap_or(1.0))?;
            let paths = (0..n_paths)
                .map(|i| {
                    Ok(simulate_thppp(&spec, window.t0, window.t_end, stream_seed(seed, i as u64))?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Sim::Single(paths)
        }
        "ctmc" => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct P {
                rate_matrix: Vec<Vec<f64>>,
                init_state: usize,
            }
            let p: P = serde_json::from_value(model.params.clone())
                .map_err(|e| CliError::config(format!("ctmc params: {e}")))?;
            let spec = CtmcSpec::new(p.rate_matrix, p.init_state)?;
            let paths = (0..n_paths)
                .map(|i| {
                    Ok(simulate_ctmc(&spec, window.t0, window.t_end, stream_seed(seed, i as u64))?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Sim::Single(paths)
        }
        "lagged-poisson" => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct P {
                lambda: f64,
                epsilon: f64,
            }
            let p: P = serde_json::from_value(model.params.clone())
                .map_err(|e| CliError::config(format!("lagged-poisson params: {e}")))?;
            let spec = PoissonSpec::new(p.lambda, p.epsilon)?;
            let pairs = (0..n_paths)
                .map(|i| {
                    let base = simulate_thppp(
                        &spec,
                        window.t0,
                        window.t_end + p.epsilon,
                        stream_seed(seed, i as u64),
                    )?;
                    let y = cttx_core::paths::lag_path(&base, p.epsilon)?;
                    let x = base.restrict(window.t0, window.t_end)?;
                    let y = y.restrict(window.t0, window.t_end)?;
                    Ok(ProcessPair::new(x, y)?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Sim::Pairs(pairs)
        }
        name => {
            let m = build_model(name, &model.params)?;
            let pairs = (0..n_paths)
                .map(|i| Ok(m.simulate_pair(window.t0, window.t_end, stream_seed(seed, i as u64))?))
                .collect::<CliResult<Vec<_>>>()?;
            Sim::Pairs(pairs)
        }
    };
    match sim {
        Sim::Single(paths) => {
            let body = if paths.len() == 1 {
                paths[0].to_event_csv()
            } else if format == OutputFormat::Csv {
                return Err(CliError::config(
                    "CSV event-list output holds a single path; use n_paths = 1 or JSON",
                ));
            } else {
                String::new()
            };
            let json = serde_json::json!({ "paths": paths });
            let summary = format!("{} path(s)", paths.len());
            Ok(Artifact { body, json, summary })
        }
        Sim::Pairs(pairs) => {
            if format == OutputFormat::Csv {
                return Err(CliError::config(
                    "pair models serialize to JSON; use format json",
                ));
            }
            let summary = format!("{} pair(s)", pairs.len());
            let json = serde_json::json!({ "pairs": pairs });
            Ok(Artifact { body: String::new(), json, summary })
        }
    }
}

fn te_artifact(est: &TEEstimate, grid: &CombGrid) -> CliResult<Artifact> {
    let mut body = String::from("i,node_time,te_nats\n");
    for &(i, v) in &est.per_step {
        body.push_str(&format!("{i},{},{}\n", fmt_f64(grid.node(i)?), fmt_f64(v)));
    }
    let json = serde_json::to_value(est).map_err(|e| CliError::config(e.to_string()))?;
    Ok(Artifact {
        body,
        json,
        summary: format!("te = {} ± {} over {} steps", est.value, est.stderr, grid.tau),
    })
}

fn cmd_dte(
    model: &ModelSpec,
    window: GridWindow,
    dt: f64,
    mode: TeMode,
    n_paths: usize,
    seed: u64,
    format: OutputFormat,
) -> CliResult<Artifact> {
    let _ = format;
    match (model.name.as_str(), mode) {
        ("lagged-poisson", TeMode::Exact) => {
            let params = lagged_params(model, window)?;
            let grid = params.grid(dt)?;
            let est = ExactLaggedTe::new(params).te_comb_sum(&grid)?;
            te_artifact(&est, &grid)
        }
        ("lagged-poisson", TeMode::Plugin) => {
            require_paths(n_paths)?;
            let params = lagged_params(model, window)?;
            let grid = params.grid(dt)?;
            let ensemble = simulate_lagged_ensemble(&params, dt, n_paths, seed)?;
            let est = te_comb_sum_plugin(&ensemble, &grid)?;
            te_artifact(&est, &grid)
        }
        (_, TeMode::Exact) => Err(CliError::config(format!(
            "exact mode is available for the lagged-poisson model only, not {:?}",
            model.name
        ))),
        (_, TeMode::Plugin) => {
            require_paths(n_paths)?;
            let grid = CombGrid::new(window.t0, window.t_end, window.s, window.r, dt)?;
            let ensemble = registry_ensemble(model, &grid, window, n_paths, seed)?;
            let est = te_comb_sum_plugin(&ensemble, &grid)?;
            te_artifact(&est, &grid)
        }
    }
}

fn cmd_ppp(
    model: &ModelSpec,
    window: GridWindow,
    schedule: &[f64],
    n_paths: usize,
    seed: u64,
    _format: OutputFormat,
) -> CliResult<Artifact> {
    require_paths(n_paths)?;
    if model.name != "lagged-poisson" {
        return Err(CliError::config("ppp requires the lagged-poisson model"));
    }
    let params = lagged_params(model, window)?;
    let schedule = Schedule::new(schedule.to_vec(), false)?;
    let dt_max = schedule.dt_values()[0];
    let ensemble = simulate_lagged_ensemble(&params, dt_max, n_paths, seed)?;
    let limit = analytic_limit(&params);
    let mut body = String::from("dt,tau,S,tauS,analytic_limit,mc_te,mc_stderr\n");
    let mut rows = Vec::new();
    for &dt in schedule.dt_values() {
        let grid = params.grid(dt)?;
        let s = s_value(params.lambda, dt, params.epsilon, params.r)?;
        let kls: Vec<f64> = ensemble
            .iter()
            .map(|pair| Ok(path_kl(&params, dt, pair, &grid)?.value))
            .collect::<CliResult<Vec<_>>>()?;
        let n = kls.len() as f64;
        let mean = kls.iter().sum::<f64>() / n;
        let var = kls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let stderr = (var / n).sqrt();
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(dt),
            grid.tau,
            fmt_f64(s),
            fmt_f64(grid.tau as f64 * s),
            fmt_f64(limit),
            fmt_f64(mean),
            fmt_f64(stderr)
        ));
        rows.push(serde_json::json!({
            "dt": dt,
            "tau": grid.tau,
            "S": s,
            "tauS": grid.tau as f64 * s,
            "analytic_limit": limit,
            "mc_te": mean,
            "mc_stderr": stderr,
        }));
    }
    Ok(Artifact {
        body,
        json: serde_json::json!({ "rows": rows }),
        summary: format!("{} schedule rows (limit {})", schedule.dt_values().len(), limit),
    })
}

fn cmd_girsanov(
    model: &ModelSpec,
    window: TimeWindow,
    n_paths: usize,
    seed: u64,
    _format: OutputFormat,
) -> CliResult<Artifact> {
    require_paths(n_paths)?;
    let m = build_model(&model.name, &model.params)?;
    let EptResult { estimate, quantiles } =
        ept_monte_carlo(m.as_ref(), window.t0, window.t_end, n_paths, seed)?;
    let json = serde_json::json!({
        "ept": estimate.value,
        "stderr": estimate.stderr,
        "n_paths": estimate.n_paths,
        "per_path_quantiles": {
            "p05": quantiles[0],
            "p25": quantiles[1],
            "p50": quantiles[2],
            "p75": quantiles[3],
            "p95": quantiles[4],
        },
    });
    let body = format!(
        "ept,stderr,n_paths,q05,q25,q50,q75,q95\n{},{},{},{},{},{},{},{}\n",
        fmt_f64(estimate.value),
        fmt_f64(estimate.stderr),
        estimate.n_paths,
        fmt_f64(quantiles[0]),
        fmt_f64(quantiles[1]),
        fmt_f64(quantiles[2]),
        fmt_f64(quantiles[3]),
        fmt_f64(quantiles[4])
    );
    Ok(Artifact {
        body,
        json,
        summary: format!("ept = {} ± {}", estimate.value, estimate.stderr),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_rate(
    model: &ModelSpec,
    t: f64,
    windows: &[f64],
    dt: Option<f64>,
    s: Option<f64>,
    r: Option<f64>,
    n_paths: usize,
    seed: u64,
    _format: OutputFormat,
) -> CliResult<Artifact> {
    let report: RateReport = if model.name == "lagged-poisson" {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct P {
            lambda: f64,
            epsilon: f64,
        }
        let p: P = serde_json::from_value(model.params.clone())
            .map_err(|e| CliError::config(format!("lagged-poisson params: {e}")))?;
        let surrogate = TauSSurrogate {
            lambda: p.lambda,
            epsilon: p.epsilon,
            r: r.ok_or_else(|| CliError::config("rate with lagged-poisson needs r"))?,
            s: s.ok_or_else(|| CliError::config("rate with lagged-poisson needs s"))?,
            dt: dt.ok_or_else(|| CliError::config("rate with lagged-poisson needs dt"))?,
        };
        te_rate_fd(&surrogate, t, windows)?
    } else {
        require_paths(n_paths)?;
        let m = build_model(&model.name, &model.params)?;
        let source = GirsanovEpt { model: m.as_ref(), n_paths, seed };
        te_rate_fd(&source, t, windows)?
    };
    let mut body = String::from("h,ept_over_h\n");
    for row in &report.rows {
        body.push_str(&format!("{},{}\n", fmt_f64(row.h), fmt_f64(row.rate)));
    }
    let json = serde_json::to_value(&report).map_err(|e| CliError::config(e.to_string()))?;
    Ok(Artifact {
        body,
        json,
        summary: format!(
            "{} windows, extrapolated rate {}",
            report.rows.len(),
            report.extrapolated.unwrap_or(f64::NAN)
        ),
    })
}

fn cmd_converge(
    model: &ModelSpec,
    window: GridWindow,
    schedule: &[f64],
    mode: TeMode,
    n_paths: usize,
    seed: u64,
    _format: OutputFormat,
) -> CliResult<Artifact> {
    let schedule = Schedule::new(schedule.to_vec(), false)?;
    let report: ConvergenceReport = match (model.name.as_str(), mode) {
        ("lagged-poisson", TeMode::Exact) => {
            let params = lagged_params(model, window)?;
            let ensemble = if n_paths > 0 {
                Some(simulate_lagged_ensemble(&params, schedule.dt_values()[0], n_paths, seed)?)
            } else {
                None
            };
            let source =
                LaggedPoissonSource { model: ExactLaggedTe::new(params), ensemble: ensemble.as_deref() };
            converge_te(&source, window.t0, window.t_end, window.s, window.r, &schedule)?
        }
        ("lagged-poisson", TeMode::Plugin) => {
            require_paths(n_paths)?;
            let params = lagged_params(model, window)?;
            let ensemble =
                simulate_lagged_ensemble(&params, schedule.dt_values()[0], n_paths, seed)?;
            let source = PluginSource { ensemble: &ensemble };
            converge_te(&source, window.t0, window.t_end, window.s, window.r, &schedule)?
        }
        (_, TeMode::Exact) => {
            return Err(CliError::config(
                "exact mode is available for the lagged-poisson model only",
            ))
        }
        (_, TeMode::Plugin) => {
            require_paths(n_paths)?;
            let dt_max = schedule.dt_values()[0];
            let grid = CombGrid::new(window.t0, window.t_end, window.s, window.r, dt_max)?;
            let ensemble = registry_ensemble(model, &grid, window, n_paths, seed)?;
            let source = PluginSource { ensemble: &ensemble };
            converge_te(&source, window.t0, window.t_end, window.s, window.r, &schedule)?
        }
    };
    let mut body = String::from("dt,te_sum,stderr,bound,fraction_in_bound\n");
    for row in &report.rows {
        let te = row.te_sum.map(fmt_f64).unwrap_or_default();
        let bound = row.bound_value.map(fmt_f64).unwrap_or_default();
        let frac = row.bound_fraction.map(fmt_f64).unwrap_or_default();
        body.push_str(&format!(
            "{},{te},{},{bound},{frac}\n",
            fmt_f64(row.dt),
            fmt_f64(row.stderr)
        ));
    }
    let json = serde_json::to_value(&report).map_err(|e| CliError::config(e.to_string()))?;
    Ok(Artifact {
        body,
        json,
        summary: format!(
            "{} rows, limit estimate {}",
            report.rows.len(),
            report.limit_estimate.unwrap_or(f64::NAN)
        ),
    })
}
