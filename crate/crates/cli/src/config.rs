//! Run configuration: one JSON document per invocation, one schema per
//! subcommand, validated before any computation.

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Plain simulation window.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

/// Grid window with history lengths.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWindow {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub s: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: String,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeMode {
    Exact,
    Plugin,
}

/// The per-command configuration schema.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase", deny_unknown_fields)]
pub enum RunConfig {
    /// Simulate paths (or pairs) of a named model.
    Simulate {
        model: ModelSpec,
        window: TimeWindow,
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
    /// Grid transfer entropy of the lagged-Poisson model or a registry
    /// pair model, exactly or by plug-in estimation.
    Dte {
        model: ModelSpec,
        window: GridWindow,
        dt: f64,
        mode: TeMode,
        #[serde(default)]
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
    /// Lagged-Poisson schedule table with the per-step bound and the
    /// Monte Carlo pathwise mean.
    Ppp {
        model: ModelSpec,
        window: GridWindow,
        schedule: Vec<f64>,
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
    /// Monte Carlo expected pathwise transfer entropy of a registry model.
    Girsanov {
        model: ModelSpec,
        window: TimeWindow,
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
    /// Finite-difference TE rate at a time point.
    Rate {
        model: ModelSpec,
        t: f64,
        windows: Vec<f64>,
        /// inner grid step for the lagged-Poisson surrogate
        #[serde(default)]
        dt: Option<f64>,
        /// grid history lengths for the surrogate
        #[serde(default)]
        s: Option<f64>,
        #[serde(default)]
        r: Option<f64>,
        #[serde(default)]
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
    /// TE sums down a dt schedule with limit extrapolation.
    Converge {
        model: ModelSpec,
        window: GridWindow,
        schedule: Vec<f64>,
        mode: TeMode,
        #[serde(default)]
        n_paths: usize,
        seed: u64,
        output: Option<OutputSpec>,
    },
}

impl RunConfig {
    pub fn output(&self) -> &Option<OutputSpec> {
        match self {
            RunConfig::Simulate { output, .. }
            | RunConfig::Dte { output, .. }
            | RunConfig::Ppp { output, .. }
            | RunConfig::Girsanov { output, .. }
            | RunConfig::Rate { output, .. }
            | RunConfig::Converge { output, .. } => output,
        }
    }

    pub fn seed_mut(&mut self) -> &mut u64 {
        match self {
            RunConfig::Simulate { seed, .. }
            | RunConfig::Dte { seed, .. }
            | RunConfig::Ppp { seed, .. }
            | RunConfig::Girsanov { seed, .. }
            | RunConfig::Rate { seed, .. }
            | RunConfig::Converge { seed, .. } => seed,
        }
    }
}
