use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "TPA_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "tpa-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    #[value(name = "expinterval")]
    ExpInterval,
    Ising,
    #[value(name = "l1ball")]
    L1Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Run,
    Ras,
    Schedule,
    Omni,
    Evidence,
    Diagnose,
}

/// Every experiment knob. Read from the TOML file, then overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Optional in the file; must match the subcommand when present.
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub mode: Option<Mode>,

    #[arg(long, value_enum)]
    pub family: Option<FamilyKind>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs.
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Confidence level complement for intervals.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Step budget per run.
    #[arg(long)]
    pub cap: Option<usize>,

    /// expinterval: log ratio between shell and center.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// expinterval: shell parameter (center is shell - lambda).
    #[arg(long)]
    pub shell: Option<f64>,

    /// ising: lattice width.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// ising: periodic boundary.
    #[arg(long)]
    pub wrap: Option<bool>,
    /// ising: inverse temperature of the shell.
    #[arg(long)]
    pub beta: Option<f64>,
    /// ising: whitespace-separated edge list replacing the lattice.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub vertices: Option<usize>,

    /// l1ball: dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub shell_radius: Option<f64>,
    #[arg(long)]
    pub center_radius: Option<f64>,
    #[arg(long, value_enum)]
    pub norm: Option<NormKind>,
    /// l1ball: uniform draws for the center-mass estimate.
    #[arg(long)]
    pub center_samples: Option<u64>,

    /// omni: upper bound on the log ratio for the run planner.
    #[arg(long)]
    pub lambda_upper: Option<f64>,
    /// evidence: quadrature panel width.
    #[arg(long)]
    pub step: Option<f64>,
    /// evidence: upper end of the uniform prior on beta.
    #[arg(long)]
    pub b_max: Option<f64>,
    /// evidence: energy H of the observed configuration.
    #[arg(long, allow_hyphen_values = true)]
    pub observed_h: Option<f64>,

    /// diagnose: significance level of every test.
    #[arg(long)]
    pub significance: Option<f64>,
    /// diagnose: number of independent pools for the increment test.
    #[arg(long)]
    pub pools: Option<u64>,
    /// diagnose: window width in log measure for the increment test.
    #[arg(long)]
    pub window: Option<f64>,

    /// Worker threads; 0 or unset uses every core. Never affects output.
    #[arg(long)]
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:ident, $base:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Settings {
    /// Values present in `self` win over `base`.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(self, base;
            mode, family, seed, k, epsilon, delta, alpha, cap, lambda, shell, width, height, wrap,
            beta, edges, vertices, dim, shell_radius, center_radius, norm, center_samples,
            lambda_upper, step, b_max, observed_h, significance, pools, window, workers, output_dir,
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Settings, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("bad config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn require<T: Copy>(value: Option<T>, name: &str, mode: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Config(format!("{mode} mode requires `{name}`")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("a `seed` is required for reproducibility".into()))
    }

    pub fn family(&self) -> Result<FamilyKind, CliError> {
        self.family
            .ok_or_else(|| CliError::Config("a `family` (expinterval, ising, l1ball) is required".into()))
    }
}
