//! Command arguments and config-file merging.
//!
//! Every parameter is optional on the command line. A TOML file given with
//! `--config` supplies values for the command's own table (`[simulate]`,
//! `[couple]`, ...) or, when that table is absent, for the top level. Flags
//! override file values; built-in defaults fill whatever is left.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

pub trait Merge {
    fn config_path(&self) -> Option<&Path>;
    /// Fills unset fields from `file`.
    fn merge_from(&mut self, file: Self);
}

macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn config_path(&self) -> Option<&Path> {
                self.config.as_deref()
            }
            fn merge_from(&mut self, file: Self) {
                $(if self.$field.is_none() {
                    self.$field = file.$field;
                })*
            }
        }
    };
}

/// Flags merged over the `section` table of the config file, if any.
pub fn resolve<T: Merge + DeserializeOwned>(mut flags: T, section: &str) -> Result<T, CliError> {
    let Some(path) = flags.config_path().map(Path::to_path_buf) else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let body = match table.remove(section) {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(CliError::Config(format!("`{section}` in {} is not a table", path.display()))),
        None => table,
    };
    let file: T = toml::Value::Table(body)
        .try_into()
        .map_err(|e| CliError::Config(format!("{} [{section}]: {e}", path.display())))?;
    flags.merge_from(file);
    Ok(flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Combinatorial,
    Graph,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Empty,
    /// Every server holds one type-II job.
    TypeIi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    /// Minimum regular degree per `k`.
    Degree,
    /// Smallest `d1` with a stable queueing fixed point.
    D1star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Ra,
    Mjsq,
    Jsq,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// TOML config file
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Number of servers (combinatorial model)
    #[arg(long)]
    pub n: Option<usize>,
    /// Selection size (combinatorial model)
    #[arg(long)]
    pub d1: Option<usize>,
    /// Per-server arrival rate (combinatorial and graph models)
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Graph generator or edge-list file (graph model)
    #[arg(long)]
    pub graph: Option<String>,
    /// Family spec (general model)
    #[arg(long)]
    pub family: Option<String>,
    /// Per-selection rates (general model)
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long)]
    pub i_max: Option<usize>,
    #[arg(long, value_enum)]
    pub initial: Option<InitialKind>,
    /// Independent replications; seeds are derived from `--seed`
    #[arg(long)]
    pub replications: Option<u64>,
    /// Directory for trajectory CSV and summary JSON
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

merge_fields!(SimulateArgs {
    model, n, d1, lambda, mu1, mu2, graph, family, rates, horizon, seed, sample_dt, i_max, initial,
    replications, out_dir,
});

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d1: Option<u32>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Threshold of the idle indicator
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long)]
    pub i_max: Option<usize>,
    /// `empty`, `queueing`, or exact fractions `q00,q01;q10,q11;...`
    #[arg(long)]
    pub initial: Option<String>,
    /// Trajectory CSV path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(FluidArgs { d1, lambda, mu1, mu2, eps0, horizon, dt, sample_dt, i_max, initial, out });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixpointArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d1: Option<u32>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub i_max: Option<usize>,
    /// Emit a metrics CSV over these arrival rates instead of the report
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(FixpointArgs { d1, lambda, mu1, mu2, i_max, sweep, out });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub which: Option<TableKind>,
    /// Number of servers (degree table)
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub mu2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(TablesArgs { which, n, k, mu1, mu2, lambdas, out });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda0Args {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Server count for explicit selections
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(Lambda0Args { family, rates, n, out });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Reference system
    #[arg(long = "ref", value_enum)]
    #[serde(rename = "ref")]
    pub reference: Option<RefKind>,
    /// Number of seeds
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Coupled events per seed
    #[arg(long)]
    pub events: Option<u64>,
    /// Base seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Family spec (ra)
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Graph generator or edge-list file (mjsq)
    #[arg(long)]
    pub graph: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of servers (jsq)
    #[arg(long)]
    pub n: Option<usize>,
    /// Graph degree (jsq)
    #[arg(long)]
    pub d: Option<usize>,
    /// Per-server arrival rate (mjsq, jsq)
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    /// Event log CSV of the first seed
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Per-seed JSON reports
    #[arg(long)]
    pub report: Option<PathBuf>,
}

merge_fields!(CoupleArgs {
    reference, seeds, events, seed, family, rates, graph, k, n, d, lambda, mu1, mu2, log, report,
});
