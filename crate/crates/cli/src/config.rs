use std::path::Path;

use clap::{Args, ValueEnum};
use rewardtree_core::env::OracleMode;
use rewardtree_core::model::{check_config, RunConfig, ThresholdMode};
use rewardtree_core::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Hard,
    Thurstone,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ThresholdArg {
    Midpoints,
    Observed,
}

/// Per-field overrides of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub f_l: Option<usize>,
    #[arg(long)]
    pub f_u: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_post_fix: Option<usize>,
    #[arg(long)]
    pub pbrl_episodes: Option<usize>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleArg>,
    #[arg(long, value_enum)]
    pub thresholds: Option<ThresholdArg>,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(k_max, n_max, f_l, f_u, m_max, epsilon, lambda, pbrl_episodes);
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        if self.n_post_fix.is_some() {
            c.n_post_fix = self.n_post_fix;
        }
        if let Some(o) = self.oracle {
            c.oracle.mode = match o {
                OracleArg::Hard => OracleMode::Hard,
                OracleArg::Thurstone => OracleMode::Thurstone,
            };
        }
        if let Some(t) = self.thresholds {
            c.thresholds = match t {
                ThresholdArg::Midpoints => ThresholdMode::Midpoints,
                ThresholdArg::Observed => ThresholdMode::Observed,
            };
        }
    }
}

/// TOML file with the same fields as `RunConfig`; missing fields take defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig, Error> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn effective(path: Option<&Path>, seed: Option<u64>, overrides: &Overrides) -> Result<RunConfig, Error> {
    let mut config = load(path)?;
    overrides.apply(&mut config);
    if let Some(seed) = seed {
        config.seed = seed;
    }
    check_config(&config)?;
    Ok(config)
}
