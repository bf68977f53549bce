//! JSON experiment configuration.
//!
//! Every struct rejects unknown keys, and errors carry the JSON path of the
//! offending field. A manifest written by a previous run is also accepted: its
//! `resolved_config` member is used as the configuration.

use std::path::{Path, PathBuf};

use fairgame_core::rng::derive_seed;
use fairgame_core::{
    noisy_observer_from_table, BoxUniform, BundleSource, DataSource, DirectObservationModel, FeatureTable, FisherMode,
    Gaussian, LinearGaussianModel, MixtureLatentSource, Prior, Sampling, SyntheticSource, TrueParameter,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Synthetic,
    Fairshare,
    Valuate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Synthetic => "synthetic",
            ExperimentKind::Fairshare => "fairshare",
            ExperimentKind::Valuate => "valuate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub prior: PriorSpec,
    /// True parameter for simulated players (`direct`, `linear`, `mixture`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    pub players: Vec<PlayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub fairshare: FairshareSection,
    #[serde(default)]
    pub valuate: ValuateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// `N(mean, variance · I)`.
    Normal {
        mean: Vec<f64>,
        #[serde(default = "one")]
        variance: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingSpec {
    Iid,
    Leverage,
}

impl From<SamplingSpec> for Sampling {
    fn from(s: SamplingSpec) -> Self {
        match s {
            SamplingSpec::Iid => Sampling::Iid,
            SamplingSpec::Leverage => Sampling::Leverage,
        }
    }
}

/// Where a feature table comes from: a CSV file (relative paths resolve
/// against the config file) or a seeded synthetic regression table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TableSpec {
    Csv(PathBuf),
    Synthetic { rows: usize, beta: Vec<f64>, noise_sd: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlayerSpec {
    /// `y ~ N(θ, variance · I)`.
    Direct { variance: f64 },
    /// `y = aᵀθ + ε` with standard-normal design rows.
    Linear {
        noise_sd: f64,
        #[serde(default = "yes")]
        noise_known: bool,
    },
    /// Labelled codes from a multi-mode mixture; θ stacks the mode means.
    Mixture {
        latent_dim: usize,
        mode_probs: Vec<f64>,
        spread: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_size: Option<usize>,
    },
    /// Least-squares bundles from a pool of table rows.
    Bundle {
        table: TableSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_size: Option<usize>,
        subset_size: usize,
        sampling: SamplingSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
    /// Noisy draws around a least-squares fit on a masked, imputed subset of a table.
    NoisyObserver {
        table: TableSpec,
        ratio: f64,
        nan_fraction: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub m_grid: Vec<usize>,
    pub trials: usize,
    pub mc_samples: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { m_grid: (4..=12).map(|p| 1usize << p).collect(), trials: 10, mc_samples: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FisherSpec {
    #[default]
    Sampled,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairshareSection {
    pub iterations: usize,
    /// Defaults to `k + 4` for every player.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_counts: Option<Vec<usize>>,
    pub base_rate: usize,
    pub min_rate: usize,
    pub max_rate: usize,
    pub burn_in: usize,
    pub delta_threshold: f64,
    pub window: usize,
    pub fisher: FisherSpec,
    pub mc_samples: usize,
}

impl Default for FairshareSection {
    fn default() -> Self {
        Self {
            iterations: 35,
            initial_counts: None,
            base_rate: 10,
            min_rate: 1,
            max_rate: 1000,
            burn_in: 5,
            delta_threshold: 0.1,
            window: 5,
            fisher: FisherSpec::Sampled,
            mc_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConceptSpec {
    Shapley,
    Banzhaf,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValuateSection {
    /// Data points per player; defaults to 100 each.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    pub concept: ConceptSpec,
    pub mc_samples: usize,
    /// Permutations for Monte-Carlo Shapley when the game is too large to enumerate.
    pub permutations: usize,
}

impl Default for ValuateSection {
    fn default() -> Self {
        Self { counts: None, concept: ConceptSpec::Both, mc_samples: 20_000, permutations: 20_000 }
    }
}

/// Parses a config (or a previous run's manifest) with path-annotated errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if let Some(resolved) = value.get_mut("resolved_config") {
        value = resolved.take();
    }
    serde_path_to_error::deserialize(value).map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))
}

/// Reads a config file; relative table paths are resolved against its directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_config(&text)?, base))
}

/// The three-player synthetic game: a unit-noise linear player, a direct
/// observer with variance 2.5 and a linear player with unknown noise 1.1,
/// all estimating `θ* = (1, −1, 0.5, 2)` under a standard normal prior.
pub fn default_synthetic(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Synthetic,
        seed,
        prior: PriorSpec::Normal { mean: vec![0.0; 4], variance: 1.0 },
        theta: Some(vec![1.0, -1.0, 0.5, 2.0]),
        players: vec![
            PlayerSpec::Linear { noise_sd: 1.0, noise_known: true },
            PlayerSpec::Direct { variance: 2.5 },
            PlayerSpec::Linear { noise_sd: 1.1, noise_known: false },
        ],
        output: None,
        synthetic: SyntheticSection::default(),
        fairshare: FairshareSection::default(),
        valuate: ValuateSection::default(),
    }
}

/// A validated config with feature tables loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub prior: Prior,
    pub theta: Option<TrueParameter>,
    tables: Vec<Option<FeatureTable>>,
    /// `(path as written, bytes)` of every file input.
    pub inputs: Vec<(String, Vec<u8>)>,
}

fn config_err(what: impl std::fmt::Display) -> CliError {
    CliError::Config(what.to_string())
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        match &self.prior {
            PriorSpec::Normal { mean, .. } => mean.len(),
            PriorSpec::Box { lower, .. } => lower.len(),
        }
    }

    pub fn resolve(self, base_dir: &Path) -> Result<Resolved> {
        let k = self.dim();
        if k == 0 {
            return Err(config_err("prior: dimension must be at least 1"));
        }
        if self.players.is_empty() {
            return Err(config_err("players: at least one player is required"));
        }
        let prior = match &self.prior {
            PriorSpec::Normal { mean, variance } => {
                let cov = DMatrix::identity(k, k) * *variance;
                Prior::Normal(
                    Gaussian::new(DVector::from_column_slice(mean), cov)
                        .map_err(|e| config_err(format!("prior: {e}")))?,
                )
            }
            PriorSpec::Box { lower, upper } => {
                if upper.len() != k {
                    return Err(config_err(format!("prior.upper: expected {k} entries, found {}", upper.len())));
                }
                let b = BoxUniform::new(DVector::from_column_slice(lower), DVector::from_column_slice(upper));
                Prior::BoxUniform(b.map_err(|e| config_err(format!("prior: {e}")))?)
            }
        };
        let theta = match &self.theta {
            Some(t) if t.len() != k => {
                return Err(config_err(format!("theta: expected {k} entries, found {}", t.len())))
            }
            Some(t) => Some(TrueParameter::from_slice(t).map_err(|e| config_err(format!("theta: {e}")))?),
            None => None,
        };
        let mut inputs = Vec::new();
        let mut tables = Vec::with_capacity(self.players.len());
        for (i, p) in self.players.iter().enumerate() {
            let table = match p {
                PlayerSpec::Direct { .. } | PlayerSpec::Linear { .. } | PlayerSpec::Mixture { .. } => {
                    if theta.is_none() {
                        return Err(config_err(format!("players[{i}]: simulated players need a top-level theta")));
                    }
                    None
                }
                PlayerSpec::Bundle { table, .. } | PlayerSpec::NoisyObserver { table, .. } => {
                    Some(load_table(table, base_dir, &mut inputs).map_err(|e| match e {
                        CliError::Config(m) => config_err(format!("players[{i}].table: {m}")),
                        other => other,
                    })?)
                }
            };
            if let Some(t) = &table {
                if t.dim() != k {
                    return Err(config_err(format!(
                        "players[{i}].table: {} feature columns but the prior has dimension {k}",
                        t.dim()
                    )));
                }
            }
            tables.push(table);
        }
        Ok(Resolved { config: self, prior, theta, tables, inputs })
    }
}

fn load_table(spec: &TableSpec, base_dir: &Path, inputs: &mut Vec<(String, Vec<u8>)>) -> Result<FeatureTable> {
    match spec {
        TableSpec::Csv(rel) => {
            let path = base_dir.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let table = FeatureTable::read_csv(bytes.as_slice())
                .map_err(|e| CliError::Format { path: path.clone(), message: e.to_string() })?;
            let key = rel.display().to_string();
            if !inputs.iter().any(|(p, _)| *p == key) {
                inputs.push((key, bytes));
            }
            Ok(table)
        }
        TableSpec::Synthetic { rows, beta, noise_sd, seed } => {
            FeatureTable::synthetic(*rows, &DVector::from_column_slice(beta), *noise_sd, *seed).map_err(config_err)
        }
    }
}

impl Resolved {
    pub fn players(&self) -> usize {
        self.config.players.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    /// Builds player `i`'s data source with its own stream of `seed`.
    pub fn source(&self, i: usize, seed: u64) -> Result<Box<dyn DataSource>> {
        let player_seed = derive_seed(seed, &[i as u64]);
        let k = self.dim();
        let wrap = |e: fairgame_core::Error| config_err(format!("players[{i}]: {e}"));
        let theta = || self.theta.clone().expect("checked in resolve");
        let source: Box<dyn DataSource> = match &self.config.players[i] {
            PlayerSpec::Direct { variance } => {
                let model = DirectObservationModel::isotropic(k, *variance).map_err(wrap)?;
                Box::new(SyntheticSource::new(model.into(), theta(), player_seed).map_err(wrap)?)
            }
            PlayerSpec::Linear { noise_sd, noise_known } => {
                let model = LinearGaussianModel::standard(k, *noise_sd, *noise_known).map_err(wrap)?;
                Box::new(SyntheticSource::new(model.into(), theta(), player_seed).map_err(wrap)?)
            }
            PlayerSpec::Mixture { latent_dim, mode_probs, spread, pool_size } => Box::new(
                MixtureLatentSource::new(theta(), *latent_dim, mode_probs.clone(), *spread, *pool_size, player_seed)
                    .map_err(wrap)?,
            ),
            PlayerSpec::Bundle { pool_size, subset_size, sampling, budget, .. } => {
                let table = self.tables[i].as_ref().expect("loaded in resolve");
                let pool = pool_size.unwrap_or(table.rows());
                Box::new(
                    BundleSource::new(table, pool, *subset_size, (*sampling).into(), player_seed, *budget)
                        .map_err(wrap)?,
                )
            }
            PlayerSpec::NoisyObserver { ratio, nan_fraction, sigma, budget, .. } => {
                let table = self.tables[i].as_ref().expect("loaded in resolve");
                let src = noisy_observer_from_table(table, *ratio, *nan_fraction, *sigma, player_seed).map_err(wrap)?;
                Box::new(match budget {
                    Some(b) => src.with_budget(*b),
                    None => src,
                })
            }
        };
        Ok(source)
    }

    pub fn fisher_mode(&self) -> FisherMode {
        match self.config.fairshare.fisher {
            FisherSpec::Sampled => FisherMode::Sampled,
            FisherSpec::Analytic => FisherMode::Analytic,
        }
    }
}
