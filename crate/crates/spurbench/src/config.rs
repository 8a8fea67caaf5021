//! Resolved run configurations, one per subcommand.
//!
//! A configuration is what `run.json` records. Loading it back with
//! `--config` and running again reproduces the outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spurbench_core::catalog::{assign_splits, PairingTable, Split, SplitAssignment, SplitMode, Variant};
use spurbench_core::embeddings::ContractionParams;
use spurbench_core::episodes::{EpisodeSpec, Mode};
use spurbench_core::eval::Aggregate;
use spurbench_core::heads::{HeadConfig, HeadKind};
use spurbench_core::mixer::MixParams;

use crate::audio::SampleEncoding;
use crate::formats;

pub const SEED_ENV: &str = "SPURBENCH_SEED";

/// The on-disk form: `{"command": ..., "config": {...}}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunFile<T> {
    pub command: String,
    pub config: T,
}

pub fn load<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: RunFile<T> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.command != command {
        bail!("{} is a `{}` config, not `{command}`", path.display(), file.command);
    }
    Ok(file.config)
}

/// Flag, then config file, then `SPURBENCH_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| anyhow!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    /// Pairing table file; the bundled `variant` when absent.
    pub table: Option<PathBuf>,
    pub variant: Variant,
    pub split: Split,
    /// Seeded 70/10/20 split instead of the canonical one.
    pub split_seed: Option<u64>,
    pub split_file: Option<PathBuf>,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig { table: None, variant: Variant::Standard, split: Split::Test, split_seed: None, split_file: None }
    }
}

impl CatalogConfig {
    pub fn table(&self) -> Result<PairingTable> {
        match &self.table {
            Some(p) => formats::read_table(p),
            None => Ok(PairingTable::bundled(self.variant)),
        }
    }

    pub fn splits(&self, table: &PairingTable) -> Result<SplitAssignment> {
        if let Some(p) = &self.split_file {
            return formats::read_splits(p);
        }
        let mode = self.split_seed.map_or(SplitMode::Canonical, SplitMode::Seeded);
        Ok(assign_splits(table, mode)?)
    }

    pub fn classes(&self, table: &PairingTable) -> Result<BTreeSet<String>> {
        Ok(self.splits(table)?.get(self.split).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub modes: Vec<Mode>,
    pub episodes: usize,
    pub shared_query_background: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { n_way: 5, k_shot: 5, n_query: 10, modes: vec![Mode::Iid, Mode::Ood], episodes: 1000, shared_query_background: false }
    }
}

impl EpisodeConfig {
    pub fn spec(&self, mode: Mode, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            n_way: self.n_way,
            k_shot: self.k_shot,
            n_query: self.n_query,
            mode,
            seed,
            shared_query_background: self.shared_query_background && mode == Mode::Ood,
        }
    }
}

fn default_heads() -> Vec<HeadConfig> {
    vec![HeadConfig::Proto]
}

/// Every head that needs only global embeddings.
pub fn global_heads() -> Vec<HeadConfig> {
    HeadKind::ALL.iter().filter(|k| **k != HeadKind::Dn4).map(|k| k.default_config()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub seed: Option<u64>,
    /// TSV with columns `fg_path bg_path fg bg`.
    pub pairs: Option<PathBuf>,
    pub fg: Option<PathBuf>,
    pub bg: Option<PathBuf>,
    pub fg_class: String,
    pub bg_class: String,
    pub params: MixParams,
    pub random_crop: bool,
    pub encoding: SampleEncoding,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            seed: None,
            pairs: None,
            fg: None,
            bg: None,
            fg_class: "fg".into(),
            bg_class: "bg".into(),
            params: MixParams::default(),
            random_crop: false,
            encoding: SampleEncoding::Float32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodesConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogConfig,
    pub episode: EpisodeConfig,
    /// Clip pool manifest; a synthetic pool with `per_cell` clips per cell when absent.
    pub pool: Option<PathBuf>,
    pub per_cell: usize,
}

impl Default for EpisodesConfig {
    fn default() -> Self {
        EpisodesConfig { seed: None, catalog: Default::default(), episode: Default::default(), pool: None, per_cell: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: Option<u64>,
    /// Several episode seeds; the run seed alone when empty.
    pub seeds: Vec<u64>,
    pub aggregate: Aggregate,
    pub catalog: CatalogConfig,
    pub episode: EpisodeConfig,
    pub heads: Vec<HeadConfig>,
    /// Embedding manifest; synthetic embeddings from `generator` when absent.
    pub embeddings: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub episodes_file: Option<PathBuf>,
    pub generator: ContractionParams,
    pub per_cell: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: None,
            seeds: vec![],
            aggregate: Aggregate::Episodes,
            catalog: Default::default(),
            episode: Default::default(),
            heads: default_heads(),
            embeddings: None,
            pool: None,
            episodes_file: None,
            generator: ContractionParams::default(),
            per_cell: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogConfig,
    pub episode: EpisodeConfig,
    pub heads: Vec<HeadConfig>,
    /// Embedding manifests, one column each. When empty, synthetic sets are
    /// generated for each value in `betas`.
    pub embeddings: Vec<PathBuf>,
    pub pool: Option<PathBuf>,
    pub betas: Vec<f64>,
    pub generator: ContractionParams,
    pub per_cell: usize,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig {
            seed: None,
            catalog: Default::default(),
            episode: Default::default(),
            heads: global_heads(),
            embeddings: vec![],
            pool: None,
            betas: vec![0.0, 0.02, 0.1, 0.3],
            generator: ContractionParams::default(),
            per_cell: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogConfig,
    /// Embedding manifest plus a pool manifest naming each clip's class and
    /// background. Synthetic when absent.
    pub embeddings: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    /// Second embedding set to compare against the first as a whole.
    pub reference: Option<PathBuf>,
    /// Synthetic clips per class and condition.
    pub n: usize,
    /// RBF bandwidth; median heuristic when absent.
    pub bandwidth: Option<f64>,
    /// Largest set size fed to MMD; larger sets are subsampled by stride.
    pub mmd_max: usize,
    pub generator: ContractionParams,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            seed: None,
            catalog: Default::default(),
            embeddings: None,
            pool: None,
            reference: None,
            n: 500,
            bandwidth: None,
            mmd_max: 1000,
            generator: ContractionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogConfig,
    /// Generate for every table class rather than the selected split.
    pub all_classes: bool,
    pub generator: ContractionParams,
    pub per_cell: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: None, catalog: Default::default(), all_classes: false, generator: Default::default(), per_cell: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogConfig,
    /// The first non-IID entry of `modes` is the shifted condition.
    pub episode: EpisodeConfig,
    pub head: HeadConfig,
    pub strengths: Vec<f64>,
    pub generator: ContractionParams,
    pub per_cell: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: None,
            catalog: Default::default(),
            episode: Default::default(),
            head: HeadConfig::Proto,
            strengths: vec![0.0, 0.1, 0.2, 0.3],
            generator: Default::default(),
            per_cell: 20,
        }
    }
}
