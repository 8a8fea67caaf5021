//! Command-line arguments. Every flag is optional and, when given, overrides
//! the value from `--config` (or the built-in default).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spurbench_core::catalog::{Split, Variant};
use spurbench_core::embeddings::ContractionParams;
use spurbench_core::episodes::Mode;
use spurbench_core::eval::Aggregate;
use spurbench_core::heads::HeadKind;

use crate::audio::SampleEncoding;
use crate::commands;
use crate::config::*;
use crate::parallel::Parallel;
use crate::reports::write_json;

#[derive(Debug, Parser)]
#[command(name = "spurbench", version, about = "Background-correlation benchmark synthesis and few-shot evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads; 0 means one per logical core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Load settings from a run.json written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, short, global = true, default_value = "spurbench-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mix foreground/background WAV pairs at a fixed loudness margin.
    Mix(MixArgs),
    /// Sample episodes and write episode manifests.
    Episodes(EpisodesArgs),
    /// Evaluate heads on episodes and report accuracy and the IID-OOD gap.
    Eval(EvalArgs),
    /// Evaluate every head on every embedding set.
    Swap(SwapArgs),
    /// Magnitude/direction statistics and distribution distances.
    Geometry(GeometryArgs),
    /// Write a synthetic embedding set and its clip pool.
    Synth(SynthArgs),
    /// Gap as a function of background weight.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Mix(_) => "mix",
            Command::Episodes(_) => "episodes",
            Command::Eval(_) => "eval",
            Command::Swap(_) => "swap",
            Command::Geometry(_) => "geometry",
            Command::Synth(_) => "synth",
            Command::Sweep(_) => "sweep",
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

#[derive(Debug, Args, Default)]
pub struct CatalogArgs {
    /// Pairing table file (`class -> bg, bg, bg, bg` per line).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Bundled table: standard or hard.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Class split to draw from: train, val or test.
    #[arg(long)]
    pub split: Option<Split>,
    /// Use a seeded 70/10/20 split instead of the canonical one.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Read the class split from a TSV file.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
}

impl CatalogArgs {
    fn apply(self, c: &mut CatalogConfig) {
        set_opt(&mut c.table, self.table);
        set(&mut c.variant, self.variant);
        set(&mut c.split, self.split);
        set_opt(&mut c.split_seed, self.split_seed);
        set_opt(&mut c.split_file, self.split_file);
    }
}

#[derive(Debug, Args, Default)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    /// Queries per class.
    #[arg(long)]
    pub n_query: Option<usize>,
    /// Comma-separated: iid, ood, hard-ood, clean-query.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<Mode>,
    /// Episodes per mode and seed.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// OOD only: one background shared by the whole query batch.
    #[arg(long)]
    pub shared_query_background: bool,
}

impl EpisodeArgs {
    fn apply(self, c: &mut EpisodeConfig) {
        set(&mut c.n_way, self.n_way);
        set(&mut c.k_shot, self.k_shot);
        set(&mut c.n_query, self.n_query);
        set_vec(&mut c.modes, self.mode);
        set(&mut c.episodes, self.episodes);
        c.shared_query_background |= self.shared_query_background;
    }
}

#[derive(Debug, Args, Default)]
pub struct GeneratorArgs {
    /// Embedding dimension of the synthetic generator.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Background direction weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Per-coordinate direction noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Half-width of the per-background magnitude multipliers.
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub clean_mag: Option<f64>,
    #[arg(long)]
    pub mixed_mag: Option<f64>,
    /// Standard deviation of both magnitude laws.
    #[arg(long)]
    pub mag_std: Option<f64>,
    /// Local descriptors per clip (needed by dn4).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Synthetic clips per (class, background) cell.
    #[arg(long)]
    pub per_cell: Option<usize>,
}

impl GeneratorArgs {
    fn apply(self, g: &mut ContractionParams, per_cell: Option<&mut usize>) {
        set(&mut g.dim, self.dim);
        set(&mut g.bg_weight, self.beta);
        set(&mut g.angular_noise, self.noise);
        set(&mut g.bg_mag_spread, self.spread);
        set(&mut g.clean_mag_mean, self.clean_mag);
        set(&mut g.mixed_mag_mean, self.mixed_mag);
        set(&mut g.clean_mag_std, self.mag_std);
        set(&mut g.mixed_mag_std, self.mag_std);
        set(&mut g.frames_per_clip, self.frames);
        if let Some(p) = per_cell {
            set(p, self.per_cell);
        }
    }
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// TSV with columns fg_path, bg_path, fg, bg.
    #[arg(long, conflicts_with_all = ["fg", "bg"])]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires = "bg")]
    pub fg: Option<PathBuf>,
    #[arg(long, requires = "fg")]
    pub bg: Option<PathBuf>,
    #[arg(long)]
    pub fg_class: Option<String>,
    #[arg(long)]
    pub bg_class: Option<String>,
    /// Background strength multiplier.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Loudness margin of the background below the foreground, in LU.
    #[arg(long)]
    pub gamma_db: Option<f64>,
    /// Output sample rate in Hz.
    #[arg(long)]
    pub rate: Option<u32>,
    /// Output duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Crop long inputs at a seeded random offset instead of the start.
    #[arg(long)]
    pub random_crop: bool,
    #[arg(long, value_enum)]
    pub encoding: Option<SampleEncoding>,
}

impl MixArgs {
    pub fn apply(self, c: &mut MixConfig) {
        set_opt(&mut c.seed, self.seed);
        if self.fg.is_some() || self.pairs.is_some() {
            c.pairs = self.pairs;
            c.fg = self.fg;
            c.bg = self.bg;
        }
        set(&mut c.fg_class, self.fg_class);
        set(&mut c.bg_class, self.bg_class);
        set(&mut c.params.alpha, self.alpha);
        set(&mut c.params.gamma_db, self.gamma_db);
        set(&mut c.params.target_rate, self.rate);
        set(&mut c.params.duration_s, self.duration);
        c.random_crop |= self.random_crop;
        set(&mut c.encoding, self.encoding);
    }
}

#[derive(Debug, Args)]
pub struct EpisodesArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Clip pool manifest (clip_ref, fg, bg).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Synthetic clips per (class, background) cell when no pool is given.
    #[arg(long)]
    pub per_cell: Option<usize>,
}

impl EpisodesArgs {
    pub fn apply(self, c: &mut EpisodesConfig) {
        set_opt(&mut c.seed, self.seed);
        self.catalog.apply(&mut c.catalog);
        self.episode.apply(&mut c.episode);
        set_opt(&mut c.pool, self.pool);
        set(&mut c.per_cell, self.per_cell);
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Several episode seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// How to combine several seeds: episodes or seeds.
    #[arg(long)]
    pub aggregate: Option<Aggregate>,
    /// Comma-separated head names with default hyperparameters.
    #[arg(long, value_delimiter = ',')]
    pub head: Vec<HeadKind>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Embedding manifest; synthetic embeddings when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Evaluate these episodes instead of sampling.
    #[arg(long)]
    pub episodes_file: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl EvalArgs {
    pub fn apply(self, c: &mut EvalConfig) {
        set_opt(&mut c.seed, self.seed);
        set_vec(&mut c.seeds, self.seeds);
        set(&mut c.aggregate, self.aggregate);
        set_vec(&mut c.heads, self.head.iter().map(|k| k.default_config()).collect());
        self.catalog.apply(&mut c.catalog);
        self.episode.apply(&mut c.episode);
        set_opt(&mut c.embeddings, self.embeddings);
        set_opt(&mut c.pool, self.pool);
        set_opt(&mut c.episodes_file, self.episodes_file);
        self.generator.apply(&mut c.generator, Some(&mut c.per_cell));
    }
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub head: Vec<HeadKind>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Embedding manifests, one matrix column each (repeatable).
    #[arg(long)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Synthetic columns: one embedding set per background weight.
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl SwapArgs {
    pub fn apply(self, c: &mut SwapConfig) {
        set_opt(&mut c.seed, self.seed);
        set_vec(&mut c.heads, self.head.iter().map(|k| k.default_config()).collect());
        self.catalog.apply(&mut c.catalog);
        self.episode.apply(&mut c.episode);
        set_vec(&mut c.embeddings, self.embeddings);
        set_opt(&mut c.pool, self.pool);
        set_vec(&mut c.betas, self.betas);
        self.generator.apply(&mut c.generator, Some(&mut c.per_cell));
    }
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[arg(long, requires = "pool")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Second embedding manifest compared with the first as a whole.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Synthetic clips per class and condition.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub mmd_max: Option<usize>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl GeometryArgs {
    pub fn apply(self, c: &mut GeometryConfig) {
        set_opt(&mut c.seed, self.seed);
        self.catalog.apply(&mut c.catalog);
        set_opt(&mut c.embeddings, self.embeddings);
        set_opt(&mut c.pool, self.pool);
        set_opt(&mut c.reference, self.reference);
        set(&mut c.n, self.n);
        set_opt(&mut c.bandwidth, self.bandwidth);
        set(&mut c.mmd_max, self.mmd_max);
        self.generator.apply(&mut c.generator, None);
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Every table class instead of one split.
    #[arg(long)]
    pub all_classes: bool,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl SynthArgs {
    pub fn apply(self, c: &mut SynthConfig) {
        set_opt(&mut c.seed, self.seed);
        self.catalog.apply(&mut c.catalog);
        c.all_classes |= self.all_classes;
        self.generator.apply(&mut c.generator, Some(&mut c.per_cell));
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Background weights, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub strengths: Vec<f64>,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl SweepArgs {
    pub fn apply(self, c: &mut SweepConfig) {
        set_opt(&mut c.seed, self.seed);
        set(&mut c.head, self.head.map(|k| k.default_config()));
        set_vec(&mut c.strengths, self.strengths);
        self.catalog.apply(&mut c.catalog);
        self.episode.apply(&mut c.episode);
        self.generator.apply(&mut c.generator, Some(&mut c.per_cell));
    }
}

/// A per-command configuration with a run seed.
trait Seeded: Default + serde::Serialize + serde::de::DeserializeOwned {
    fn seed_mut(&mut self) -> &mut Option<u64>;
}

macro_rules! seeded {
    ($($t:ty),*) => {$(
        impl Seeded for $t {
            fn seed_mut(&mut self) -> &mut Option<u64> {
                &mut self.seed
            }
        }
    )*};
}

seeded!(MixConfig, EpisodesConfig, EvalConfig, SwapConfig, GeometryConfig, SynthConfig, SweepConfig);

/// Config file (or defaults), then flags, then the seed. The result is
/// written to `run.json` before anything else happens.
fn prepare<T: Seeded>(config: Option<&Path>, out: &Path, command: &str, apply: impl FnOnce(&mut T)) -> Result<(T, u64)> {
    let mut c = match config {
        Some(p) => load(p, command)?,
        None => T::default(),
    };
    let file_seed = *c.seed_mut();
    apply(&mut c);
    let flag_seed = (*c.seed_mut() != file_seed).then_some(*c.seed_mut()).flatten();
    let seed = resolve_seed(flag_seed, file_seed)?;
    *c.seed_mut() = Some(seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("run.json"), &RunFile { command: command.to_string(), config: &c })?;
    Ok((c, seed))
}

pub fn run(cli: Cli) -> Result<()> {
    let par = Parallel::new(cli.jobs)?;
    let name = cli.command.name();
    let (config, out) = (cli.config.as_deref(), cli.out.as_path());
    match cli.command {
        Command::Mix(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::mix(&c, s, out)
        }
        Command::Episodes(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::episodes(&c, s, &par, out)
        }
        Command::Eval(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::eval(&c, s, &par, out)
        }
        Command::Swap(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::swap(&c, s, &par, out)
        }
        Command::Geometry(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            par.install(|| commands::geometry(&c, s, out))
        }
        Command::Synth(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::synth(&c, s, out)
        }
        Command::Sweep(a) => {
            let (c, s) = prepare(config, out, name, |c| a.apply(c))?;
            commands::sweep(&c, s, &par, out).map(|_| ())
        }
    }
}

/// Parses arguments, runs, and maps failures to exit codes: 2 for usage
/// errors, 1 for everything else.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
