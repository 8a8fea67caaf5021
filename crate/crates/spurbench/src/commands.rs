//! Subcommand implementations. Each takes a fully resolved configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spurbench_core::catalog::PairingTable;
use spurbench_core::embeddings::{ContractionModel, ContractionParams, EmbeddingSet, SyntheticBenchmark};
use spurbench_core::episodes::{audit, ClipPool, Item, Mode};
use spurbench_core::eval::{combine, gap_with_ci, head_swap_matrix, EpisodeBatch, EvalReport, Runner, SweepPoint, SweepSetup};
use spurbench_core::geometry::{clean_prototypes, contraction_report, mmd_rbf, Labeled};
use spurbench_core::mixer::{mix_pair_cropped, Crop};
use spurbench_core::rng::derive_seed;

use crate::audio::{read_wav, write_wav};
use crate::config::*;
use crate::formats;
use crate::parallel::Parallel;
use crate::reports::{self, GapRow};

// ---------------------------------------------------------------- mix

#[derive(Debug, Deserialize)]
struct PairRow {
    fg_path: PathBuf,
    bg_path: PathBuf,
    fg: String,
    bg: String,
}

#[derive(Debug, Serialize)]
struct MixtureRow {
    clip_ref: String,
    fg: String,
    bg: String,
    fg_path: String,
    bg_path: String,
    fg_lufs: f64,
    bg_lufs: f64,
    bg_gain: f64,
}

fn pairs(c: &MixConfig) -> Result<Vec<PairRow>> {
    match (&c.pairs, &c.fg, &c.bg) {
        (Some(p), _, _) => {
            let base = p.parent().unwrap_or(Path::new("."));
            let rows: Vec<PairRow> = formats::read_tsv(p)?;
            Ok(rows
                .into_iter()
                .map(|r| PairRow { fg_path: base.join(r.fg_path), bg_path: base.join(r.bg_path), ..r })
                .collect())
        }
        (None, Some(fg), Some(bg)) => Ok(vec![PairRow {
            fg_path: fg.clone(),
            bg_path: bg.clone(),
            fg: c.fg_class.clone(),
            bg: c.bg_class.clone(),
        }]),
        _ => bail!("mix needs --pairs or both --fg and --bg"),
    }
}

pub fn mix(c: &MixConfig, seed: u64, out: &Path) -> Result<()> {
    c.params.validate()?;
    let pairs = pairs(c)?;
    if pairs.is_empty() {
        bail!("no pairs to mix");
    }
    let dir = out.join("mixtures");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::with_capacity(pairs.len());
    let mut items = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let fg = read_wav(&p.fg_path)?;
        let bg = read_wav(&p.bg_path)?;
        let (fc, bc) = if c.random_crop {
            let i = i as u64;
            (Crop::Random(derive_seed(seed, 2 * i)), Crop::Random(derive_seed(seed, 2 * i + 1)))
        } else {
            (Crop::Start, Crop::Start)
        };
        let m = mix_pair_cropped(&fg, &bg, &c.params, fc, bc).with_context(|| format!("pair {i}"))?;
        let clip_ref = format!("mixtures/{i:05}.wav");
        write_wav(&out.join(&clip_ref), &m.waveform, c.encoding)?;
        items.push(Item { clip_ref: clip_ref.clone(), fg: p.fg.clone(), bg: Some(p.bg.clone()) });
        rows.push(MixtureRow {
            clip_ref,
            fg: p.fg.clone(),
            bg: p.bg.clone(),
            fg_path: p.fg_path.display().to_string(),
            bg_path: p.bg_path.display().to_string(),
            fg_lufs: m.fg_lufs,
            bg_lufs: m.bg_lufs,
            bg_gain: m.bg_gain,
        });
    }
    formats::write_tsv(&out.join("mixtures.tsv"), &rows)?;
    formats::write_pool(&out.join("pool.tsv"), &items)
}

// ---------------------------------------------------------------- episodes

#[derive(Debug, Serialize)]
struct AuditRow {
    mode: &'static str,
    episodes: usize,
    violations: usize,
    first: String,
}

pub fn episodes(c: &EpisodesConfig, seed: u64, par: &Parallel, out: &Path) -> Result<()> {
    let table = c.catalog.table()?;
    let splits = c.catalog.splits(&table)?;
    let classes = splits.get(c.catalog.split).clone();
    let pool = match &c.pool {
        Some(p) => formats::read_pool(p)?,
        None => {
            let pool = ClipPool::synthetic(&table, c.per_cell);
            formats::write_pool(&out.join("pool.tsv"), &pool.items().collect::<Vec<_>>())?;
            pool
        }
    };
    formats::write_splits(&out.join("splits.tsv"), &splits)?;
    let mut rows = Vec::new();
    for &mode in &c.episode.modes {
        let spec = c.episode.spec(mode, seed);
        let batch = par.sample(&table, &classes, &spec, &pool, c.episode.episodes)?;
        let bad: Vec<String> = batch
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(i, ep)| {
                audit(ep, &table, &spec.for_index(i as u64), Some(&classes)).into_iter().map(move |v| format!("episode {i}: {v}"))
            })
            .collect();
        formats::write_episodes(&out.join(format!("episodes-{}.tsv", mode.as_str())), &batch.episodes)?;
        rows.push(AuditRow {
            mode: mode.as_str(),
            episodes: batch.episodes.len(),
            violations: bad.len(),
            first: bad.first().cloned().unwrap_or_default(),
        });
    }
    reports::write_rows(&out.join("audit.csv"), &rows)?;
    if let Some(r) = rows.iter().find(|r| r.violations > 0) {
        bail!("{} episodes failed the audit: {}", r.mode, r.first);
    }
    Ok(())
}

// ---------------------------------------------------------------- shared setup

struct Setup {
    table: PairingTable,
    classes: BTreeSet<String>,
}

impl Setup {
    fn new(c: &CatalogConfig) -> Result<Self> {
        let table = c.table()?;
        let classes = c.classes(&table)?;
        Ok(Setup { table, classes })
    }

    fn synthetic(&self, mut params: ContractionParams, seed: u64, per_cell: usize) -> Result<SyntheticBenchmark> {
        params.seed = seed;
        Ok(SyntheticBenchmark::build(params, &self.table, &self.classes, per_cell)?)
    }
}

fn need_pool(pool: &Option<PathBuf>) -> Result<ClipPool> {
    match pool {
        Some(p) => formats::read_pool(p),
        None => bail!("--pool is required with --embeddings"),
    }
}

fn set_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

// ---------------------------------------------------------------- eval

#[derive(Serialize)]
struct EvalOutput<'a> {
    reports: &'a [EvalReport],
    gaps: &'a [GapRow],
}

fn gap_rows(reports: &[EvalReport]) -> Result<Vec<GapRow>> {
    let mut rows = Vec::new();
    for iid in reports.iter().filter(|r| r.mode == Mode::Iid) {
        for ood in reports.iter().filter(|r| r.mode != Mode::Iid && r.head == iid.head && r.embedding == iid.embedding) {
            let (delta, delta_ci) = gap_with_ci(iid, ood)?;
            rows.push(GapRow {
                head: iid.head.clone(),
                embedding: iid.embedding.clone(),
                ood_mode: ood.mode.as_str().into(),
                iid_acc: iid.mean,
                iid_ci: iid.ci,
                ood_acc: ood.mean,
                ood_ci: ood.ci,
                delta,
                delta_ci,
            });
        }
    }
    Ok(rows)
}

pub fn eval(c: &EvalConfig, seed: u64, par: &Parallel, out: &Path) -> Result<()> {
    if c.heads.is_empty() {
        bail!("no heads selected");
    }
    let setup = Setup::new(&c.catalog)?;
    let (emb, pool, name) = match &c.embeddings {
        Some(p) => {
            let pool = if c.episodes_file.is_some() { ClipPool::new() } else { need_pool(&c.pool)? };
            (formats::read_embeddings(p)?, pool, set_name(p))
        }
        None => {
            let b = setup.synthetic(c.generator, seed, c.per_cell)?;
            (b.embeddings, b.pool, "synthetic".to_string())
        }
    };
    let seeds = if c.seeds.is_empty() { vec![seed] } else { c.seeds.clone() };

    // (mode, per-seed batches)
    let mut batches: Vec<(Mode, Vec<EpisodeBatch>)> = Vec::new();
    if let Some(f) = &c.episodes_file {
        let mode = *c.episode.modes.first().unwrap_or(&Mode::Iid);
        let episodes = formats::read_episodes(f)?;
        batches.push((mode, vec![EpisodeBatch { spec: c.episode.spec(mode, seed), episodes }]));
    } else {
        for &mode in &c.episode.modes {
            let per_seed = seeds
                .iter()
                .map(|&s| par.sample(&setup.table, &setup.classes, &c.episode.spec(mode, s), &pool, c.episode.episodes))
                .collect::<Result<Vec<_>, _>>()?;
            batches.push((mode, per_seed));
        }
    }

    let mut all = Vec::new();
    for head in &c.heads {
        for (_, per_seed) in &batches {
            let runs = per_seed.iter().map(|b| par.run(b, head, &emb, &name)).collect::<Result<Vec<_>, _>>()?;
            all.push(combine(&runs, c.aggregate)?);
        }
    }
    let gaps = gap_rows(&all)?;
    reports::write_eval_csv(&out.join("report.csv"), &all)?;
    reports::write_trace_csv(&out.join("trace.csv"), &all)?;
    reports::write_rows(&out.join("gap.csv"), &gaps)?;
    reports::write_json(&out.join("report.json"), &EvalOutput { reports: &all, gaps: &gaps })
}

// ---------------------------------------------------------------- swap

#[derive(Serialize)]
struct MatrixOutput<'a> {
    mode: &'static str,
    sets: &'a [String],
    cells: Vec<Vec<EvalReport>>,
}

pub fn swap(c: &SwapConfig, seed: u64, par: &Parallel, out: &Path) -> Result<()> {
    if c.heads.is_empty() {
        bail!("no heads selected");
    }
    let setup = Setup::new(&c.catalog)?;
    let (sets, pool): (Vec<(String, EmbeddingSet)>, ClipPool) = if c.embeddings.is_empty() {
        if c.betas.is_empty() {
            bail!("swap needs --embeddings or --betas");
        }
        let mut pool = None;
        let mut sets = Vec::new();
        for &beta in &c.betas {
            let b = setup.synthetic(ContractionParams { bg_weight: beta, ..c.generator }, seed, c.per_cell)?;
            sets.push((format!("beta={beta}"), b.embeddings));
            pool.get_or_insert(b.pool);
        }
        (sets, pool.expect("at least one beta"))
    } else {
        let sets = c.embeddings.iter().map(|p| Ok((set_name(p), formats::read_embeddings(p)?))).collect::<Result<_>>()?;
        (sets, need_pool(&c.pool)?)
    };
    let names: Vec<String> = sets.iter().map(|(n, _)| n.clone()).collect();
    let refs: Vec<(&str, &EmbeddingSet)> = sets.iter().map(|(n, e)| (n.as_str(), e)).collect();
    let mut json = Vec::new();
    for &mode in &c.episode.modes {
        let batch = par.sample(&setup.table, &setup.classes, &c.episode.spec(mode, seed), &pool, c.episode.episodes)?;
        let cells = head_swap_matrix(par, &c.heads, &refs, &batch)?;
        let m = mode.as_str();
        reports::write_matrix_csv(&out.join(format!("matrix-{m}.csv")), &out.join(format!("matrix-{m}-long.csv")), &names, &cells)?;
        json.push(MatrixOutput { mode: m, sets: &names, cells });
    }
    reports::write_json(&out.join("matrix.json"), &json)
}

// ---------------------------------------------------------------- geometry

/// At most `max` elements, taken at an even stride.
fn stride_sample<T: Clone>(v: &[T], max: usize) -> Vec<T> {
    if v.len() <= max || max == 0 {
        return v.to_vec();
    }
    (0..max).map(|i| v[i * v.len() / max].clone()).collect()
}

#[derive(Serialize)]
struct GeometryOutput<'a> {
    contraction: Vec<(&'a str, &'a spurbench_core::geometry::GeometryReport)>,
    distribution: Vec<(&'a str, &'a spurbench_core::geometry::DistributionReport)>,
}

fn vectors(set: &[Labeled]) -> Vec<Vec<f64>> {
    set.iter().map(|(_, v)| v.clone()).collect()
}

fn synthetic_conditions(c: &GeometryConfig, setup: &Setup, seed: u64) -> Result<(Vec<Labeled>, Vec<Labeled>)> {
    use spurbench_core::embeddings::synth_condition;
    let model = ContractionModel::for_table(ContractionParams { seed, ..c.generator }, &setup.table)?;
    let mut clean = Vec::new();
    let mut mixed = Vec::new();
    for class in &setup.classes {
        let bgs = setup.table.backgrounds(class).with_context(|| format!("{class} is not in the table"))?;
        for v in synth_condition(&model, class, None, c.n, "clean")? {
            clean.push((class.clone(), v));
        }
        // n mixed clips per class, spread evenly over its backgrounds.
        let per_bg = c.n.div_ceil(bgs.len());
        let mut m: Vec<Labeled> = Vec::new();
        for i in 0..per_bg {
            for bg in bgs {
                if m.len() < c.n {
                    let v = synth_condition(&model, class, Some(bg), 1, &format!("mixed{i}"))?;
                    m.push((class.clone(), v.into_iter().next().expect("one vector")));
                }
            }
        }
        mixed.extend(m);
    }
    Ok((clean, mixed))
}

fn measured_conditions(emb: &EmbeddingSet, pool: &ClipPool, classes: &BTreeSet<String>) -> Result<(Vec<Labeled>, Vec<Labeled>)> {
    let mut clean = Vec::new();
    let mut mixed = Vec::new();
    for item in pool.items().filter(|i| classes.contains(&i.fg)) {
        let v = emb.global_f64(&item.clip_ref).with_context(|| item.clip_ref.clone())?;
        match item.bg {
            None => clean.push((item.fg, v)),
            Some(_) => mixed.push((item.fg, v)),
        }
    }
    Ok((clean, mixed))
}

pub fn geometry(c: &GeometryConfig, seed: u64, out: &Path) -> Result<()> {
    let setup = Setup::new(&c.catalog)?;
    let (clean, mixed) = match &c.embeddings {
        Some(p) => measured_conditions(&formats::read_embeddings(p)?, &need_pool(&c.pool)?, &setup.classes)?,
        None => synthetic_conditions(c, &setup, seed)?,
    };
    let protos = clean_prototypes(&clean)?;
    let mut contraction = Vec::new();
    let mut distribution = Vec::new();
    for class in &setup.classes {
        let cc: Vec<Labeled> = clean.iter().filter(|(k, _)| k == class).cloned().collect();
        let mm: Vec<Labeled> = mixed.iter().filter(|(k, _)| k == class).cloned().collect();
        if cc.is_empty() || mm.is_empty() {
            continue;
        }
        contraction.push((class.clone(), contraction_report(&cc, &mm, &protos)?));
        let x = stride_sample(&vectors(&cc), c.mmd_max);
        let y = stride_sample(&vectors(&mm), c.mmd_max);
        distribution.push((format!("{class}: clean vs mixed"), mmd_rbf(&x, &y, c.bandwidth)?));
    }
    contraction.push(("all".to_string(), contraction_report(&clean, &mixed, &protos)?));
    let x = stride_sample(&vectors(&clean), c.mmd_max);
    let y = stride_sample(&vectors(&mixed), c.mmd_max);
    distribution.push(("all: clean vs mixed".to_string(), mmd_rbf(&x, &y, c.bandwidth)?));
    if let (Some(p), Some(r)) = (&c.embeddings, &c.reference) {
        let a = formats::read_embeddings(p)?;
        let b = formats::read_embeddings(r)?;
        let va: Vec<Vec<f64>> = a.clips().map(|k| a.global_f64(k)).collect::<Result<_, _>>()?;
        let vb: Vec<Vec<f64>> = b.clips().map(|k| b.global_f64(k)).collect::<Result<_, _>>()?;
        let label = format!("{} vs {}", set_name(p), set_name(r));
        distribution.push((label, mmd_rbf(&stride_sample(&va, c.mmd_max), &stride_sample(&vb, c.mmd_max), c.bandwidth)?));
    }
    reports::write_geometry_csv(&out.join("geometry.csv"), &contraction)?;
    reports::write_distribution_csv(&out.join("distribution.csv"), &distribution)?;
    reports::write_json(
        &out.join("geometry.json"),
        &GeometryOutput {
            contraction: contraction.iter().map(|(k, v)| (k.as_str(), v)).collect(),
            distribution: distribution.iter().map(|(k, v)| (k.as_str(), v)).collect(),
        },
    )
}

// ---------------------------------------------------------------- synth

pub fn synth(c: &SynthConfig, seed: u64, out: &Path) -> Result<()> {
    let table = c.catalog.table()?;
    let splits = c.catalog.splits(&table)?;
    let classes: BTreeSet<String> =
        if c.all_classes { table.classes().map(String::from).collect() } else { splits.get(c.catalog.split).clone() };
    let b = SyntheticBenchmark::build(ContractionParams { seed, ..c.generator }, &table, &classes, c.per_cell)?;
    formats::write_embeddings(&out.join("embeddings.tsv"), &b.embeddings)?;
    formats::write_pool(&out.join("pool.tsv"), &b.pool.items().collect::<Vec<_>>())?;
    formats::write_splits(&out.join("splits.tsv"), &splits)
}

// ---------------------------------------------------------------- sweep

pub fn sweep(c: &SweepConfig, seed: u64, par: &Parallel, out: &Path) -> Result<Vec<SweepPoint>> {
    let setup = Setup::new(&c.catalog)?;
    let ood_mode = c.episode.modes.iter().copied().find(|m| *m != Mode::Iid).unwrap_or(Mode::Ood);
    let s = SweepSetup {
        table: &setup.table,
        classes: &setup.classes,
        params: ContractionParams { seed, ..c.generator },
        spec: c.episode.spec(ood_mode, seed),
        ood_mode,
        episodes: c.episode.episodes,
        per_cell: c.per_cell,
    };
    let points = s.sweep(par, &c.head, &c.strengths)?;
    reports::write_sweep_csv(&out.join("sweep.csv"), &points)?;
    reports::write_json(&out.join("sweep.json"), &points)?;
    Ok(points)
}
